#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sphereflow/flowpath.hpp"
#include "sphereflow/velocitynet.hpp"

namespace sfm {

struct TrainConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.0;
  double grad_clip = 0.0;  // max global norm, 0 disables
  int batch_size = 256;
  int64_t total_steps = 0;
  double ema_decay = 0.9999;
  uint64_t seed = 0;
  TimeDist time_dist = TimeDist::uniform;
  TimeConvention convention = TimeConvention::data_at_1;
  int threads = 0;  // 0 picks the hardware count
  int64_t checkpoint_every = 1000;
  int64_t warmup_steps = 0;  // 0 disables the linear warmup

  void validate() const;
};

struct TrainState {
  int64_t step = 0;
  std::vector<double> m;
  std::vector<double> v;
  Rng rng{0};
  double loss_avg = 0.0;
};

struct StepStats {
  double loss = 0.0;
  double grad_norm = 0.0;  // global norm before any clipping
};

struct TrainResult {
  std::string checkpoint_path;
  std::string curve_path;
};

namespace train {

/// Fresh optimizer state for `net`. The rng stream is derived from cfg.seed
/// and is the only randomness the training loop consumes.
TrainState init_state(const VelocityNet& net, const TrainConfig& cfg);

TrainState state_from_checkpoint(const Checkpoint& ck);

/// One decoupled-weight-decay adaptive-moment update. `step` counts updates
/// already applied, so bias correction uses step + 1.
void adamw_update(std::vector<double>& params, std::vector<double>& m, std::vector<double>& v,
                  const std::vector<double>& grad, int64_t step, double lr, double beta1,
                  double beta2, double weight_decay);

/// Scales `grad` so its global norm is at most max_norm (no-op when
/// max_norm <= 0). Returns the norm before clipping.
double clip_gradient(std::vector<double>& grad, double max_norm);

/// Single optimization step on an already-assembled data batch: path sampling,
/// loss/gradient, clip, parameter update, EMA. Labels empty when the net is
/// unconditional.
StepStats train_step(VelocityNet& net, TrainState& state, const std::vector<LatentField>& batch,
                     const std::vector<int>& labels, const TrainConfig& cfg);

/// Full loop from state.step to cfg.total_steps over a fixed dataset.
/// Batches are drawn uniformly with replacement from state.rng. Writes
/// `loss_curve.csv` (step,loss,grad_norm,wall_ms) and a checkpoint every
/// cfg.checkpoint_every steps plus one at the final step, all under out_dir.
TrainResult run_training(VelocityNet& net, TrainState& state,
                         const std::vector<LatentField>& dataset, const std::vector<int>& labels,
                         const TrainConfig& cfg, const std::string& out_dir);

}  // namespace train
}  // namespace sfm
