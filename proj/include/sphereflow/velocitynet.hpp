#pragma once

#include "sphereflow/flowpath.hpp"

namespace sfm {

enum class Activation { smooth_gated, rectified };

/// Architecture descriptor for the velocity MLP. The input vector is the
/// flattened N*C field, followed by sinusoidal time features, followed by a
/// learned class embedding when n_classes > 0.
struct NetSpec {
  int n_patches = 1;
  int dim = 3;
  double radius = 1.0;
  std::vector<int> hidden = {128, 128};
  Activation act = Activation::smooth_gated;
  int time_feat_dim = 64;  // even; sin/cos pairs over a geometric frequency ladder
  int n_classes = 0;       // 0 disables class conditioning
  int class_embed_dim = 16;

  int field_dim() const { return n_patches * dim; }
  int embed_dim() const { return n_classes > 0 ? class_embed_dim : 0; }
  int input_dim() const { return field_dim() + time_feat_dim + embed_dim(); }

  /// input, hidden..., output sizes of the weight layers.
  std::vector<int> layer_sizes() const;
  int64_t param_count() const;
  void validate() const;  // Config errors
};

struct VelocityNet {
  NetSpec spec;
  std::vector<double> params;
  std::vector<double> ema_params;
  double ema_decay = 0.9999;
};

struct GradientReport {
  double loss = 0.0;
  std::vector<double> grad;
};

namespace net {

/// Sinusoidal featurization of the scalar time. dim/2 frequencies spaced
/// geometrically from 1 to 1e4; out[2i] = sin(f_i t), out[2i+1] = cos(f_i t).
void time_features(double t, int dim, double* out);

/// Hidden weights ~ N(0, 2/fan_in), hidden biases 0, output head all zero
/// (so the initial predicted velocity vanishes), class embeddings ~ N(0,1).
/// EMA starts as a copy of params.
VelocityNet init_params(const NetSpec& spec, double ema_decay, Rng& rng);

/// Raw network output as an N x C array. Not tangent; callers project.
/// label must be -1 for unconditional nets, in [0, n_classes) otherwise.
Array2D forward(const VelocityNet& net, const LatentField& x, double t, int label = -1,
                bool use_ema = false);

/// Mean over the batch of rfm_loss(tangent_project(forward(x_t, t), x_t), u_t)
/// and its exact reverse-mode gradient. Per-sample contributions are combined
/// with a fixed pairwise tree, so the result does not depend on `threads`.
GradientReport loss_and_grad(const VelocityNet& net, const std::vector<PathSample>& batch,
                             const std::vector<int>& labels = {}, int threads = 1);

/// ema <- decay*ema + (1-decay)*params, elementwise.
void ema_update(VelocityNet& net);

// Stable names used by the file formats and the CLI.
const char* act_name(Activation a);
Activation act_from_name(const std::string& s);
const char* conv_name(TimeConvention c);
TimeConvention conv_from_name(const std::string& s);

}  // namespace net

/// On-disk model snapshot. The training block (moments, rng, loss stat) is
/// present only in checkpoints written mid-training; sampling needs only the
/// network itself.
struct Checkpoint {
  VelocityNet net;
  TimeConvention convention = TimeConvention::data_at_1;
  int64_t step = 0;
  bool has_train_state = false;
  std::vector<double> opt_m;  // first moments
  std::vector<double> opt_v;  // second moments
  std::string rng_state;
  double loss_avg = 0.0;
};

namespace net {

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace net
}  // namespace sfm
