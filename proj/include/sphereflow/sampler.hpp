#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sphereflow/flowpath.hpp"
#include "sphereflow/velocitynet.hpp"

namespace sfm {

enum class SampleMethod { euler_projection, rodrigues };

struct SampleConfig {
  int steps = 50;
  SampleMethod method = SampleMethod::euler_projection;
  double shift = 1.0;
  bool use_ema = true;
  int label = -1;  // -1 for unconditional
  uint64_t seed = 0;
  TimeConvention convention = TimeConvention::data_at_1;
  bool record = false;  // keep every intermediate state in the trajectory

  void validate() const;
};

struct Trajectory {
  std::vector<std::pair<double, LatentField>> states;  // populated when cfg.record
  LatentField final_state;
};

struct FieldShape {
  int n_patches = 1;
  int dim = 3;
  double radius = 1.0;
};

/// Velocity oracle: predicted velocity at (x, t) for an optional class label.
/// The prediction may have a radial component; samplers project it out.
using VelocityFn = std::function<Array2D(const LatentField&, double, int)>;

struct BatchManifest {
  std::string config_hash;
  std::string checkpoint_hash;
  uint64_t base_seed = 0;
  std::vector<uint64_t> sample_seeds;
};

namespace sampler {

VelocityFn net_field(const VelocityNet& net, bool use_ema);

/// Hash of the parameter vectors, identifying the checkpoint a batch came
/// from. Hex string.
std::string checkpoint_hash(const VelocityNet& net);

std::string config_hash(const SampleConfig& cfg, const FieldShape& shape);

Trajectory sample_euler_projection(const VelocityFn& field, const FieldShape& shape,
                                   const SampleConfig& cfg);

Trajectory sample_rodrigues(const VelocityFn& field, const FieldShape& shape,
                            const SampleConfig& cfg);

/// Dispatch on cfg.method.
Trajectory sample_path(const VelocityFn& field, const FieldShape& shape, const SampleConfig& cfg);

/// n independent trajectories with per-sample seeds mix_seed(cfg.seed, i),
/// identical for any thread count. The manifest records enough to reproduce
/// and audit the batch.
std::vector<LatentField> generate_batch(const VelocityNet& net, int64_t n,
                                        const SampleConfig& cfg, BatchManifest* manifest,
                                        int threads = 0);

void save_samples(const std::string& path, const std::vector<LatentField>& samples,
                  TimeConvention convention, const std::string& checkpoint_hash);

std::vector<LatentField> load_samples(const std::string& path);

void write_manifest(const std::string& path, const BatchManifest& manifest);

}  // namespace sampler
}  // namespace sfm
