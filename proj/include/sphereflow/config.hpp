#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "sphereflow/alignlab.hpp"
#include "sphereflow/datasets.hpp"
#include "sphereflow/sampler.hpp"
#include "sphereflow/trainer.hpp"

namespace sfm {

namespace cfg {

// Reference defaults. These are fixed by the training recipe this toolkit
// follows; changing one changes the recipe, not just a knob.
inline constexpr double kDefaultLr = 2e-4;
inline constexpr double kDefaultBeta2 = 0.95;
inline constexpr double kDefaultEmaDecay = 0.9999;
inline constexpr int kDefaultSampleSteps = 50;
inline constexpr double kDefaultNoiseTau = 0.8;
inline constexpr double kDefaultLambdaCos = 0.5;
inline constexpr double kDefaultLambdaL1 = 1.0;
inline constexpr double kDefaultLambdaLpips = 1.0;
inline constexpr double kDefaultLambdaAdv = 0.5;

// Artifact choices the recipe leaves open, collected here so the full
// default story is in one place:
//   manifold.radius    0 (auto: sqrt(dim), least norm distortion when
//                      projecting a Gaussian prior)
//   flow.shift         1 (uniform integration grid)
//   flow.time_dist     uniform
//   net.hidden         128,128
//   net.time_feat_dim  64
//   train.batch_size   256
//   train.beta1        0.9
//   train.warmup_steps 0 (linear warmup available, off by default)

}  // namespace cfg

/// Every tunable reachable from a config file or the command line, grouped by
/// the section names of the file format. Values are raw; derived objects
/// (NetSpec, TrainConfig, GenSpec, ...) are built by the cfg:: functions
/// below so cross-field wiring lives in one place.
struct RunConfig {
  struct Run {
    uint64_t seed = 0;
    int threads = 0;  // 0 picks the hardware count
  } run;

  struct Manifold {
    int patches = 1;
    int dim = 3;
    double radius = 0.0;  // 0 resolves to sqrt(dim)
  } manifold;

  struct Flow {
    SchedulerKind scheduler = SchedulerKind::linear;
    TimeDist time_dist = TimeDist::uniform;
    double shift = 1.0;
    bool reverse_time = false;  // true puts data at t=0 and integrates 1 -> 0
  } flow;

  struct Net {
    std::vector<int> hidden = {128, 128};
    Activation act = Activation::smooth_gated;
    int time_feat_dim = 64;
    int n_classes = 0;  // 0 trains unconditionally even on labeled data
    int class_embed_dim = 16;
  } net;

  struct Train {
    double lr = cfg::kDefaultLr;
    double beta1 = 0.9;
    double beta2 = cfg::kDefaultBeta2;
    double weight_decay = 0.0;
    double grad_clip = 0.0;  // 0 disables
    int batch_size = 256;
    int64_t total_steps = 1000;
    double ema_decay = cfg::kDefaultEmaDecay;
    int64_t checkpoint_every = 1000;
    int64_t warmup_steps = 0;
  } train;

  struct Sample {
    int steps = cfg::kDefaultSampleSteps;
    SampleMethod method = SampleMethod::euler_projection;
    bool use_ema = true;
    int label = -1;  // -1 samples unconditionally
    int64_t n = 4096;
  } sample;

  struct Data {
    data::GenKind kind = data::GenKind::vmf_mixture;
    int64_t n = 10000;
    int components = 2;
    double kappa = 20.0;
    std::vector<double> weights;  // empty = equal weights
    int resolution = 4;           // checkerboard only
  } data;

  struct Eval {
    double bandwidth = 0.0;  // 0 picks the median heuristic
  } eval;

  /// base_seed and threads are stamped from [run] by conflict_config().
  ConflictConfig conflict;

  struct Probe {
    std::string kind = "linear";  // "linear" or "direction" decoder stub
    std::vector<double> alphas = {0.25, 0.5, 1.0, 2.0, 4.0};
    int n = 8;  // probe feature rows
    int feature_dim = 16;
    int out_dim = 32;
  } probe;

  struct Check {
    std::string suite;         // empty runs every suite; comma list otherwise
    std::string inject_fault;  // test hook: named suite reports a forced failure
  } check;

  struct Paths {
    std::string dataset;
    std::string out_dir = "out";
    std::string checkpoint;
    std::string resume;
    std::string samples;
    std::string gen;
    std::string ref;
    std::string report;
    std::string conflict_csv = "conflict.csv";
    std::string probe_csv = "probe.csv";
  } paths;
};

namespace cfg {

/// Layered load: defaults, then file values, then explicit sets, later layers
/// winning. `keys` records every key a file or a set touched, so commands can
/// tell an explicit value from a default.
struct ConfigStack {
  RunConfig config;
  std::set<std::string> keys;

  void load_file(const std::string& path);
  void load_text(const std::string& text, const std::string& origin);
  void set(const std::string& key, const std::string& value);
  bool is_set(const std::string& key) const { return keys.count(key) > 0; }
};

/// All known keys ("section.key") in canonical render order.
const std::vector<std::string>& known_keys();

/// Config errors name the key, for unknown keys and unparseable values alike.
void set_key(RunConfig& c, const std::string& key, const std::string& value);

std::string get_key(const RunConfig& c, const std::string& key);

/// Canonical text form; parsing it back reproduces the config exactly, and
/// rendering again reproduces the bytes.
std::string render(const RunConfig& c);

/// Whole-config validation, including the derived sub-configs. Errors name
/// the offending key where one exists.
void validate(const RunConfig& c);

double resolved_radius(const RunConfig& c);
TimeConvention convention(const RunConfig& c);
NetSpec net_spec(const RunConfig& c);
TrainConfig train_config(const RunConfig& c);
SampleConfig sample_config(const RunConfig& c);

/// Mixture means are placed deterministically and independently of the data
/// seed: one component sits on the last axis, two sit antipodally on it,
/// three or more take fixed pseudorandom directions. Datasets generated with
/// different seeds therefore share the same target distribution.
data::GenSpec gen_spec(const RunConfig& c);

ConflictConfig conflict_config(const RunConfig& c);

/// Deterministic manifest body: the command name, the effective config, then
/// one `key = value` line per extra pair, in the given order. No timestamps;
/// identical runs produce identical manifests.
std::string manifest_text(const std::string& command, const RunConfig& c,
                          const std::vector<std::pair<std::string, std::string>>& extra);

}  // namespace cfg
}  // namespace sfm
