#include "sphereflow/sampler.hpp"

#include <cmath>

#include "sphereflow/ioutil.hpp"

namespace sfm {

void SampleConfig::validate() const {
  if (steps < 1) fail(ErrorCode::Config, "SampleConfig: steps must be >= 1");
  if (!(shift > 0.0)) fail(ErrorCode::Config, "SampleConfig: shift must be positive");
}

namespace sampler {

namespace {

constexpr double kTangentSafety = 1e-10;
constexpr const char* kSampMagic = "SFMSAMP";
constexpr int kSampVersion = 1;

std::string hash_hex(uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

// One integrator step on every patch. The velocity prediction is projected to
// the tangent space, checked against the radial-leak budget, scaled by dt,
// and applied either as a chord-plus-renormalize (euler) or an exact rotation
// (rodrigues). Patches with an exactly zero step stay untouched.
void advance(LatentField& x, const Array2D& v, double dt, SampleMethod method, int step_index) {
  TangentField tan = geom::tangent_project(v, x);
  const int n = x.data.rows, c = x.data.cols;
  const double r = x.radius;
  for (int p = 0; p < n; ++p) {
    const double* xp = x.data.row(p);
    double* vp = tan.data.row(p);
    const double vnorm = geom::patch_norm(vp, c);
    if (vnorm > 0.0 && std::abs(geom::patch_dot(vp, xp, c)) > kTangentSafety * r * vnorm)
      fail(ErrorCode::NotTangent,
           "sampler: radial leak above budget at step " + std::to_string(step_index));
    for (int j = 0; j < c; ++j) vp[j] *= dt;
  }
  if (method == SampleMethod::euler_projection) {
    for (int p = 0; p < n; ++p) {
      double* xp = x.data.row(p);
      const double* vp = tan.data.row(p);
      bool moved = false;
      for (int j = 0; j < c; ++j)
        if (vp[j] != 0.0) moved = true;
      if (!moved) continue;
      double s2 = 0.0;
      for (int j = 0; j < c; ++j) {
        xp[j] += vp[j];
        s2 += xp[j] * xp[j];
      }
      if (s2 <= geom::kEpsZero * geom::kEpsZero)
        fail(ErrorCode::ZeroPatch,
             "sampler: update collapsed a patch at step " + std::to_string(step_index));
      const double scale = r / std::sqrt(s2);
      for (int j = 0; j < c; ++j) xp[j] *= scale;
    }
  } else {
    tan.base = x;
    x = geom::exp_map(x, tan);
  }
  if (!all_finite(x.data.v.data(), x.data.v.size()))
    fail(ErrorCode::NonFinite, "sampler: non-finite state at step " + std::to_string(step_index));
}

Trajectory run(const VelocityFn& field, const FieldShape& shape, const SampleConfig& cfg,
               SampleMethod method) {
  cfg.validate();
  const TimeSchedule sched = flow::time_schedule(
      cfg.steps, cfg.shift,
      cfg.convention == TimeConvention::data_at_1 ? TimeDirection::forward
                                                  : TimeDirection::reverse);
  const std::vector<double>& grid = sched.steps;

  Rng rng(cfg.seed);
  Trajectory traj;
  LatentField x = geom::sample_prior(shape.n_patches, shape.dim, shape.radius, rng);
  if (cfg.record) traj.states.emplace_back(grid.front(), x);

  for (int k = 0; k < cfg.steps; ++k) {
    const double t = grid[static_cast<size_t>(k)];
    const double dt = grid[static_cast<size_t>(k) + 1] - t;
    Array2D v = field(x, t, cfg.label);
    if (v.rows != shape.n_patches || v.cols != shape.dim)
      fail(ErrorCode::ShapeMismatch, "sampler: field returned " + std::to_string(v.rows) + "x" +
                                         std::to_string(v.cols) + ", expected " +
                                         std::to_string(shape.n_patches) + "x" +
                                         std::to_string(shape.dim));
    advance(x, v, dt, method, k);
    if (cfg.record) traj.states.emplace_back(grid[static_cast<size_t>(k) + 1], x);
  }
  traj.final_state = std::move(x);
  return traj;
}

}  // namespace

VelocityFn net_field(const VelocityNet& net, bool use_ema) {
  return [&net, use_ema](const LatentField& x, double t, int label) {
    return net::forward(net, x, t, label, use_ema);
  };
}

std::string checkpoint_hash(const VelocityNet& net) {
  std::string bytes;
  io::append_f64le(bytes, net.params.data(), net.params.size());
  io::append_f64le(bytes, net.ema_params.data(), net.ema_params.size());
  return hash_hex(fnv1a64(bytes.data(), bytes.size()));
}

std::string config_hash(const SampleConfig& cfg, const FieldShape& shape) {
  std::string s = std::to_string(cfg.steps) + '|' +
                  (cfg.method == SampleMethod::euler_projection ? "euler_projection"
                                                                : "rodrigues") +
                  '|' + format_double(cfg.shift) + '|' + (cfg.use_ema ? "ema" : "raw") + '|' +
                  std::to_string(cfg.label) + '|' + std::to_string(cfg.seed) + '|' +
                  net::conv_name(cfg.convention) + '|' + std::to_string(shape.n_patches) + '|' +
                  std::to_string(shape.dim) + '|' + format_double(shape.radius);
  return hash_hex(fnv1a64(s.data(), s.size()));
}

Trajectory sample_euler_projection(const VelocityFn& field, const FieldShape& shape,
                                   const SampleConfig& cfg) {
  return run(field, shape, cfg, SampleMethod::euler_projection);
}

Trajectory sample_rodrigues(const VelocityFn& field, const FieldShape& shape,
                            const SampleConfig& cfg) {
  return run(field, shape, cfg, SampleMethod::rodrigues);
}

Trajectory sample_path(const VelocityFn& field, const FieldShape& shape,
                       const SampleConfig& cfg) {
  return run(field, shape, cfg, cfg.method);
}

std::vector<LatentField> generate_batch(const VelocityNet& net, int64_t n,
                                        const SampleConfig& cfg, BatchManifest* manifest,
                                        int threads) {
  cfg.validate();
  if (n < 1) fail(ErrorCode::Config, "generate_batch: n must be >= 1");
  if (cfg.label >= net.spec.n_classes)
    fail(ErrorCode::UnknownClass, "generate_batch: label " + std::to_string(cfg.label) +
                                      " out of range for " + std::to_string(net.spec.n_classes) +
                                      " classes");
  const FieldShape shape{net.spec.n_patches, net.spec.dim, net.spec.radius};
  const VelocityFn field = net_field(net, cfg.use_ema);

  std::vector<LatentField> out(static_cast<size_t>(n));
  std::vector<uint64_t> seeds(static_cast<size_t>(n));
  parallel_for(n, resolve_threads(threads), [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) {
      SampleConfig one = cfg;
      one.seed = mix_seed(cfg.seed, static_cast<uint64_t>(i));
      one.record = false;
      seeds[static_cast<size_t>(i)] = one.seed;
      out[static_cast<size_t>(i)] = sample_path(field, shape, one).final_state;
    }
  });
  if (manifest) {
    manifest->config_hash = config_hash(cfg, shape);
    manifest->checkpoint_hash = checkpoint_hash(net);
    manifest->base_seed = cfg.seed;
    manifest->sample_seeds = std::move(seeds);
  }
  return out;
}

void save_samples(const std::string& path, const std::vector<LatentField>& samples,
                  TimeConvention convention, const std::string& checkpoint_hash) {
  if (samples.empty()) fail(ErrorCode::EmptyBatch, "save_samples: nothing to write");
  const LatentField& first = samples.front();
  io::TextHeader h;
  h.magic = kSampMagic;
  h.version = kSampVersion;
  h.set_i64("n", static_cast<int64_t>(samples.size()));
  h.set_i64("n_patches", first.data.rows);
  h.set_i64("dim", first.data.cols);
  h.set_f64("radius", first.radius);
  h.set("convention", net::conv_name(convention));
  h.set("checkpoint_hash", checkpoint_hash);

  std::string payload;
  payload.reserve(samples.size() * first.data.v.size() * 8);
  for (const LatentField& f : samples) {
    if (f.data.rows != first.data.rows || f.data.cols != first.data.cols ||
        f.radius != first.radius)
      fail(ErrorCode::ShapeMismatch, "save_samples: mixed shapes in batch");
    io::append_f64le(payload, f.data.v.data(), f.data.v.size());
  }
  io::write_with_checksum(path, h, payload);
}

std::vector<LatentField> load_samples(const std::string& path) {
  std::string payload;
  io::TextHeader h = io::read_with_checksum(path, kSampMagic, kSampVersion, &payload);
  const int64_t n = h.get_i64("n");
  const int n_patches = static_cast<int>(h.get_i64("n_patches"));
  const int dim = static_cast<int>(h.get_i64("dim"));
  const double radius = h.get_f64("radius");
  if (n < 1 || n_patches < 1 || dim < 2)
    fail(ErrorCode::Io, "load_samples: malformed header in " + path);
  const size_t field_vals = static_cast<size_t>(n_patches) * static_cast<size_t>(dim);
  if (payload.size() != static_cast<size_t>(n) * field_vals * 8)
    fail(ErrorCode::ChecksumMismatch,
         "load_samples: payload is " + std::to_string(payload.size()) + " bytes, expected " +
             std::to_string(static_cast<size_t>(n) * field_vals * 8));
  std::vector<LatentField> out;
  out.reserve(static_cast<size_t>(n));
  size_t off = 0;
  for (int64_t i = 0; i < n; ++i) {
    LatentField f;
    f.data = Array2D(n_patches, dim);
    f.radius = radius;
    io::read_f64le(payload, off, f.data.v.data(), field_vals);
    off += field_vals * 8;
    out.push_back(std::move(f));
  }
  return out;
}

void write_manifest(const std::string& path, const BatchManifest& manifest) {
  io::TextHeader h;
  h.magic = "SFMMANIFEST";
  h.version = 1;
  h.set("config_hash", manifest.config_hash);
  h.set("checkpoint_hash", manifest.checkpoint_hash);
  h.set("base_seed", std::to_string(manifest.base_seed));
  h.set_i64("n", static_cast<int64_t>(manifest.sample_seeds.size()));
  std::string body = io::serialize_header(h);
  for (size_t i = 0; i < manifest.sample_seeds.size(); ++i)
    body += "sample " + std::to_string(i) + " seed " +
            std::to_string(manifest.sample_seeds[i]) + "\n";
  io::write_file(path, body);
}

}  // namespace sampler
}  // namespace sfm
