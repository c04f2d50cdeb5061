#include "sphereflow/datasets.hpp"

#include <cmath>
#include <sstream>

#include "sphereflow/ioutil.hpp"

namespace sfm::data {

namespace {

constexpr double kPi = 3.14159265358979323846;

double gamma_draw(Rng& rng, double a) {
  if (a < 1.0) {
    // Boost to shape a+1, then correct with U^(1/a).
    double u;
    do {
      u = rng.uniform();
    } while (u == 0.0);
    return gamma_draw(rng, a + 1.0) * std::pow(u, 1.0 / a);
  }
  // Marsaglia-Tsang squeeze.
  const double d = a - 1.0 / 3.0;
  const double c = 1.0 / (3.0 * std::sqrt(d));
  for (;;) {
    double x = rng.normal();
    double t = 1.0 + c * x;
    if (t <= 0.0) continue;
    double v = t * t * t;
    double u = rng.uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

double beta_draw(Rng& rng, double a) {
  const double g1 = gamma_draw(rng, a);
  const double g2 = gamma_draw(rng, a);
  return g1 / (g1 + g2);
}

// Uniform direction in the orthogonal complement of mu (unit, length c).
void tangential_direction(Rng& rng, const double* mu, int c, double* out) {
  for (;;) {
    for (int j = 0; j < c; ++j) out[j] = rng.normal();
    double along = 0.0;
    for (int j = 0; j < c; ++j) along += out[j] * mu[j];
    double s2 = 0.0;
    for (int j = 0; j < c; ++j) {
      out[j] -= along * mu[j];
      s2 += out[j] * out[j];
    }
    if (s2 > 0.0) {
      const double inv = 1.0 / std::sqrt(s2);
      for (int j = 0; j < c; ++j) out[j] *= inv;
      return;
    }
  }
}

void vmf_patch(Rng& rng, const double* mu, double kappa, int c, double radius, double* out) {
  if (kappa == 0.0) {
    for (;;) {
      for (int j = 0; j < c; ++j) out[j] = rng.normal();
      double s2 = 0.0;
      for (int j = 0; j < c; ++j) s2 += out[j] * out[j];
      if (s2 > 0.0) {
        const double scale = radius / std::sqrt(s2);
        for (int j = 0; j < c; ++j) out[j] *= scale;
        return;
      }
    }
  }
  const double w = vmf_cos_draw(rng, kappa, c);
  std::vector<double> tang(static_cast<size_t>(c));
  tangential_direction(rng, mu, c, tang.data());
  const double sinw = std::sqrt(std::max(0.0, 1.0 - w * w));
  for (int j = 0; j < c; ++j) out[j] = radius * (w * mu[j] + sinw * tang[j]);
}

int component_draw(Rng& rng, const std::vector<VmfComponent>& comps) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (size_t k = 0; k < comps.size(); ++k) {
    acc += comps[k].weight;
    if (u < acc) return static_cast<int>(k);
  }
  return static_cast<int>(comps.size()) - 1;
}

std::vector<double> parse_doubles(const std::string& s) {
  std::vector<double> out;
  std::istringstream is(s);
  std::string tok;
  while (is >> tok) out.push_back(parse_double(tok));
  return out;
}

std::string join_doubles(const std::vector<double>& xs) {
  std::string out;
  for (size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ' ';
    out += format_double(xs[i]);
  }
  return out;
}

constexpr const char* kDataMagic = "SFMDATA";
constexpr int kDataVersion = 1;

}  // namespace

int GenSpec::n_classes() const {
  if (kind == GenKind::vmf_mixture) return static_cast<int>(components.size());
  return resolution * resolution;
}

void GenSpec::validate() const {
  if (n < 1) fail(ErrorCode::Config, "GenSpec: n must be >= 1");
  if (n_patches < 1 || dim < 2) fail(ErrorCode::Config, "GenSpec: need n_patches >= 1, dim >= 2");
  if (!(radius > 0.0)) fail(ErrorCode::Config, "GenSpec: radius must be positive");
  if (kind == GenKind::vmf_mixture) {
    if (components.empty()) fail(ErrorCode::Config, "GenSpec: vmf mixture needs components");
    double wsum = 0.0;
    for (const VmfComponent& comp : components) {
      if (comp.mean.size() != static_cast<size_t>(dim))
        fail(ErrorCode::Config, "GenSpec: component mean length " +
                                    std::to_string(comp.mean.size()) + " does not match dim " +
                                    std::to_string(dim));
      double s2 = 0.0;
      for (double m : comp.mean) s2 += m * m;
      if (std::abs(std::sqrt(s2) - 1.0) > 1e-9)
        fail(ErrorCode::Config, "GenSpec: component mean must be a unit vector");
      if (!(comp.kappa >= 0.0)) fail(ErrorCode::Config, "GenSpec: kappa must be >= 0");
      if (!(comp.weight >= 0.0)) fail(ErrorCode::Config, "GenSpec: weights must be >= 0");
      wsum += comp.weight;
    }
    if (std::abs(wsum - 1.0) > 1e-12)
      fail(ErrorCode::Config, "GenSpec: weights sum to " + format_double(wsum) + ", expected 1");
  } else {
    if (dim != 3 || n_patches != 1)
      fail(ErrorCode::Config, "GenSpec: checkerboard requires dim=3, n_patches=1");
    if (resolution < 1) fail(ErrorCode::Config, "GenSpec: resolution must be >= 1");
  }
}

double vmf_cos_draw(Rng& rng, double kappa, int dim) {
  if (!(kappa > 0.0)) fail(ErrorCode::OutOfRange, "vmf_cos_draw: kappa must be positive");
  if (dim < 2) fail(ErrorCode::OutOfRange, "vmf_cos_draw: dim must be >= 2");
  // Wood's rejection with a symmetric beta envelope.
  const double dm1 = static_cast<double>(dim - 1);
  const double b = dm1 / (2.0 * kappa + std::sqrt(4.0 * kappa * kappa + dm1 * dm1));
  const double x0 = (1.0 - b) / (1.0 + b);
  const double cthr = kappa * x0 + dm1 * std::log(1.0 - x0 * x0);
  for (;;) {
    const double z = beta_draw(rng, dm1 / 2.0);
    const double w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
    double u;
    do {
      u = rng.uniform();
    } while (u == 0.0);
    if (kappa * w + dm1 * std::log(1.0 - x0 * w) - cthr >= std::log(u)) return w;
  }
}

SphereDataset generate(const GenSpec& spec, int threads) {
  spec.validate();
  SphereDataset ds;
  ds.spec = spec;
  ds.samples.assign(static_cast<size_t>(spec.n), LatentField{});
  ds.labels.assign(static_cast<size_t>(spec.n), 0);
  parallel_for(spec.n, resolve_threads(threads), [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) {
      Rng rng(mix_seed(spec.seed, static_cast<uint64_t>(i)));
      LatentField& f = ds.samples[static_cast<size_t>(i)];
      f.data = Array2D(spec.n_patches, spec.dim);
      f.radius = spec.radius;
      if (spec.kind == GenKind::vmf_mixture) {
        const int k = component_draw(rng, spec.components);
        ds.labels[static_cast<size_t>(i)] = k;
        const VmfComponent& comp = spec.components[static_cast<size_t>(k)];
        for (int p = 0; p < spec.n_patches; ++p)
          vmf_patch(rng, comp.mean.data(), comp.kappa, spec.dim, spec.radius, f.data.row(p));
      } else {
        int label = 0;
        double xyz[3];
        for (;;) {
          double s2;
          do {
            s2 = 0.0;
            for (double& v : xyz) {
              v = rng.normal();
              s2 += v * v;
            }
          } while (s2 == 0.0);
          const double scale = spec.radius / std::sqrt(s2);
          for (double& v : xyz) v *= scale;
          if (checkerboard_accepts(xyz, spec.radius, spec.resolution, &label)) break;
        }
        ds.labels[static_cast<size_t>(i)] = label;
        for (int j = 0; j < 3; ++j) f.data.at(0, j) = xyz[j];
      }
    }
  });
  return ds;
}

SphereDataset gen_vmf_mixture(int64_t n, int n_patches, int dim, double radius,
                              const std::vector<VmfComponent>& components, uint64_t seed,
                              int threads) {
  GenSpec spec;
  spec.kind = GenKind::vmf_mixture;
  spec.n = n;
  spec.n_patches = n_patches;
  spec.dim = dim;
  spec.radius = radius;
  spec.seed = seed;
  spec.components = components;
  return generate(spec, threads);
}

SphereDataset gen_checkerboard_s2(int64_t n, int resolution, double radius, uint64_t seed,
                                  int threads) {
  GenSpec spec;
  spec.kind = GenKind::checkerboard_s2;
  spec.n = n;
  spec.n_patches = 1;
  spec.dim = 3;
  spec.radius = radius;
  spec.seed = seed;
  spec.resolution = resolution;
  return generate(spec, threads);
}

bool checkerboard_accepts(const double* xyz, double radius, int resolution, int* label) {
  const double theta = std::acos(std::clamp(xyz[2] / radius, -1.0, 1.0));
  double phi = std::atan2(xyz[1], xyz[0]);
  if (phi < 0.0) phi += 2.0 * kPi;
  int itheta = static_cast<int>(std::floor(theta * resolution / kPi));
  if (itheta >= resolution) itheta = resolution - 1;
  int iphi = static_cast<int>(std::floor(phi * resolution / kPi));
  if (iphi >= 2 * resolution) iphi = 2 * resolution - 1;
  if ((itheta + iphi) % 2 != 0) return false;
  // Enumerate the kept cells row by row: each theta band keeps `resolution`
  // of its 2*resolution azimuth cells, alternating with the band parity.
  if (label) *label = itheta * resolution + (iphi - (itheta % 2)) / 2;
  return true;
}

void save_dataset(const SphereDataset& ds, const std::string& path) {
  const GenSpec& spec = ds.spec;
  if (ds.samples.size() != static_cast<size_t>(spec.n) || ds.labels.size() != ds.samples.size())
    fail(ErrorCode::ShapeMismatch, "save_dataset: sample/label counts disagree with the spec");
  io::TextHeader h;
  h.magic = kDataMagic;
  h.version = kDataVersion;
  h.set("kind", spec.kind == GenKind::vmf_mixture ? "vmf_mixture" : "checkerboard_s2");
  h.set_i64("n", spec.n);
  h.set_i64("n_patches", spec.n_patches);
  h.set_i64("dim", spec.dim);
  h.set_f64("radius", spec.radius);
  h.set("seed", std::to_string(spec.seed));
  if (spec.kind == GenKind::vmf_mixture) {
    h.set_i64("n_components", static_cast<int64_t>(spec.components.size()));
    std::vector<double> weights, kappas, means;
    for (const VmfComponent& comp : spec.components) {
      weights.push_back(comp.weight);
      kappas.push_back(comp.kappa);
      means.insert(means.end(), comp.mean.begin(), comp.mean.end());
    }
    h.set("weights", join_doubles(weights));
    h.set("kappas", join_doubles(kappas));
    h.set("means", join_doubles(means));
  } else {
    h.set_i64("resolution", spec.resolution);
  }

  std::string payload;
  payload.reserve(static_cast<size_t>(spec.n) *
                  (static_cast<size_t>(spec.n_patches * spec.dim) * 8 + 4));
  for (const LatentField& f : ds.samples) {
    if (f.data.rows != spec.n_patches || f.data.cols != spec.dim || f.radius != spec.radius)
      fail(ErrorCode::ShapeMismatch, "save_dataset: sample shape disagrees with the spec");
    io::append_f64le(payload, f.data.v.data(), f.data.v.size());
  }
  std::vector<int32_t> labels(ds.labels.begin(), ds.labels.end());
  io::append_i32le(payload, labels.data(), labels.size());
  io::write_with_checksum(path, h, payload);
}

SphereDataset load_dataset(const std::string& path) {
  std::string payload;
  io::TextHeader h = io::read_with_checksum(path, kDataMagic, kDataVersion, &payload);

  GenSpec spec;
  const std::string kind = h.get("kind");
  if (kind == "vmf_mixture")
    spec.kind = GenKind::vmf_mixture;
  else if (kind == "checkerboard_s2")
    spec.kind = GenKind::checkerboard_s2;
  else
    fail(ErrorCode::Io, "load_dataset: unknown kind '" + kind + "' in " + path);
  spec.n = h.get_i64("n");
  spec.n_patches = static_cast<int>(h.get_i64("n_patches"));
  spec.dim = static_cast<int>(h.get_i64("dim"));
  spec.radius = h.get_f64("radius");
  spec.seed = static_cast<uint64_t>(std::stoull(h.get("seed")));
  if (spec.kind == GenKind::vmf_mixture) {
    const size_t n_comp = static_cast<size_t>(h.get_i64("n_components"));
    const std::vector<double> weights = parse_doubles(h.get("weights"));
    const std::vector<double> kappas = parse_doubles(h.get("kappas"));
    const std::vector<double> means = parse_doubles(h.get("means"));
    if (weights.size() != n_comp || kappas.size() != n_comp ||
        means.size() != n_comp * static_cast<size_t>(spec.dim))
      fail(ErrorCode::Io, "load_dataset: component arrays disagree with n_components in " + path);
    for (size_t k = 0; k < n_comp; ++k) {
      VmfComponent comp;
      comp.weight = weights[k];
      comp.kappa = kappas[k];
      comp.mean.assign(means.begin() + static_cast<int64_t>(k) * spec.dim,
                       means.begin() + static_cast<int64_t>(k + 1) * spec.dim);
      spec.components.push_back(std::move(comp));
    }
  } else {
    spec.resolution = static_cast<int>(h.get_i64("resolution"));
  }
  spec.validate();

  const size_t field_vals = static_cast<size_t>(spec.n_patches) * static_cast<size_t>(spec.dim);
  const size_t want = static_cast<size_t>(spec.n) * (field_vals * 8 + 4);
  if (payload.size() != want)
    fail(ErrorCode::ChecksumMismatch, "load_dataset: payload is " +
                                          std::to_string(payload.size()) + " bytes, expected " +
                                          std::to_string(want));

  SphereDataset ds;
  ds.spec = spec;
  size_t off = 0;
  for (int64_t i = 0; i < spec.n; ++i) {
    LatentField f;
    f.data = Array2D(spec.n_patches, spec.dim);
    f.radius = spec.radius;
    io::read_f64le(payload, off, f.data.v.data(), field_vals);
    off += field_vals * 8;
    ds.samples.push_back(std::move(f));
  }
  std::vector<int32_t> labels(static_cast<size_t>(spec.n));
  io::read_i32le(payload, off, labels.data(), labels.size());
  ds.labels.assign(labels.begin(), labels.end());
  const int n_classes = spec.n_classes();
  for (int label : ds.labels)
    if (label < 0 || label >= n_classes)
      fail(ErrorCode::Io, "load_dataset: label " + std::to_string(label) + " out of range in " + path);
  return ds;
}

}  // namespace sfm::data
