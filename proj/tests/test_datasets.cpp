#include <algorithm>
#include <cmath>
#include <cstdio>
#include <vector>

#include "doctest.h"
#include "sphereflow/datasets.hpp"
#include "sphereflow/ioutil.hpp"

using namespace sfm;

namespace {

constexpr double kPi = 3.14159265358979323846;

template <class F>
bool throws_code(F&& f, ErrorCode want) {
  try {
    f();
  } catch (const Error& e) {
    return e.code() == want;
  }
  return false;
}

// Plain rejection sampler for the vMF cosine marginal: uniform sphere
// proposals accepted with probability exp(kappa*(w-1)). Slow but trivially
// correct, which makes it the reference for the production sampler.
double oracle_vmf_cos(Rng& rng, double kappa, int dim) {
  std::vector<double> x(static_cast<size_t>(dim));
  for (;;) {
    double s2 = 0.0;
    for (double& v : x) {
      v = rng.normal();
      s2 += v * v;
    }
    if (s2 == 0.0) continue;
    const double w = x[0] / std::sqrt(s2);  // cosine to an arbitrary fixed mean
    if (rng.uniform() < std::exp(kappa * (w - 1.0))) return w;
  }
}

double ks_distance(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    if (a[i] <= b[j])
      ++i;
    else
      ++j;
    const double fa = static_cast<double>(i) / static_cast<double>(a.size());
    const double fb = static_cast<double>(j) / static_cast<double>(b.size());
    d = std::max(d, std::abs(fa - fb));
  }
  return d;
}

long double patch_norm_ext(const double* p, int c) {
  long double s = 0.0L;
  for (int j = 0; j < c; ++j) s += static_cast<long double>(p[j]) * p[j];
  return sqrtl(s);
}

data::VmfComponent comp(std::vector<double> mean, double kappa, double weight) {
  data::VmfComponent c;
  c.mean = std::move(mean);
  c.kappa = kappa;
  c.weight = weight;
  return c;
}

}  // namespace

TEST_CASE("spec validation rejects malformed mixtures") {
  data::GenSpec spec;
  spec.kind = data::GenKind::vmf_mixture;
  spec.n = 10;
  spec.dim = 3;
  CHECK(throws_code([&] { spec.validate(); }, ErrorCode::Config));  // no components
  spec.components = {comp({0.0, 0.0, 1.0}, 5.0, 0.5)};
  CHECK(throws_code([&] { spec.validate(); }, ErrorCode::Config));  // weights sum to 0.5
  spec.components = {comp({0.0, 0.0, 2.0}, 5.0, 1.0)};
  CHECK(throws_code([&] { spec.validate(); }, ErrorCode::Config));  // non-unit mean
  spec.components = {comp({0.0, 0.0, 1.0}, -1.0, 1.0)};
  CHECK(throws_code([&] { spec.validate(); }, ErrorCode::Config));  // negative kappa
  spec.components = {comp({0.0, 0.0, 1.0}, 5.0, 1.0)};
  spec.validate();

  data::GenSpec board;
  board.kind = data::GenKind::checkerboard_s2;
  board.n = 10;
  board.dim = 4;
  board.resolution = 2;
  CHECK(throws_code([&] { board.validate(); }, ErrorCode::Config));  // dim must be 3
  board.dim = 3;
  board.validate();
  CHECK(board.n_classes() == 4);
}

TEST_CASE("kappa zero gives a uniform sphere law") {
  data::SphereDataset ds =
      data::gen_vmf_mixture(100000, 1, 3, 1.0, {comp({0.0, 0.0, 1.0}, 0.0, 1.0)}, 901, 4);
  double mean[3] = {0.0, 0.0, 0.0};
  for (const LatentField& f : ds.samples)
    for (int j = 0; j < 3; ++j) mean[j] += f.data.at(0, j);
  double resultant = 0.0;
  for (double m : mean) resultant += (m / 1e5) * (m / 1e5);
  resultant = std::sqrt(resultant);
  CHECK(resultant <= 0.02);
}

TEST_CASE("kappa 50 concentrates about the mean direction") {
  const std::vector<double> mu = {1.0 / std::sqrt(3.0), 1.0 / std::sqrt(3.0),
                                  -1.0 / std::sqrt(3.0)};
  data::SphereDataset ds = data::gen_vmf_mixture(100000, 1, 3, 1.0, {comp(mu, 50.0, 1.0)}, 902, 4);
  double mean[3] = {0.0, 0.0, 0.0};
  for (const LatentField& f : ds.samples)
    for (int j = 0; j < 3; ++j) mean[j] += f.data.at(0, j) / 1e5;
  const double resultant = std::sqrt(mean[0] * mean[0] + mean[1] * mean[1] + mean[2] * mean[2]);
  double along = 0.0;
  for (int j = 0; j < 3; ++j) along += mean[j] * mu[static_cast<size_t>(j)];
  const double angle = std::acos(std::clamp(along / resultant, -1.0, 1.0));
  CHECK(angle <= kPi / 180.0);
  // coth(50) - 1/50 = 0.98
  CHECK(std::abs(resultant - 0.98) <= 0.02 * 0.98);
}

TEST_CASE("cosine marginal mean matches the analytic resultant at three kappas") {
  // A(kappa) = coth(kappa) - 1/kappa on S^2, precomputed in extended precision.
  const struct {
    double kappa, resultant;
  } cases[] = {{0.5, 0.16395341373865285}, {5.0, 0.80009080398201937}, {50.0, 0.98}};
  uint64_t seed = 903;
  for (const auto& c : cases) {
    Rng rng(seed++);
    const int n = 100000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const double w = data::vmf_cos_draw(rng, c.kappa, 3);
      sum += w;
      sum2 += w * w;
    }
    const double mean = sum / n;
    const double sd = std::sqrt(std::max(0.0, sum2 / n - mean * mean));
    CHECK(std::abs(mean - c.resultant) <= 3.0 * sd / std::sqrt(static_cast<double>(n)));
  }
}

TEST_CASE("cosine marginal matches Bessel-ratio means off S^2") {
  // I1(2)/I0(2) on the circle and I_2.5(8)/I_1.5(8) on S^4.
  const struct {
    double kappa, resultant;
    int dim;
  } cases[] = {{2.0, 0.69777465796400795, 2}, {8.0, 0.76785684888774941, 5}};
  uint64_t seed = 905;
  for (const auto& c : cases) {
    Rng rng(seed++);
    const int n = 100000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const double w = data::vmf_cos_draw(rng, c.kappa, c.dim);
      sum += w;
      sum2 += w * w;
    }
    const double mean = sum / n;
    const double sd = std::sqrt(std::max(0.0, sum2 / n - mean * mean));
    CHECK(std::abs(mean - c.resultant) <= 3.0 * sd / std::sqrt(static_cast<double>(n)));
  }
}

TEST_CASE("cosine marginal agrees with a plain rejection oracle") {
  const struct {
    double kappa;
    int dim;
  } cases[] = {{2.0, 3}, {8.0, 5}};
  uint64_t seed = 907;
  for (const auto& c : cases) {
    Rng rng_o(seed++);
    Rng rng_s(seed++);
    std::vector<double> oracle(1000), sampled(10000);
    for (double& w : oracle) w = oracle_vmf_cos(rng_o, c.kappa, c.dim);
    for (double& w : sampled) w = data::vmf_cos_draw(rng_s, c.kappa, c.dim);
    // 0.065 is the two-sample KS critical value at alpha=0.001 for
    // n=1000 vs m=10000; a little headroom on top.
    CHECK(ks_distance(oracle, sampled) < 0.08);
  }
}

TEST_CASE("mixture datasets are deterministic and thread-invariant") {
  const std::vector<data::VmfComponent> comps = {comp({0.0, 0.0, 1.0}, 20.0, 0.3),
                                                 comp({0.0, 0.0, -1.0}, 20.0, 0.7)};
  data::SphereDataset a = data::gen_vmf_mixture(200, 2, 3, 2.0, comps, 910, 1);
  data::SphereDataset b = data::gen_vmf_mixture(200, 2, 3, 2.0, comps, 910, 4);
  REQUIRE(a.samples.size() == b.samples.size());
  for (size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(a.samples[i].data == b.samples[i].data);
    CHECK(a.labels[i] == b.labels[i]);
  }
}

TEST_CASE("mixture labels follow the component weights") {
  const std::vector<data::VmfComponent> comps = {comp({0.0, 0.0, 1.0}, 5.0, 0.3),
                                                 comp({0.0, 0.0, -1.0}, 5.0, 0.7)};
  data::SphereDataset ds = data::gen_vmf_mixture(10000, 1, 3, 1.0, comps, 911, 4);
  int count0 = 0;
  for (int label : ds.labels) {
    CHECK(label >= 0);
    CHECK(label < 2);
    if (label == 0) ++count0;
  }
  CHECK(std::abs(count0 - 3000) <= 150);  // 3.3 sigma for Binomial(1e4, 0.3)
}

TEST_CASE("mixture samples land exactly on the manifold") {
  const std::vector<data::VmfComponent> comps = {comp({1.0, 0.0, 0.0, 0.0}, 7.5, 1.0)};
  data::SphereDataset ds = data::gen_vmf_mixture(500, 3, 4, 1.7, comps, 912, 2);
  long double worst = 0.0L;
  for (const LatentField& f : ds.samples)
    for (int p = 0; p < 3; ++p)
      worst = std::max(worst, fabsl(patch_norm_ext(f.data.row(p), 4) - 1.7L));
  CHECK(static_cast<double>(worst) <= 1e-12 * 1.7);
}

TEST_CASE("checkerboard keeps only even-parity cells") {
  data::SphereDataset ds = data::gen_checkerboard_s2(2000, 3, 1.0, 920, 4);
  long double worst = 0.0L;
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    const double* p = ds.samples[i].data.row(0);
    worst = std::max(worst, fabsl(patch_norm_ext(p, 3) - 1.0L));
    int label = -1;
    CHECK(data::checkerboard_accepts(p, 1.0, 3, &label));
    CHECK(label == ds.labels[i]);
    CHECK(label >= 0);
    CHECK(label < 9);
  }
  CHECK(static_cast<double>(worst) <= 1e-12);
}

TEST_CASE("resolution one is the positive-azimuth hemisphere") {
  data::SphereDataset ds = data::gen_checkerboard_s2(1500, 1, 1.0, 921, 2);
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    const double* p = ds.samples[i].data.row(0);
    double phi = std::atan2(p[1], p[0]);
    if (phi < 0.0) phi += 2.0 * kPi;
    CHECK(phi < kPi);
    CHECK(ds.labels[i] == 0);
  }
}

TEST_CASE("checkerboard acceptance rate is one half") {
  Rng rng(922);
  const int n = 100000;
  int accepted = 0;
  double xyz[3];
  for (int i = 0; i < n; ++i) {
    double s2;
    do {
      s2 = 0.0;
      for (double& v : xyz) {
        v = rng.normal();
        s2 += v * v;
      }
    } while (s2 == 0.0);
    const double inv = 1.0 / std::sqrt(s2);
    for (double& v : xyz) v *= inv;
    if (data::checkerboard_accepts(xyz, 1.0, 3, nullptr)) ++accepted;
  }
  CHECK(std::abs(accepted / static_cast<double>(n) - 0.5) <= 0.005);
}

TEST_CASE("dataset files round-trip bit-exactly") {
  const std::vector<data::VmfComponent> comps = {comp({0.0, 1.0, 0.0}, 12.0, 0.25),
                                                 comp({0.0, -1.0, 0.0}, 3.0, 0.75)};
  data::SphereDataset ds = data::gen_vmf_mixture(50, 2, 3, 1.5, comps, 930, 2);
  const char* path = "dataset_roundtrip_test.bin";
  data::save_dataset(ds, path);
  data::SphereDataset back = data::load_dataset(path);

  CHECK(back.spec.kind == ds.spec.kind);
  CHECK(back.spec.n == 50);
  CHECK(back.spec.n_patches == 2);
  CHECK(back.spec.dim == 3);
  CHECK(back.spec.radius == 1.5);
  CHECK(back.spec.seed == 930);
  REQUIRE(back.spec.components.size() == 2);
  for (size_t k = 0; k < 2; ++k) {
    CHECK(back.spec.components[k].mean == ds.spec.components[k].mean);
    CHECK(back.spec.components[k].kappa == ds.spec.components[k].kappa);
    CHECK(back.spec.components[k].weight == ds.spec.components[k].weight);
  }
  REQUIRE(back.samples.size() == ds.samples.size());
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    CHECK(back.samples[i].data == ds.samples[i].data);
    CHECK(back.samples[i].radius == 1.5);
  }
  CHECK(back.labels == ds.labels);

  // Re-saving reproduces the file byte for byte.
  data::save_dataset(back, "dataset_roundtrip_test2.bin");
  CHECK(io::read_file(path) == io::read_file("dataset_roundtrip_test2.bin"));
  std::remove("dataset_roundtrip_test2.bin");
  std::remove(path);
}

TEST_CASE("checkerboard files round-trip too") {
  data::SphereDataset ds = data::gen_checkerboard_s2(40, 2, 1.0, 931, 1);
  const char* path = "dataset_board_test.bin";
  data::save_dataset(ds, path);
  data::SphereDataset back = data::load_dataset(path);
  CHECK(back.spec.kind == data::GenKind::checkerboard_s2);
  CHECK(back.spec.resolution == 2);
  CHECK(back.labels == ds.labels);
  for (size_t i = 0; i < ds.samples.size(); ++i)
    CHECK(back.samples[i].data == ds.samples[i].data);
  std::remove(path);
}

TEST_CASE("dataset loader rejects corruption and version skew") {
  data::SphereDataset ds = data::gen_checkerboard_s2(10, 1, 1.0, 932, 1);
  const char* path = "dataset_corrupt_test.bin";
  data::save_dataset(ds, path);
  std::string bytes = io::read_file(path);

  io::write_file(path, bytes.substr(0, bytes.size() - 5));
  CHECK(throws_code([&] { data::load_dataset(path); }, ErrorCode::ChecksumMismatch));

  std::string skew = bytes;
  skew.replace(skew.find("SFMDATA 1"), 9, "SFMDATA 2");
  io::write_file(path, skew);
  try {
    data::load_dataset(path);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::FormatVersionMismatch);
    CHECK(std::string(e.what()).find("2") != std::string::npos);
    CHECK(std::string(e.what()).find("1") != std::string::npos);
  }
  std::remove(path);
}
