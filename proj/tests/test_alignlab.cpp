#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "sphereflow/alignlab.hpp"
#include "sphereflow/ioutil.hpp"

using namespace sfm;

namespace {

template <class F>
bool throws_code(F&& f, ErrorCode want) {
  try {
    f();
  } catch (const Error& e) {
    return e.code() == want;
  }
  return false;
}

struct TempDir {
  std::string path;
  explicit TempDir(const std::string& name) : path("align_test_" + name) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

FeaturePair random_pair(int n, int c, uint64_t seed) {
  Rng rng(seed);
  FeaturePair p;
  p.z_s = Array2D(n, c);
  p.z_t = Array2D(n, c);
  for (auto& x : p.z_s.v) x = rng.normal();
  for (auto& x : p.z_t.v) x = rng.normal();
  return p;
}

template <class LossFn>
Array2D fd_grad(LossFn loss, const FeaturePair& pair, double h) {
  Array2D g(pair.z_s.rows, pair.z_s.cols);
  for (size_t i = 0; i < pair.z_s.size(); ++i) {
    FeaturePair p = pair;
    p.z_s.v[i] = pair.z_s.v[i] + h;
    const double up = loss(p);
    p.z_s.v[i] = pair.z_s.v[i] - h;
    const double dn = loss(p);
    g.v[i] = (up - dn) / (2.0 * h);
  }
  return g;
}

double frob(const Array2D& a) {
  double acc = 0.0;
  for (double x : a.v) acc += x * x;
  return std::sqrt(acc);
}

double frob_diff(const Array2D& a, const Array2D& b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += (a.v[i] - b.v[i]) * (a.v[i] - b.v[i]);
  return std::sqrt(acc);
}

}  // namespace

TEST_CASE("cosine alignment loss hits both trivial endpoints") {
  FeaturePair p = random_pair(5, 8, 11);
  p.z_t = p.z_s;
  AlignResult same = align::cosine_align_loss(p);
  CHECK(same.loss >= 0.0);
  CHECK(same.loss <= 1e-15);

  for (size_t i = 0; i < p.z_t.size(); ++i) p.z_t.v[i] = -p.z_s.v[i];
  AlignResult anti = align::cosine_align_loss(p);
  CHECK(anti.loss <= 2.0);
  CHECK(anti.loss >= 2.0 - 1e-15);
}

TEST_CASE("cosine alignment loss is invariant to student rescaling") {
  FeaturePair p = random_pair(4, 6, 23);
  const double base = align::cosine_align_loss(p).loss;
  CHECK(base > 0.0);
  CHECK(base < 2.0);
  for (double alpha : {0.01, 100.0}) {
    FeaturePair q = p;
    for (auto& x : q.z_s.v) x *= alpha;
    CHECK(std::abs(align::cosine_align_loss(q).loss - base) <= 1e-12);
  }
}

TEST_CASE("cosine alignment gradient matches finite differences and is radially flat") {
  FeaturePair p = random_pair(4, 7, 37);
  AlignResult res = align::cosine_align_loss(p);

  Array2D fd = fd_grad([](const FeaturePair& q) { return align::cosine_align_loss(q).loss; }, p,
                       1e-6);
  CHECK(frob_diff(fd, res.grad_s) <= 1e-6 * frob(res.grad_s));

  for (int i = 0; i < p.z_s.rows; ++i) {
    const double* s = p.z_s.row(i);
    const double* g = res.grad_s.row(i);
    const double dot = geom::patch_dot(s, g, p.z_s.cols);
    const double ns = geom::patch_norm(s, p.z_s.cols);
    const double ng = geom::patch_norm(g, p.z_s.cols);
    CHECK(std::abs(dot) <= 1e-9 * ng * ns);
  }
}

TEST_CASE("cosine alignment loss rejects bad pairs") {
  FeaturePair p = random_pair(3, 4, 5);
  p.z_s.at(1, 0) = 0.0;
  p.z_s.at(1, 1) = 0.0;
  p.z_s.at(1, 2) = 0.0;
  p.z_s.at(1, 3) = 0.0;
  CHECK(throws_code([&] { align::cosine_align_loss(p); }, ErrorCode::ZeroPatch));

  FeaturePair q = random_pair(3, 4, 6);
  q.z_t = Array2D(3, 5);
  CHECK(throws_code([&] { align::cosine_align_loss(q); }, ErrorCode::ShapeMismatch));
  CHECK(throws_code([] { align::cosine_align_loss(FeaturePair{}); }, ErrorCode::EmptyBatch));
}

TEST_CASE("mse alignment loss is exact on a representable shift") {
  FeaturePair p;
  p.z_t = Array2D(8, 16);
  for (size_t i = 0; i < p.z_t.size(); ++i)
    p.z_t.v[i] = static_cast<double>((i * 37) % 1024) / 1024.0;
  p.z_s = p.z_t;
  for (auto& x : p.z_s.v) x += 0.5;

  AlignResult res = align::mse_align_loss(p);
  CHECK(res.loss == 0.25);
  for (double g : res.grad_s.v) CHECK(g == 1.0 / 128.0);

  p.z_s = p.z_t;
  CHECK(align::mse_align_loss(p).loss == 0.0);
}

TEST_CASE("mse alignment loss matches extended precision and finite differences") {
  FeaturePair p = random_pair(6, 9, 41);
  AlignResult res = align::mse_align_loss(p);

  long double acc = 0.0L;
  for (size_t i = 0; i < p.z_s.size(); ++i) {
    const long double d = static_cast<long double>(p.z_s.v[i]) - p.z_t.v[i];
    acc += d * d;
  }
  const double want = static_cast<double>(acc / static_cast<long double>(p.z_s.size()));
  CHECK(res.loss == doctest::Approx(want).epsilon(1e-12));

  Array2D fd =
      fd_grad([](const FeaturePair& q) { return align::mse_align_loss(q).loss; }, p, 1e-6);
  CHECK(frob_diff(fd, res.grad_s) <= 1e-6 * frob(res.grad_s));

  FeaturePair bad = p;
  bad.z_t = Array2D(6, 10);
  CHECK(throws_code([&] { align::mse_align_loss(bad); }, ErrorCode::ShapeMismatch));
}

TEST_CASE("noise augmentation is exact at tau zero and deterministic under a fixed seed") {
  Array2D z(3, 5);
  Rng fill(19);
  for (auto& x : z.v) x = fill.normal();

  Rng a(9), b(9);
  Array2D out = align::noise_augment(z, 0.0, a);
  CHECK(out == z);
  CHECK(a.uniform() == b.uniform());

  Rng r1(77), r2(77), r3(78);
  Array2D o1 = align::noise_augment(z, 0.8, r1);
  Array2D o2 = align::noise_augment(z, 0.8, r2);
  Array2D o3 = align::noise_augment(z, 0.8, r3);
  CHECK(o1 == o2);
  CHECK(o1.v != o3.v);
  CHECK(o1.v != z.v);

  Rng r4(1);
  CHECK(throws_code([&] { align::noise_augment(z, -0.1, r4); }, ErrorCode::Config));
}

TEST_CASE("noise augmentation matches the uniform-sigma moment and preserves the mean") {
  const int c = 64;
  const int draws = 100000;
  const double tau = 0.8;
  Array2D z(1, c);
  for (int j = 0; j < c; ++j) z.at(0, j) = static_cast<double>(j) / 7.0 - 4.0;

  Rng rng(2024);
  std::vector<double> sum(c, 0.0), sumsq(c, 0.0);
  double total = 0.0;
  for (int it = 0; it < draws; ++it) {
    Array2D out = align::noise_augment(z, tau, rng);
    double sq = 0.0;
    for (int j = 0; j < c; ++j) {
      const double d = out.at(0, j) - z.at(0, j);
      sum[j] += d;
      sumsq[j] += d * d;
      sq += d * d;
    }
    total += sq / c;
  }

  const double want = tau * tau / 3.0;
  CHECK(std::abs(total / draws - want) <= 0.02 * want);

  for (int j = 0; j < c; ++j) {
    const double mean = sum[j] / draws;
    const double var = sumsq[j] / draws - mean * mean;
    const double se = std::sqrt(var / draws);
    CHECK(std::abs(mean) <= 3.0 * se);
  }
}

TEST_CASE("stage objective composes the paper recipe stage by stage") {
  FeaturePair p;
  p.z_s = Array2D(1, 2);
  p.z_t = Array2D(1, 2);
  p.z_s.at(0, 0) = 0.8;
  p.z_s.at(0, 1) = 0.6;
  p.z_t.at(0, 0) = 1.0;
  p.z_t.at(0, 1) = 0.0;

  StageConfig cfg;
  cfg.stage = 1;
  StageBreakdown b1 = align::stage_objective(cfg, 0.3, p);
  CHECK(std::abs(b1.total - 0.4) <= 1e-12);
  CHECK(!b1.encoder_frozen);
  REQUIRE(b1.terms.size() == 4);
  CHECK(b1.terms[0].name == "cos");
  CHECK(b1.terms[1].name == "l1");
  CHECK(b1.terms[2].name == "lpips");
  CHECK(b1.terms[3].name == "adv");
  CHECK(b1.terms[0].enabled);
  CHECK(b1.terms[0].available);
  CHECK(b1.terms[2].enabled);
  CHECK(!b1.terms[2].available);
  CHECK(b1.terms[2].contribution == 0.0);
  CHECK(!b1.terms[3].enabled);

  cfg.stage = 2;
  StageBreakdown b2 = align::stage_objective(cfg, 0.3, p);
  CHECK(std::abs(b2.total - 0.4) <= 1e-12);
  CHECK(b2.terms[3].enabled);
  CHECK(!b2.terms[3].available);
  CHECK(b2.terms[3].contribution == 0.0);

  cfg.stage = 3;
  StageBreakdown b3 = align::stage_objective(cfg, 0.3, FeaturePair{});
  CHECK(b3.total == 1.0 * 0.3);
  CHECK(b3.encoder_frozen);
  CHECK(!b3.terms[0].enabled);
  CHECK(b3.terms[0].contribution == 0.0);

  cfg.stage = 4;
  StageBreakdown b4 = align::stage_objective(cfg, 0.3, FeaturePair{});
  CHECK(b4.total == b3.total);
  CHECK(b4.encoder_frozen);

  StageConfig zero;
  zero.lambda_cos = 0.0;
  zero.lambda_l1 = 0.0;
  zero.lambda_lpips = 0.0;
  zero.lambda_adv = 0.0;
  CHECK(align::stage_objective(zero, 0.3, p).total == 0.0);

  StageConfig bad;
  bad.stage = 5;
  CHECK(throws_code([&] { align::stage_objective(bad, 0.3, p); }, ErrorCode::Config));
  StageConfig neg;
  neg.lambda_adv = -0.5;
  CHECK(throws_code([&] { align::stage_objective(neg, 0.3, p); }, ErrorCode::Config));
}

TEST_CASE("conflict experiment with zero alignment weight trains identical arms") {
  ConflictConfig cfg;
  cfg.lambda_align = 0.0;
  cfg.steps = 400;
  cfg.log_every = 100;
  ConflictReport rep = align::conflict_experiment(cfg);

  REQUIRE(rep.rows.size() == 50);
  const size_t half = rep.rows.size() / 2;
  for (size_t i = 0; i < half; ++i) {
    const ConflictRow& a = rep.rows[i];
    const ConflictRow& b = rep.rows[half + i];
    CHECK(a.arm == "cosine");
    CHECK(b.arm == "mse");
    CHECK(a.seed_index == b.seed_index);
    CHECK(a.step == b.step);
    CHECK(a.recon_l1 == b.recon_l1);
    CHECK(a.align_cos == b.align_cos);
  }
  CHECK(rep.summaries[0].recon_l1_mean == rep.summaries[1].recon_l1_mean);
}

TEST_CASE("conflict experiment at defaults favors the cosine arm at matched alignment") {
  ConflictConfig cfg;
  ConflictReport rep = align::conflict_experiment(cfg);

  REQUIRE(rep.summaries.size() == 2);
  CHECK(rep.summaries[0].arm == "cosine");
  CHECK(rep.summaries[1].arm == "mse");
  CHECK(rep.summaries[0].recon_l1_mean <= rep.summaries[1].recon_l1_mean);

  int finals = 0;
  for (const ConflictRow& r : rep.rows) {
    if (r.step != cfg.steps) continue;
    ++finals;
    CHECK(r.align_cos >= 0.95);
  }
  CHECK(finals == 2 * cfg.n_seeds);
  CHECK(rep.summaries[0].recon_l1_std >= 0.0);
  CHECK(rep.summary_text.find("cosine") != std::string::npos);
  CHECK(rep.summary_text.find("U(0.5, 2)") != std::string::npos);
}

TEST_CASE("conflict experiment is reproducible and thread invariant") {
  ConflictConfig cfg;
  cfg.steps = 300;
  cfg.log_every = 150;
  cfg.threads = 1;
  ConflictReport r1 = align::conflict_experiment(cfg);
  cfg.threads = 3;
  ConflictReport r2 = align::conflict_experiment(cfg);

  REQUIRE(r1.rows.size() == r2.rows.size());
  for (size_t i = 0; i < r1.rows.size(); ++i) {
    CHECK(r1.rows[i].arm == r2.rows[i].arm);
    CHECK(r1.rows[i].seed_index == r2.rows[i].seed_index);
    CHECK(r1.rows[i].step == r2.rows[i].step);
    CHECK(r1.rows[i].recon_l1 == r2.rows[i].recon_l1);
    CHECK(r1.rows[i].align_cos == r2.rows[i].align_cos);
  }
  CHECK(r1.summary_text == r2.summary_text);

  for (size_t i = 1; i < r1.rows.size(); ++i) {
    const ConflictRow& a = r1.rows[i - 1];
    const ConflictRow& b = r1.rows[i];
    const bool ordered = a.arm < b.arm ||
                         (a.arm == b.arm && a.seed_index < b.seed_index) ||
                         (a.arm == b.arm && a.seed_index == b.seed_index && a.step < b.step);
    CHECK(ordered);
  }
}

TEST_CASE("conflict experiment validates its configuration") {
  auto broken = [](auto mutate) {
    ConflictConfig cfg;
    mutate(cfg);
    return throws_code([&] { align::conflict_experiment(cfg); }, ErrorCode::Config);
  };
  CHECK(broken([](ConflictConfig& c) { c.batch_size = c.n_samples + 1; }));
  CHECK(broken([](ConflictConfig& c) { c.batch_size = 0; }));
  CHECK(broken([](ConflictConfig& c) { c.n_seeds = 4; }));
  CHECK(broken([](ConflictConfig& c) { c.steps = 0; }));
  CHECK(broken([](ConflictConfig& c) { c.lr = 0.0; }));
  CHECK(broken([](ConflictConfig& c) { c.lambda_align = -1.0; }));
  CHECK(broken([](ConflictConfig& c) { c.signal_dim = 1; }));
}

TEST_CASE("conflict report csv is byte deterministic with the pinned header") {
  TempDir dir("csv");
  ConflictConfig cfg;
  cfg.steps = 200;
  cfg.log_every = 100;
  ConflictReport rep = align::conflict_experiment(cfg);

  const std::string p1 = dir.path + "/a.csv";
  const std::string p2 = dir.path + "/b.csv";
  align::write_conflict_csv(rep, p1);
  align::write_conflict_csv(rep, p2);
  const std::string t1 = io::read_file(p1);
  CHECK(t1 == io::read_file(p2));
  CHECK(t1.rfind("arm,seed,step,recon_l1,align_cos\n", 0) == 0);

  size_t lines = 0;
  for (char ch : t1)
    if (ch == '\n') ++lines;
  CHECK(lines == rep.rows.size() + 1);
}

TEST_CASE("rescale probe reports zero deviation at alpha one and for a direction-only decoder") {
  LatentField z;
  z.data = Array2D(4, 6);
  Rng rng(55);
  for (auto& x : z.data.v) x = rng.normal();
  z.radius = 1.0;

  DecoderFn linearish = [](const Array2D& in) {
    Array2D out = in;
    for (auto& x : out.v) x = 2.0 * x + 1.0;
    return out;
  };
  std::vector<RescalePoint> pts = align::rescale_probe(linearish, z, {1.0, 2.0});
  REQUIRE(pts.size() == 2);
  CHECK(pts[0].alpha == 1.0);
  CHECK(pts[0].deviation == 0.0);
  CHECK(pts[1].deviation > 0.0);

  DecoderFn direction_only = [](const Array2D& in) {
    Array2D out = in;
    for (int i = 0; i < out.rows; ++i) {
      double* row = out.row(i);
      const double n = geom::patch_norm(row, out.cols);
      for (int j = 0; j < out.cols; ++j) row[j] /= n;
    }
    return out;
  };
  for (const RescalePoint& pt :
       align::rescale_probe(direction_only, z, {0.25, 0.5, 2.0, 8.0}))
    CHECK(pt.deviation == 0.0);
  for (const RescalePoint& pt : align::rescale_probe(direction_only, z, {3.0, 0.7}))
    CHECK(pt.deviation <= 1e-12);
}

TEST_CASE("rescale probe matches the linearity oracle") {
  LatentField z;
  z.data = Array2D(5, 8);
  Rng rng(66);
  for (auto& x : z.data.v) x = rng.normal();
  z.radius = 1.0;

  Array2D w(3, 8);
  for (auto& x : w.v) x = rng.normal();
  DecoderFn linear = [&w](const Array2D& in) {
    Array2D out(in.rows, 3);
    for (int i = 0; i < in.rows; ++i)
      for (int o = 0; o < 3; ++o) out.at(i, o) = geom::patch_dot(w.row(o), in.row(i), in.cols);
    return out;
  };

  const double base = frob(linear(z.data));
  for (const RescalePoint& pt : align::rescale_probe(linear, z, {0.5, 0.9, 2.0, 4.0}))
    CHECK(std::abs(pt.deviation - std::abs(pt.alpha - 1.0) * base) <= 1e-10 * std::max(1.0, base));
}

TEST_CASE("rescale probe validates decoder, field, and alphas") {
  LatentField z;
  z.data = Array2D(2, 3);
  for (size_t i = 0; i < z.data.size(); ++i) z.data.v[i] = 0.5 + static_cast<double>(i);
  z.radius = 1.0;
  DecoderFn identity = [](const Array2D& in) { return in; };

  CHECK(throws_code([&] { align::rescale_probe(DecoderFn{}, z, {1.0}); }, ErrorCode::Config));
  CHECK(throws_code([&] { align::rescale_probe(identity, z, {0.0}); }, ErrorCode::Config));
  CHECK(throws_code([&] { align::rescale_probe(identity, z, {-2.0}); }, ErrorCode::Config));
  CHECK(throws_code([&] { align::rescale_probe(identity, LatentField{}, {1.0}); },
                    ErrorCode::EmptyBatch));

  int calls = 0;
  DecoderFn unstable = [&calls](const Array2D& in) {
    ++calls;
    return calls > 1 ? Array2D(1, 1) : in;
  };
  CHECK(throws_code([&] { align::rescale_probe(unstable, z, {2.0}); }, ErrorCode::ShapeMismatch));
}
