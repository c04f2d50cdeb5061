#include <algorithm>
#include <cmath>
#include <cstdio>
#include <vector>

#include "doctest.h"
#include "sphereflow/ioutil.hpp"
#include "sphereflow/velocitynet.hpp"

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

LatentField random_field(int n, int c, double r, uint64_t seed) {
  Rng rng(seed);
  return geom::sample_prior(n, c, r, rng);
}

PathSample random_sample(const NetSpec& spec, uint64_t seed) {
  LatentField data = random_field(spec.n_patches, spec.dim, spec.radius, seed);
  Rng rng(seed + 1);
  return flow::make_path_sample(data, rng, TimeDist::uniform, TimeConvention::data_at_1);
}

// Straight-line reimplementation of the forward pass in long double, used as
// an independent oracle against the production code path.
std::vector<double> oracle_forward(const VelocityNet& net, const std::vector<double>& input) {
  const std::vector<int> s = net.spec.layer_sizes();
  std::vector<long double> a(input.begin(), input.end());
  size_t off = 0;
  for (size_t l = 0; l + 1 < s.size(); ++l) {
    const int in = s[l], out = s[l + 1];
    std::vector<long double> z(static_cast<size_t>(out));
    for (int o = 0; o < out; ++o) {
      long double acc = net.params[off + static_cast<size_t>(out) * in + static_cast<size_t>(o)];
      for (int i = 0; i < in; ++i)
        acc += static_cast<long double>(net.params[off + static_cast<size_t>(o) * in + i]) * a[static_cast<size_t>(i)];
      z[static_cast<size_t>(o)] = acc;
    }
    off += static_cast<size_t>(out) * in + static_cast<size_t>(out);
    if (l + 2 < s.size()) {
      for (int o = 0; o < out; ++o) {
        long double x = z[static_cast<size_t>(o)];
        if (net.spec.act == Activation::smooth_gated)
          z[static_cast<size_t>(o)] = x / (1.0L + expl(-x));
        else
          z[static_cast<size_t>(o)] = x > 0.0L ? x : 0.0L;
      }
    }
    a = z;
  }
  return std::vector<double>(a.begin(), a.end());
}

}  // namespace

TEST_CASE("param_count matches the layer arithmetic") {
  NetSpec spec;
  spec.n_patches = 2;
  spec.dim = 4;
  spec.hidden = {10, 7};
  spec.time_feat_dim = 6;
  spec.n_classes = 3;
  spec.class_embed_dim = 5;
  // input = 8 + 6 + 5 = 19; layers 19->10, 10->7, 7->8; embed 3x5
  int64_t want = (19 * 10 + 10) + (10 * 7 + 7) + (7 * 8 + 8) + 15;
  CHECK(spec.param_count() == want);
  Rng rng(1);
  VelocityNet net = net::init_params(spec, 0.999, rng);
  CHECK(net.params.size() == static_cast<size_t>(want));
  CHECK(net.ema_params == net.params);
}

TEST_CASE("time_features lie in [-1,1] with unit leading pair at t=0") {
  std::vector<double> f(64);
  net::time_features(0.0, 64, f.data());
  for (int i = 0; i < 32; ++i) {
    CHECK(f[2 * i] == 0.0);  // sin(0)
    CHECK(f[2 * i + 1] == 1.0);
  }
  net::time_features(0.73, 64, f.data());
  for (double v : f) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("zero output head predicts the zero field") {
  NetSpec spec;
  spec.n_patches = 3;
  spec.dim = 4;
  spec.hidden = {16};
  Rng rng(2);
  VelocityNet net = net::init_params(spec, 0.9999, rng);
  LatentField x = random_field(3, 4, 1.0, 3);
  Array2D out = net::forward(net, x, 0.42);
  for (double v : out.v) CHECK(v == 0.0);
}

TEST_CASE("forward is deterministic") {
  NetSpec spec;
  spec.n_patches = 2;
  spec.dim = 3;
  spec.hidden = {12};
  Rng rng(5);
  VelocityNet net = net::init_params(spec, 0.9999, rng);
  rng.fill_normal(net.params.data(), net.params.size());
  LatentField x = random_field(2, 3, 1.0, 6);
  CHECK(net::forward(net, x, 0.3).v == net::forward(net, x, 0.3).v);
}

TEST_CASE("forward matches an independent matrix-multiply oracle") {
  NetSpec spec;
  spec.n_patches = 1;
  spec.dim = 4;
  spec.hidden = {8};
  spec.time_feat_dim = 0;  // input is just the 4 latents
  for (Activation act : {Activation::smooth_gated, Activation::rectified}) {
    spec.act = act;
    Rng rng(7);
    VelocityNet net = net::init_params(spec, 0.9999, rng);
    rng.fill_normal(net.params.data(), net.params.size());
    LatentField x = random_field(1, 4, 1.0, 8);
    Array2D got = net::forward(net, x, 0.0);
    std::vector<double> want = oracle_forward(net, x.data.v);
    for (int j = 0; j < 4; ++j) CHECK(got.v[static_cast<size_t>(j)] ==
                                      doctest::Approx(want[static_cast<size_t>(j)]).epsilon(1e-12));
  }
}

TEST_CASE("forward validates shapes and labels") {
  NetSpec spec;
  spec.n_patches = 2;
  spec.dim = 3;
  Rng rng(9);
  VelocityNet net = net::init_params(spec, 0.9999, rng);
  LatentField wrong = random_field(2, 4, 1.0, 10);
  CHECK(throws_code([&] { net::forward(net, wrong, 0.5); }, ErrorCode::ShapeMismatch));
  LatentField x = random_field(2, 3, 1.0, 11);
  CHECK(throws_code([&] { net::forward(net, x, 0.5, 0); }, ErrorCode::UnknownClass));

  NetSpec cond = spec;
  cond.n_classes = 4;
  VelocityNet cnet = net::init_params(cond, 0.9999, rng);
  CHECK(throws_code([&] { net::forward(cnet, x, 0.5, -1); }, ErrorCode::UnknownClass));
  CHECK(throws_code([&] { net::forward(cnet, x, 0.5, 4); }, ErrorCode::UnknownClass));
  CHECK(net::forward(cnet, x, 0.5, 3).rows == 2);
}

TEST_CASE("hidden weight variance tracks 2/fan_in") {
  NetSpec spec;
  spec.n_patches = 16;
  spec.dim = 16;  // fan_in = 256 + 64 = 320
  spec.hidden = {128, 8};
  Rng rng(12);
  VelocityNet net = net::init_params(spec, 0.9999, rng);
  const int fan_in = spec.input_dim();
  CHECK(fan_in >= 256);
  double s2 = 0.0;
  const int n = fan_in * 128;
  for (int k = 0; k < n; ++k) s2 += net.params[static_cast<size_t>(k)] * net.params[static_cast<size_t>(k)];
  double var = s2 / n;
  CHECK(var == doctest::Approx(2.0 / fan_in).epsilon(0.2));
}

TEST_CASE("loss is zero at the constructed global minimum") {
  // x = (1,0): anything of the form (0, a) is exactly tangent, so zero
  // weights plus an output bias equal to u_t reproduce the target exactly.
  NetSpec spec;
  spec.n_patches = 1;
  spec.dim = 2;
  spec.hidden = {4};
  Rng rng(13);
  VelocityNet net = net::init_params(spec, 0.9999, rng);

  PathSample s;
  s.x_t.data = Array2D(1, 2);
  s.x_t.data.at(0, 0) = 1.0;
  s.x_t.radius = 1.0;
  s.u_t.data = Array2D(1, 2);
  s.u_t.data.at(0, 1) = 0.7;
  s.u_t.base = s.x_t;
  s.t = 0.5;

  // Output-head bias sits at the tail of the last layer block.
  size_t bias1 = net.params.size() - 1;
  net.params[bias1] = 0.7;
  GradientReport rep = net::loss_and_grad(net, {s});
  CHECK(rep.loss == 0.0);
  for (double g : rep.grad) CHECK(g == 0.0);
}

TEST_CASE("gradient matches central finite differences") {
  std::vector<NetSpec> cfgs;
  {
    NetSpec a;
    a.n_patches = 2;
    a.dim = 3;
    a.hidden = {10};
    a.time_feat_dim = 8;
    cfgs.push_back(a);

    NetSpec b;
    b.n_patches = 1;
    b.dim = 4;
    b.hidden = {8, 6};
    b.time_feat_dim = 6;
    b.act = Activation::rectified;
    cfgs.push_back(b);

    NetSpec c;
    c.n_patches = 2;
    c.dim = 2;
    c.hidden = {};
    c.time_feat_dim = 4;
    c.n_classes = 3;
    c.class_embed_dim = 4;
    cfgs.push_back(c);
  }
  uint64_t seed = 4000;
  for (const NetSpec& spec : cfgs) {
    CHECK(spec.param_count() <= 1000);
    Rng rng(seed++);
    VelocityNet net = net::init_params(spec, 0.9999, rng);
    // Populate every layer, including the zero head, so no dead directions.
    for (double& p : net.params) p = 0.4 * rng.normal();

    std::vector<PathSample> batch;
    std::vector<int> labels;
    for (int k = 0; k < 3; ++k) {
      batch.push_back(random_sample(spec, seed));
      seed += 2;
      if (spec.n_classes > 0) labels.push_back(k % spec.n_classes);
    }

    GradientReport rep = net::loss_and_grad(net, batch, labels);
    VelocityNet probe = net;
    int checked = 0;
    for (size_t i = 0; i < net.params.size(); ++i) {
      double h = 1e-5 * std::max(1.0, std::abs(net.params[i]));
      probe.params[i] = net.params[i] + h;
      double lp = net::loss_and_grad(probe, batch, labels).loss;
      probe.params[i] = net.params[i] - h;
      double lm = net::loss_and_grad(probe, batch, labels).loss;
      probe.params[i] = net.params[i];
      double fd = (lp - lm) / (2.0 * h);
      double err = std::abs(fd - rep.grad[i]);
      bool ok = err <= 1e-4 * std::abs(fd) || err <= 1e-7;
      if (!ok) {
        CAPTURE(i);
        CAPTURE(fd);
        CAPTURE(rep.grad[i]);
      }
      CHECK(ok);
      ++checked;
    }
    CHECK(checked == static_cast<int>(net.params.size()));
  }
}

TEST_CASE("duplicating the batch leaves loss and grad bit-identical") {
  NetSpec spec;
  spec.n_patches = 2;
  spec.dim = 3;
  spec.hidden = {12};
  spec.time_feat_dim = 8;
  Rng rng(4100);
  VelocityNet net = net::init_params(spec, 0.9999, rng);
  for (double& p : net.params) p = 0.3 * rng.normal();

  std::vector<PathSample> batch;
  uint64_t seed = 4200;
  for (int k = 0; k < 5; ++k) {
    batch.push_back(random_sample(spec, seed));
    seed += 2;
  }
  std::vector<PathSample> doubled;
  for (const PathSample& s : batch) {
    doubled.push_back(s);
    doubled.push_back(s);
  }
  GradientReport a = net::loss_and_grad(net, batch);
  GradientReport b = net::loss_and_grad(net, doubled);
  CHECK(a.loss == b.loss);
  CHECK(a.grad == b.grad);
}

TEST_CASE("result does not depend on the thread count") {
  NetSpec spec;
  spec.n_patches = 1;
  spec.dim = 3;
  spec.hidden = {16};
  Rng rng(4300);
  VelocityNet net = net::init_params(spec, 0.9999, rng);
  for (double& p : net.params) p = 0.3 * rng.normal();
  std::vector<PathSample> batch;
  uint64_t seed = 4400;
  for (int k = 0; k < 37; ++k) {  // deliberately not a multiple of the block size
    batch.push_back(random_sample(spec, seed));
    seed += 2;
  }
  GradientReport a = net::loss_and_grad(net, batch, {}, 1);
  GradientReport b = net::loss_and_grad(net, batch, {}, 3);
  GradientReport c = net::loss_and_grad(net, batch, {}, 8);
  CHECK(a.loss == b.loss);
  CHECK(a.grad == b.grad);
  CHECK(a.loss == c.loss);
  CHECK(a.grad == c.grad);
}

TEST_CASE("permuting the batch moves loss and grad by at most 1e-12") {
  NetSpec spec;
  spec.n_patches = 1;
  spec.dim = 3;
  spec.hidden = {16};
  Rng rng(4500);
  VelocityNet net = net::init_params(spec, 0.9999, rng);
  for (double& p : net.params) p = 0.3 * rng.normal();
  std::vector<PathSample> batch;
  uint64_t seed = 4600;
  for (int k = 0; k < 24; ++k) {
    batch.push_back(random_sample(spec, seed));
    seed += 2;
  }
  std::vector<PathSample> shuffled = batch;
  Rng perm(4700);
  for (size_t i = shuffled.size(); i > 1; --i)
    std::swap(shuffled[i - 1], shuffled[perm.uniform_index(i)]);
  GradientReport a = net::loss_and_grad(net, batch);
  GradientReport b = net::loss_and_grad(net, shuffled);
  CHECK(std::abs(a.loss - b.loss) <= 1e-12 * std::max(1.0, std::abs(a.loss)));
  for (size_t i = 0; i < a.grad.size(); ++i)
    CHECK(std::abs(a.grad[i] - b.grad[i]) <= 1e-12 * std::max(1.0, std::abs(a.grad[i])));
}

TEST_CASE("loss_and_grad rejects bad batches") {
  NetSpec spec;
  spec.n_patches = 1;
  spec.dim = 3;
  Rng rng(4800);
  VelocityNet net = net::init_params(spec, 0.9999, rng);
  CHECK(throws_code([&] { net::loss_and_grad(net, {}); }, ErrorCode::EmptyBatch));
  PathSample s = random_sample(spec, 4900);
  CHECK(throws_code([&] { net::loss_and_grad(net, {s}, {0}); }, ErrorCode::UnknownClass));
}

TEST_CASE("ema_update boundary decays and geometric recursion") {
  NetSpec spec;
  spec.n_patches = 1;
  spec.dim = 2;
  spec.hidden = {4};
  spec.time_feat_dim = 2;
  Rng rng(5000);
  VelocityNet net = net::init_params(spec, 0.0, rng);
  rng.fill_normal(net.params.data(), net.params.size());
  rng.fill_normal(net.ema_params.data(), net.ema_params.size());

  VelocityNet zero = net;
  zero.ema_decay = 0.0;
  net::ema_update(zero);
  CHECK(zero.ema_params == zero.params);

  VelocityNet one = net;
  one.ema_decay = 1.0;
  std::vector<double> before = one.ema_params;
  net::ema_update(one);
  CHECK(one.ema_params == before);

  VelocityNet geo = net;
  geo.ema_decay = 0.9999;
  std::vector<double> ema0 = geo.ema_params;
  for (int k = 0; k < 10; ++k) net::ema_update(geo);
  double pow10 = std::pow(0.9999, 10);
  for (size_t i = 0; i < geo.ema_params.size(); ++i) {
    double want = geo.params[i] + pow10 * (ema0[i] - geo.params[i]);
    CHECK(geo.ema_params[i] == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  NetSpec spec;
  spec.n_patches = 2;
  spec.dim = 3;
  spec.hidden = {9, 5};
  spec.time_feat_dim = 10;
  spec.n_classes = 2;
  spec.class_embed_dim = 4;
  Rng rng(5100);
  Checkpoint ck;
  ck.net = net::init_params(spec, 0.991, rng);
  rng.fill_normal(ck.net.params.data(), ck.net.params.size());
  net::ema_update(ck.net);
  ck.convention = TimeConvention::data_at_0;
  ck.step = 777;
  ck.has_train_state = true;
  ck.opt_m.assign(ck.net.params.size(), 0.0);
  ck.opt_v.assign(ck.net.params.size(), 0.0);
  rng.fill_normal(ck.opt_m.data(), ck.opt_m.size());
  for (double& v : ck.opt_v) v = std::abs(rng.normal());
  Rng stream(5200);
  stream.normal();
  ck.rng_state = stream.serialize();
  ck.loss_avg = 0.125;

  const char* path = "ckpt_roundtrip_test.bin";
  net::save_checkpoint(ck, path);
  Checkpoint back = net::load_checkpoint(path);
  CHECK(back.net.spec.hidden == spec.hidden);
  CHECK(back.net.spec.n_classes == 2);
  CHECK(back.net.params == ck.net.params);
  CHECK(back.net.ema_params == ck.net.ema_params);
  CHECK(back.net.ema_decay == 0.991);
  CHECK(back.convention == TimeConvention::data_at_0);
  CHECK(back.step == 777);
  CHECK(back.has_train_state);
  CHECK(back.opt_m == ck.opt_m);
  CHECK(back.opt_v == ck.opt_v);
  CHECK(back.rng_state == ck.rng_state);
  CHECK(back.loss_avg == 0.125);

  // Same checkpoint written twice gives identical bytes.
  net::save_checkpoint(ck, "ckpt_roundtrip_test2.bin");
  CHECK(io::read_file(path) == io::read_file("ckpt_roundtrip_test2.bin"));
  std::remove(path);
  std::remove("ckpt_roundtrip_test2.bin");
}

TEST_CASE("checkpoint loader rejects corruption and version skew") {
  NetSpec spec;
  spec.n_patches = 1;
  spec.dim = 2;
  spec.hidden = {3};
  spec.time_feat_dim = 2;
  Rng rng(5300);
  Checkpoint ck;
  ck.net = net::init_params(spec, 0.9999, rng);
  const char* path = "ckpt_corrupt_test.bin";
  net::save_checkpoint(ck, path);

  std::string bytes = io::read_file(path);
  io::write_file(path, bytes.substr(0, bytes.size() - 10));
  CHECK(throws_code([&] { net::load_checkpoint(path); }, ErrorCode::ChecksumMismatch));

  std::string skew = bytes;
  skew.replace(skew.find("SFMCKPT 1"), 9, "SFMCKPT 9");
  io::write_file(path, skew);
  CHECK(throws_code([&] { net::load_checkpoint(path); }, ErrorCode::FormatVersionMismatch));

  std::string flipped = bytes;
  flipped[flipped.size() - 3] = static_cast<char>(flipped[flipped.size() - 3] ^ 0x40);
  io::write_file(path, flipped);
  CHECK(throws_code([&] { net::load_checkpoint(path); }, ErrorCode::ChecksumMismatch));
  std::remove(path);
}
