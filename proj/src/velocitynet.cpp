#include "sphereflow/velocitynet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <string>

#include "sphereflow/ioutil.hpp"

namespace sfm {

std::vector<int> NetSpec::layer_sizes() const {
  std::vector<int> s;
  s.push_back(input_dim());
  for (int h : hidden) s.push_back(h);
  s.push_back(field_dim());
  return s;
}

int64_t NetSpec::param_count() const {
  std::vector<int> s = layer_sizes();
  int64_t total = 0;
  for (size_t l = 0; l + 1 < s.size(); ++l)
    total += static_cast<int64_t>(s[l + 1]) * s[l] + s[l + 1];
  total += static_cast<int64_t>(n_classes) * (n_classes > 0 ? class_embed_dim : 0);
  return total;
}

void NetSpec::validate() const {
  if (n_patches < 1 || dim < 2) fail(ErrorCode::Config, "net: need n_patches >= 1, dim >= 2");
  if (!(radius > 0.0)) fail(ErrorCode::Config, "net: radius must be > 0");
  for (int h : hidden)
    if (h < 1) fail(ErrorCode::Config, "net: hidden widths must be >= 1");
  if (time_feat_dim < 0 || time_feat_dim % 2 != 0)
    fail(ErrorCode::Config, "net: time_feat_dim must be even and >= 0");
  if (n_classes < 0) fail(ErrorCode::Config, "net: n_classes must be >= 0");
  if (n_classes > 0 && class_embed_dim < 1)
    fail(ErrorCode::Config, "net: class_embed_dim must be >= 1 when conditioning");
}

namespace net {

namespace {

constexpr int kGradBlock = 16;  // leaves per reduction block; must stay fixed

struct Layout {
  std::vector<int> sizes;
  std::vector<int64_t> w_off, b_off;
  int64_t embed_off = 0;
  int64_t total = 0;
};

Layout make_layout(const NetSpec& spec) {
  Layout lo;
  lo.sizes = spec.layer_sizes();
  int64_t off = 0;
  for (size_t l = 0; l + 1 < lo.sizes.size(); ++l) {
    lo.w_off.push_back(off);
    off += static_cast<int64_t>(lo.sizes[l + 1]) * lo.sizes[l];
    lo.b_off.push_back(off);
    off += lo.sizes[l + 1];
  }
  lo.embed_off = off;
  off += static_cast<int64_t>(spec.n_classes) * spec.embed_dim();
  lo.total = off;
  return lo;
}

std::vector<double> freq_ladder(int feat_dim) {
  int half = feat_dim / 2;
  std::vector<double> f(static_cast<size_t>(half));
  for (int i = 0; i < half; ++i)
    f[static_cast<size_t>(i)] = (half > 1) ? std::pow(10.0, 4.0 * i / (half - 1)) : 1.0;
  return f;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double act_eval(Activation a, double x) {
  if (a == Activation::smooth_gated) return x * sigmoid(x);
  return x > 0.0 ? x : 0.0;
}

inline double act_deriv(Activation a, double x) {
  if (a == Activation::smooth_gated) {
    double s = sigmoid(x);
    return s * (1.0 + x * (1.0 - s));
  }
  return x > 0.0 ? 1.0 : 0.0;
}

struct Workspace {
  std::vector<std::vector<double>> a;    // a[0] input .. a[L] output
  std::vector<std::vector<double>> pre;  // pre-activations, one per weight layer
  std::vector<double> delta, tmp;

  void reserve(const Layout& lo) {
    size_t L = lo.sizes.size() - 1;
    a.resize(L + 1);
    pre.resize(L);
    for (size_t l = 0; l <= L; ++l) a[l].resize(static_cast<size_t>(lo.sizes[l]));
    for (size_t l = 0; l < L; ++l) pre[l].resize(static_cast<size_t>(lo.sizes[l + 1]));
    size_t widest = 0;
    for (int s : lo.sizes) widest = std::max(widest, static_cast<size_t>(s));
    delta.resize(widest);
    tmp.resize(widest);
  }
};

void build_input(const NetSpec& spec, const Layout& lo, const std::vector<double>& freqs,
                 const double* params, const LatentField& x, double t, int label, double* z) {
  const int fd = spec.field_dim();
  std::memcpy(z, x.data.v.data(), static_cast<size_t>(fd) * sizeof(double));
  for (size_t i = 0; i < freqs.size(); ++i) {
    double ph = freqs[i] * t;
    z[fd + 2 * static_cast<int>(i)] = std::sin(ph);
    z[fd + 2 * static_cast<int>(i) + 1] = std::cos(ph);
  }
  if (spec.n_classes > 0) {
    const double* row = params + lo.embed_off + static_cast<int64_t>(label) * spec.embed_dim();
    std::memcpy(z + fd + spec.time_feat_dim, row,
                static_cast<size_t>(spec.embed_dim()) * sizeof(double));
  }
}

void forward_pass(const NetSpec& spec, const Layout& lo, const double* p, Workspace& ws) {
  const size_t L = lo.sizes.size() - 1;
  for (size_t l = 0; l < L; ++l) {
    const int in = lo.sizes[l], out = lo.sizes[l + 1];
    const double* W = p + lo.w_off[l];
    const double* b = p + lo.b_off[l];
    const double* src = ws.a[l].data();
    double* pr = ws.pre[l].data();
    for (int o = 0; o < out; ++o) {
      const double* row = W + static_cast<int64_t>(o) * in;
      double acc = b[o];
      for (int i = 0; i < in; ++i) acc += row[i] * src[i];
      pr[o] = acc;
    }
    double* dst = ws.a[l + 1].data();
    if (l + 1 < L)
      for (int o = 0; o < out; ++o) dst[o] = act_eval(spec.act, pr[o]);
    else
      std::memcpy(dst, pr, static_cast<size_t>(out) * sizeof(double));
  }
}

/// Loss of one sample and its full parameter gradient, written (not
/// accumulated) into leaf. Assumes forward_pass has run.
double backward_pass(const NetSpec& spec, const Layout& lo, const double* p, const PathSample& s,
                     int label, Workspace& ws, double* leaf) {
  const size_t L = lo.sizes.size() - 1;
  const int N = spec.n_patches, C = spec.dim;
  const double inv_r2 = 1.0 / (spec.radius * spec.radius);
  const double* g = ws.a[L].data();

  // Tangent projection of the raw output, residual, and d(loss)/d(raw).
  double loss = 0.0;
  double* delta = ws.delta.data();
  for (int i = 0; i < N; ++i) {
    const double* gp = g + static_cast<int64_t>(i) * C;
    const double* xp = s.x_t.data.row(i);
    const double* up = s.u_t.data.row(i);
    double* dp = delta + static_cast<int64_t>(i) * C;
    double coef = 0.0;
    for (int j = 0; j < C; ++j) coef += gp[j] * xp[j];
    coef *= inv_r2;
    double dcoef = 0.0;
    for (int j = 0; j < C; ++j) {
      double d = (gp[j] - coef * xp[j]) - up[j];
      loss += d * d;
      dp[j] = d;  // scaled below
      dcoef += d * xp[j];
    }
    // dL/dg = P * dL/dv with P = I - x x^T / R^2 (projector is symmetric).
    dcoef *= inv_r2;
    for (int j = 0; j < C; ++j) dp[j] = (2.0 / N) * (dp[j] - dcoef * xp[j]);
  }
  loss /= N;

  if (spec.n_classes > 0)
    std::fill(leaf + lo.embed_off, leaf + lo.total, 0.0);

  for (size_t l = L; l-- > 0;) {
    const int in = lo.sizes[l], out = lo.sizes[l + 1];
    const double* W = p + lo.w_off[l];
    const double* src = ws.a[l].data();
    double* gW = leaf + lo.w_off[l];
    double* gb = leaf + lo.b_off[l];
    for (int o = 0; o < out; ++o) {
      double d = delta[o];
      double* grow = gW + static_cast<int64_t>(o) * in;
      for (int i = 0; i < in; ++i) grow[i] = d * src[i];
      gb[o] = d;
    }
    if (l > 0 || spec.n_classes > 0) {
      double* t = ws.tmp.data();
      std::fill(t, t + in, 0.0);
      for (int o = 0; o < out; ++o) {
        double d = delta[o];
        const double* row = W + static_cast<int64_t>(o) * in;
        for (int i = 0; i < in; ++i) t[i] += d * row[i];
      }
      if (l > 0) {
        const double* pr = ws.pre[l - 1].data();
        for (int i = 0; i < in; ++i) delta[i] = t[i] * act_deriv(spec.act, pr[i]);
      } else {
        const int eoff = spec.field_dim() + spec.time_feat_dim;
        double* ge = leaf + lo.embed_off + static_cast<int64_t>(label) * spec.embed_dim();
        for (int k = 0; k < spec.embed_dim(); ++k) ge[k] = t[eoff + k];
      }
    }
  }
  return loss;
}

/// Binary-counter pairwise reduction. Pushing partials in order with
/// power-of-two-aligned counts reproduces one fixed summation tree, so the
/// total is independent of how leaves were distributed across workers.
class PairwiseReducer {
 public:
  explicit PairwiseReducer(size_t len) : len_(len) {}

  void push(std::vector<double> g, double loss, int64_t count) {
    while (!g_.empty() && count_.back() == count) {
      const std::vector<double>& top = g_.back();
      for (size_t j = 0; j < len_; ++j) g[j] = top[j] + g[j];  // older + newer
      loss = loss_.back() + loss;
      count += count_.back();
      g_.pop_back();
      loss_.pop_back();
      count_.pop_back();
    }
    g_.push_back(std::move(g));
    loss_.push_back(loss);
    count_.push_back(count);
  }

  // Collapses newest to oldest: acc = older + acc at each level.
  void finish(std::vector<double>* g, double* loss, int64_t* count) {
    *g = std::move(g_.back());
    *loss = loss_.back();
    *count = count_.back();
    for (size_t k = g_.size() - 1; k-- > 0;) {
      for (size_t j = 0; j < len_; ++j) (*g)[j] = g_[k][j] + (*g)[j];
      *loss = loss_[k] + *loss;
      *count += count_[k];
    }
    g_.clear();
    loss_.clear();
    count_.clear();
  }

 private:
  size_t len_;
  std::vector<std::vector<double>> g_;
  std::vector<double> loss_;
  std::vector<int64_t> count_;
};

}  // namespace

void time_features(double t, int dim, double* out) {
  if (dim < 0 || dim % 2 != 0) fail(ErrorCode::Config, "time_features: dim must be even");
  std::vector<double> f = freq_ladder(dim);
  for (size_t i = 0; i < f.size(); ++i) {
    out[2 * i] = std::sin(f[i] * t);
    out[2 * i + 1] = std::cos(f[i] * t);
  }
}

VelocityNet init_params(const NetSpec& spec, double ema_decay, Rng& rng) {
  spec.validate();
  if (!(ema_decay >= 0.0 && ema_decay <= 1.0))
    fail(ErrorCode::Config, "init_params: ema_decay must be in [0,1]");
  Layout lo = make_layout(spec);
  VelocityNet net;
  net.spec = spec;
  net.ema_decay = ema_decay;
  net.params.assign(static_cast<size_t>(lo.total), 0.0);
  const size_t L = lo.sizes.size() - 1;
  for (size_t l = 0; l + 1 < L; ++l) {
    double scale = std::sqrt(2.0 / lo.sizes[l]);
    double* W = net.params.data() + lo.w_off[l];
    int64_t n = static_cast<int64_t>(lo.sizes[l + 1]) * lo.sizes[l];
    for (int64_t k = 0; k < n; ++k) W[k] = scale * rng.normal();
  }
  // Output head stays zero. Class embeddings are unit Gaussians.
  double* E = net.params.data() + lo.embed_off;
  for (int64_t k = 0; k < lo.total - lo.embed_off; ++k) E[k] = rng.normal();
  net.ema_params = net.params;
  return net;
}

namespace {

void check_label(const NetSpec& spec, int label) {
  if (spec.n_classes == 0) {
    if (label != -1)
      fail(ErrorCode::UnknownClass, "net is unconditional but got label " + std::to_string(label));
  } else if (label < 0 || label >= spec.n_classes) {
    fail(ErrorCode::UnknownClass, "label " + std::to_string(label) + " outside [0, " +
                                      std::to_string(spec.n_classes) + ")");
  }
}

void check_field_shape(const NetSpec& spec, const LatentField& x, const char* who) {
  if (x.n_patches() != spec.n_patches || x.dim() != spec.dim || x.radius != spec.radius)
    fail(ErrorCode::ShapeMismatch, std::string(who) + ": field " + std::to_string(x.n_patches()) +
                                       "x" + std::to_string(x.dim()) + " R=" +
                                       format_double(x.radius) + " vs net " +
                                       std::to_string(spec.n_patches) + "x" +
                                       std::to_string(spec.dim) + " R=" +
                                       format_double(spec.radius));
}

}  // namespace

Array2D forward(const VelocityNet& net, const LatentField& x, double t, int label, bool use_ema) {
  check_field_shape(net.spec, x, "forward");
  check_label(net.spec, label);
  Layout lo = make_layout(net.spec);
  const double* p = (use_ema ? net.ema_params : net.params).data();
  std::vector<double> freqs = freq_ladder(net.spec.time_feat_dim);
  Workspace ws;
  ws.reserve(lo);
  build_input(net.spec, lo, freqs, p, x, t, label, ws.a[0].data());
  forward_pass(net.spec, lo, p, ws);
  Array2D out(net.spec.n_patches, net.spec.dim);
  out.v = ws.a.back();
  return out;
}

GradientReport loss_and_grad(const VelocityNet& net, const std::vector<PathSample>& batch,
                             const std::vector<int>& labels, int threads) {
  if (batch.empty()) fail(ErrorCode::EmptyBatch, "loss_and_grad: empty batch");
  const NetSpec& spec = net.spec;
  if (!labels.empty() && labels.size() != batch.size())
    fail(ErrorCode::UnknownClass, "loss_and_grad: got " + std::to_string(labels.size()) +
                                      " labels for " + std::to_string(batch.size()) + " samples");
  if (spec.n_classes > 0 && labels.size() != batch.size())
    fail(ErrorCode::UnknownClass, "loss_and_grad: conditional net needs one label per sample");
  for (size_t s = 0; s < batch.size(); ++s) {
    check_field_shape(spec, batch[s].x_t, "loss_and_grad");
    if (!batch[s].u_t.data.same_shape(batch[s].x_t.data))
      fail(ErrorCode::ShapeMismatch, "loss_and_grad: u_t shape differs from x_t");
    check_label(spec, labels.empty() ? -1 : labels[s]);
  }

  Layout lo = make_layout(spec);
  const size_t P = static_cast<size_t>(lo.total);
  const double* p = net.params.data();
  const std::vector<double> freqs = freq_ladder(spec.time_feat_dim);
  const int64_t B = static_cast<int64_t>(batch.size());
  const int64_t n_blocks = (B + kGradBlock - 1) / kGradBlock;

  std::vector<std::vector<double>> slot_g(static_cast<size_t>(n_blocks));
  std::vector<double> slot_loss(static_cast<size_t>(n_blocks));
  std::vector<int64_t> slot_count(static_cast<size_t>(n_blocks));

  parallel_for(n_blocks, resolve_threads(threads), [&](int64_t blo, int64_t bhi) {
    Workspace ws;
    ws.reserve(lo);
    std::vector<double> leaf(P);
    for (int64_t blk = blo; blk < bhi; ++blk) {
      PairwiseReducer red(P);
      int64_t s0 = blk * kGradBlock, s1 = std::min(B, s0 + kGradBlock);
      for (int64_t s = s0; s < s1; ++s) {
        int label = labels.empty() ? -1 : labels[static_cast<size_t>(s)];
        const PathSample& ps = batch[static_cast<size_t>(s)];
        build_input(spec, lo, freqs, p, ps.x_t, ps.t, label, ws.a[0].data());
        forward_pass(spec, lo, p, ws);
        double loss = backward_pass(spec, lo, p, ps, label, ws, leaf.data());
        red.push(leaf, loss, 1);
      }
      red.finish(&slot_g[static_cast<size_t>(blk)], &slot_loss[static_cast<size_t>(blk)],
                 &slot_count[static_cast<size_t>(blk)]);
    }
  });

  PairwiseReducer outer(P);
  for (int64_t blk = 0; blk < n_blocks; ++blk)
    outer.push(std::move(slot_g[static_cast<size_t>(blk)]), slot_loss[static_cast<size_t>(blk)],
               slot_count[static_cast<size_t>(blk)]);
  GradientReport rep;
  double loss_sum = 0.0;
  int64_t count = 0;
  outer.finish(&rep.grad, &loss_sum, &count);

  rep.loss = loss_sum / static_cast<double>(count);
  for (double& g : rep.grad) g /= static_cast<double>(count);
  if (!std::isfinite(rep.loss) || !all_finite(rep.grad.data(), rep.grad.size()))
    fail(ErrorCode::NonFinite, "loss_and_grad: non-finite loss or gradient");
  return rep;
}

void ema_update(VelocityNet& net) {
  const double d = net.ema_decay;
  for (size_t i = 0; i < net.params.size(); ++i)
    net.ema_params[i] = d * net.ema_params[i] + (1.0 - d) * net.params[i];
}

const char* act_name(Activation a) {
  return a == Activation::smooth_gated ? "smooth_gated" : "rectified";
}

Activation act_from_name(const std::string& s) {
  if (s == "smooth_gated") return Activation::smooth_gated;
  if (s == "rectified") return Activation::rectified;
  fail(ErrorCode::Io, "unknown activation '" + s + "'");
}

const char* conv_name(TimeConvention c) {
  return c == TimeConvention::data_at_1 ? "data_at_1" : "data_at_0";
}

TimeConvention conv_from_name(const std::string& s) {
  if (s == "data_at_1") return TimeConvention::data_at_1;
  if (s == "data_at_0") return TimeConvention::data_at_0;
  fail(ErrorCode::Io, "unknown time convention '" + s + "'");
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  const NetSpec& spec = ck.net.spec;
  spec.validate();
  const size_t P = ck.net.params.size();
  if (ck.net.ema_params.size() != P || P != static_cast<size_t>(spec.param_count()))
    fail(ErrorCode::Config, "save_checkpoint: parameter vectors disagree with the architecture");
  if (ck.has_train_state && (ck.opt_m.size() != P || ck.opt_v.size() != P))
    fail(ErrorCode::Config, "save_checkpoint: moment vectors disagree with the architecture");

  io::TextHeader h;
  h.magic = "SFMCKPT";
  h.version = 1;
  h.set_i64("n_patches", spec.n_patches);
  h.set_i64("dim", spec.dim);
  h.set_f64("radius", spec.radius);
  std::string widths;
  for (size_t i = 0; i < spec.hidden.size(); ++i)
    widths += (i ? " " : "") + std::to_string(spec.hidden[i]);
  h.set("hidden", widths);
  h.set("activation", act_name(spec.act));
  h.set_i64("time_feat_dim", spec.time_feat_dim);
  h.set_i64("n_classes", spec.n_classes);
  h.set_i64("class_embed_dim", spec.class_embed_dim);
  h.set_f64("ema_decay", ck.net.ema_decay);
  h.set("convention", conv_name(ck.convention));
  h.set_i64("step", ck.step);
  h.set_i64("has_train_state", ck.has_train_state ? 1 : 0);
  h.set_f64("loss_avg", ck.loss_avg);
  if (ck.has_train_state) h.set("rng", ck.rng_state);
  h.set_i64("param_count", static_cast<int64_t>(P));

  std::string payload;
  payload.reserve(8 * P * (ck.has_train_state ? 4 : 2));
  io::append_f64le(payload, ck.net.params.data(), P);
  io::append_f64le(payload, ck.net.ema_params.data(), P);
  if (ck.has_train_state) {
    io::append_f64le(payload, ck.opt_m.data(), P);
    io::append_f64le(payload, ck.opt_v.data(), P);
  }
  io::write_with_checksum(path, std::move(h), payload);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::string payload;
  io::TextHeader h = io::read_with_checksum(path, "SFMCKPT", 1, &payload);

  Checkpoint ck;
  NetSpec spec;
  spec.n_patches = static_cast<int>(h.get_i64("n_patches"));
  spec.dim = static_cast<int>(h.get_i64("dim"));
  spec.radius = h.get_f64("radius");
  spec.hidden.clear();
  {
    std::istringstream ws(h.get("hidden"));
    int w;
    while (ws >> w) spec.hidden.push_back(w);
  }
  spec.act = act_from_name(h.get("activation"));
  spec.time_feat_dim = static_cast<int>(h.get_i64("time_feat_dim"));
  spec.n_classes = static_cast<int>(h.get_i64("n_classes"));
  spec.class_embed_dim = static_cast<int>(h.get_i64("class_embed_dim"));
  spec.validate();

  ck.net.spec = spec;
  ck.net.ema_decay = h.get_f64("ema_decay");
  ck.convention = conv_from_name(h.get("convention"));
  ck.step = h.get_i64("step");
  ck.has_train_state = h.get_i64("has_train_state") != 0;
  ck.loss_avg = h.get_f64("loss_avg");
  if (ck.has_train_state) ck.rng_state = h.get("rng");

  const size_t P = static_cast<size_t>(h.get_i64("param_count"));
  if (P != static_cast<size_t>(spec.param_count()))
    fail(ErrorCode::Io, "'" + path + "': param_count disagrees with the architecture");
  size_t want = 8 * P * (ck.has_train_state ? 4u : 2u);
  if (payload.size() != want)
    fail(ErrorCode::Io, "'" + path + "': payload is " + std::to_string(payload.size()) +
                            " bytes, architecture implies " + std::to_string(want));
  ck.net.params.resize(P);
  ck.net.ema_params.resize(P);
  io::read_f64le(payload, 0, ck.net.params.data(), P);
  io::read_f64le(payload, 8 * P, ck.net.ema_params.data(), P);
  if (ck.has_train_state) {
    ck.opt_m.resize(P);
    ck.opt_v.resize(P);
    io::read_f64le(payload, 16 * P, ck.opt_m.data(), P);
    io::read_f64le(payload, 24 * P, ck.opt_v.data(), P);
  }
  return ck;
}

}  // namespace net
}  // namespace sfm
