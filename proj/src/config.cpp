#include "sphereflow/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>

#include "sphereflow/ioutil.hpp"

namespace sfm::cfg {
namespace {

[[noreturn]] void bad_key(const std::string& key, const std::string& what) {
  fail(ErrorCode::Config, "config key '" + key + "': " + what);
}

std::string trim(const std::string& s) {
  const size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

int64_t parse_i64(const std::string& key, const std::string& s, int64_t lo, int64_t hi) {
  int64_t x = 0;
  const char* b = s.data();
  const char* e = b + s.size();
  auto [p, ec] = std::from_chars(b, e, x);
  if (s.empty() || ec != std::errc() || p != e)
    bad_key(key, "cannot parse integer from '" + s + "'");
  if (x < lo || x > hi) bad_key(key, "value " + s + " is out of range");
  return x;
}

uint64_t parse_u64(const std::string& key, const std::string& s) {
  uint64_t x = 0;
  const char* b = s.data();
  const char* e = b + s.size();
  auto [p, ec] = std::from_chars(b, e, x);
  if (s.empty() || ec != std::errc() || p != e)
    bad_key(key, "cannot parse unsigned integer from '" + s + "'");
  return x;
}

double parse_f64(const std::string& key, const std::string& s) {
  double x = 0.0;
  const char* b = s.data();
  const char* e = b + s.size();
  auto [p, ec] = std::from_chars(b, e, x);
  if (s.empty() || ec != std::errc() || p != e) bad_key(key, "cannot parse number from '" + s + "'");
  if (!std::isfinite(x)) bad_key(key, "value must be finite");
  return x;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  bad_key(key, "expected true or false, got '" + s + "'");
}

std::vector<std::string> split_list(const std::string& key, const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  size_t start = 0;
  for (;;) {
    const size_t comma = s.find(',', start);
    const std::string tok =
        trim(comma == std::string::npos ? s.substr(start) : s.substr(start, comma - start));
    if (tok.empty()) bad_key(key, "empty list element");
    out.push_back(tok);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

struct KeyDef {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class Acc>
KeyDef key_int(const char* key, Acc acc) {
  const std::string k = key;
  return {k,
          [k, acc](RunConfig& c, const std::string& v) {
            acc(c) = static_cast<int>(parse_i64(k, v, std::numeric_limits<int>::min(),
                                                std::numeric_limits<int>::max()));
          },
          [acc](const RunConfig& c) { return std::to_string(acc(const_cast<RunConfig&>(c))); }};
}

template <class Acc>
KeyDef key_i64(const char* key, Acc acc) {
  const std::string k = key;
  return {k,
          [k, acc](RunConfig& c, const std::string& v) {
            acc(c) = parse_i64(k, v, std::numeric_limits<int64_t>::min(),
                               std::numeric_limits<int64_t>::max());
          },
          [acc](const RunConfig& c) { return std::to_string(acc(const_cast<RunConfig&>(c))); }};
}

template <class Acc>
KeyDef key_u64(const char* key, Acc acc) {
  const std::string k = key;
  return {k, [k, acc](RunConfig& c, const std::string& v) { acc(c) = parse_u64(k, v); },
          [acc](const RunConfig& c) { return std::to_string(acc(const_cast<RunConfig&>(c))); }};
}

template <class Acc>
KeyDef key_f64(const char* key, Acc acc) {
  const std::string k = key;
  return {k, [k, acc](RunConfig& c, const std::string& v) { acc(c) = parse_f64(k, v); },
          [acc](const RunConfig& c) { return format_double(acc(const_cast<RunConfig&>(c))); }};
}

template <class Acc>
KeyDef key_bool(const char* key, Acc acc) {
  const std::string k = key;
  return {k, [k, acc](RunConfig& c, const std::string& v) { acc(c) = parse_bool(k, v); },
          [acc](const RunConfig& c) {
            return std::string(acc(const_cast<RunConfig&>(c)) ? "true" : "false");
          }};
}

template <class Acc>
KeyDef key_str(const char* key, Acc acc) {
  const std::string k = key;
  return {k, [acc](RunConfig& c, const std::string& v) { acc(c) = v; },
          [acc](const RunConfig& c) { return acc(const_cast<RunConfig&>(c)); }};
}

template <class Acc>
KeyDef key_ints(const char* key, Acc acc) {
  const std::string k = key;
  return {k,
          [k, acc](RunConfig& c, const std::string& v) {
            std::vector<int> xs;
            for (const std::string& tok : split_list(k, v))
              xs.push_back(static_cast<int>(parse_i64(k, tok, std::numeric_limits<int>::min(),
                                                      std::numeric_limits<int>::max())));
            acc(c) = std::move(xs);
          },
          [acc](const RunConfig& c) {
            std::string out;
            for (int x : acc(const_cast<RunConfig&>(c))) {
              if (!out.empty()) out += ',';
              out += std::to_string(x);
            }
            return out;
          }};
}

template <class Acc>
KeyDef key_f64s(const char* key, Acc acc) {
  const std::string k = key;
  return {k,
          [k, acc](RunConfig& c, const std::string& v) {
            std::vector<double> xs;
            for (const std::string& tok : split_list(k, v)) xs.push_back(parse_f64(k, tok));
            acc(c) = std::move(xs);
          },
          [acc](const RunConfig& c) {
            std::string out;
            for (double x : acc(const_cast<RunConfig&>(c))) {
              if (!out.empty()) out += ',';
              out += format_double(x);
            }
            return out;
          }};
}

template <class E>
using EnumNames = std::vector<std::pair<std::string, E>>;

template <class Acc, class E>
KeyDef key_enum(const char* key, Acc acc, EnumNames<E> names) {
  const std::string k = key;
  return {k,
          [k, acc, names](RunConfig& c, const std::string& v) {
            for (const auto& [name, value] : names)
              if (name == v) {
                acc(c) = value;
                return;
              }
            std::string expect;
            for (const auto& [name, value] : names) {
              if (!expect.empty()) expect += ", ";
              expect += name;
            }
            bad_key(k, "expected one of {" + expect + "}, got '" + v + "'");
          },
          [acc, names](const RunConfig& c) {
            const E cur = acc(const_cast<RunConfig&>(c));
            for (const auto& [name, value] : names)
              if (value == cur) return name;
            return std::string("?");
          }};
}

const std::vector<KeyDef>& registry() {
  static const std::vector<KeyDef> defs = [] {
    std::vector<KeyDef> d;
    auto I = [&d](KeyDef kd) { d.push_back(std::move(kd)); };

    I(key_u64("run.seed", [](RunConfig& c) -> uint64_t& { return c.run.seed; }));
    I(key_int("run.threads", [](RunConfig& c) -> int& { return c.run.threads; }));

    I(key_int("manifold.patches", [](RunConfig& c) -> int& { return c.manifold.patches; }));
    I(key_int("manifold.dim", [](RunConfig& c) -> int& { return c.manifold.dim; }));
    I(key_f64("manifold.radius", [](RunConfig& c) -> double& { return c.manifold.radius; }));

    I(key_enum("flow.scheduler", [](RunConfig& c) -> SchedulerKind& { return c.flow.scheduler; },
               EnumNames<SchedulerKind>{{"linear", SchedulerKind::linear}}));
    I(key_enum("flow.time_dist", [](RunConfig& c) -> TimeDist& { return c.flow.time_dist; },
               EnumNames<TimeDist>{{"uniform", TimeDist::uniform}}));
    I(key_f64("flow.shift", [](RunConfig& c) -> double& { return c.flow.shift; }));
    I(key_bool("flow.reverse_time", [](RunConfig& c) -> bool& { return c.flow.reverse_time; }));

    I(key_ints("net.hidden", [](RunConfig& c) -> std::vector<int>& { return c.net.hidden; }));
    I(key_enum(
        "net.act", [](RunConfig& c) -> Activation& { return c.net.act; },
        EnumNames<Activation>{{"smooth_gated", Activation::smooth_gated},
                              {"rectified", Activation::rectified}}));
    I(key_int("net.time_feat_dim", [](RunConfig& c) -> int& { return c.net.time_feat_dim; }));
    I(key_int("net.n_classes", [](RunConfig& c) -> int& { return c.net.n_classes; }));
    I(key_int("net.class_embed_dim", [](RunConfig& c) -> int& { return c.net.class_embed_dim; }));

    I(key_f64("train.lr", [](RunConfig& c) -> double& { return c.train.lr; }));
    I(key_f64("train.beta1", [](RunConfig& c) -> double& { return c.train.beta1; }));
    I(key_f64("train.beta2", [](RunConfig& c) -> double& { return c.train.beta2; }));
    I(key_f64("train.weight_decay", [](RunConfig& c) -> double& { return c.train.weight_decay; }));
    I(key_f64("train.grad_clip", [](RunConfig& c) -> double& { return c.train.grad_clip; }));
    I(key_int("train.batch_size", [](RunConfig& c) -> int& { return c.train.batch_size; }));
    I(key_i64("train.total_steps", [](RunConfig& c) -> int64_t& { return c.train.total_steps; }));
    I(key_f64("train.ema_decay", [](RunConfig& c) -> double& { return c.train.ema_decay; }));
    I(key_i64("train.checkpoint_every",
              [](RunConfig& c) -> int64_t& { return c.train.checkpoint_every; }));
    I(key_i64("train.warmup_steps", [](RunConfig& c) -> int64_t& { return c.train.warmup_steps; }));

    I(key_int("sample.steps", [](RunConfig& c) -> int& { return c.sample.steps; }));
    I(key_enum("sample.method", [](RunConfig& c) -> SampleMethod& { return c.sample.method; },
               EnumNames<SampleMethod>{{"euler_projection", SampleMethod::euler_projection},
                                       {"rodrigues", SampleMethod::rodrigues}}));
    I(key_bool("sample.use_ema", [](RunConfig& c) -> bool& { return c.sample.use_ema; }));
    I(key_int("sample.label", [](RunConfig& c) -> int& { return c.sample.label; }));
    I(key_i64("sample.n", [](RunConfig& c) -> int64_t& { return c.sample.n; }));

    I(key_enum("data.kind", [](RunConfig& c) -> data::GenKind& { return c.data.kind; },
               EnumNames<data::GenKind>{{"vmf_mixture", data::GenKind::vmf_mixture},
                                        {"checkerboard_s2", data::GenKind::checkerboard_s2}}));
    I(key_i64("data.n", [](RunConfig& c) -> int64_t& { return c.data.n; }));
    I(key_int("data.components", [](RunConfig& c) -> int& { return c.data.components; }));
    I(key_f64("data.kappa", [](RunConfig& c) -> double& { return c.data.kappa; }));
    I(key_f64s("data.weights", [](RunConfig& c) -> std::vector<double>& { return c.data.weights; }));
    I(key_int("data.resolution", [](RunConfig& c) -> int& { return c.data.resolution; }));

    I(key_f64("eval.bandwidth", [](RunConfig& c) -> double& { return c.eval.bandwidth; }));

    I(key_int("conflict.signal_dim", [](RunConfig& c) -> int& { return c.conflict.signal_dim; }));
    I(key_int("conflict.feature_dim", [](RunConfig& c) -> int& { return c.conflict.feature_dim; }));
    I(key_int("conflict.n_samples", [](RunConfig& c) -> int& { return c.conflict.n_samples; }));
    I(key_int("conflict.batch_size", [](RunConfig& c) -> int& { return c.conflict.batch_size; }));
    I(key_i64("conflict.steps", [](RunConfig& c) -> int64_t& { return c.conflict.steps; }));
    I(key_i64("conflict.log_every", [](RunConfig& c) -> int64_t& { return c.conflict.log_every; }));
    I(key_f64("conflict.lr", [](RunConfig& c) -> double& { return c.conflict.lr; }));
    I(key_f64("conflict.lambda_align",
              [](RunConfig& c) -> double& { return c.conflict.lambda_align; }));
    I(key_int("conflict.n_seeds", [](RunConfig& c) -> int& { return c.conflict.n_seeds; }));

    I(key_str("probe.kind", [](RunConfig& c) -> std::string& { return c.probe.kind; }));
    I(key_f64s("probe.alphas", [](RunConfig& c) -> std::vector<double>& { return c.probe.alphas; }));
    I(key_int("probe.n", [](RunConfig& c) -> int& { return c.probe.n; }));
    I(key_int("probe.feature_dim", [](RunConfig& c) -> int& { return c.probe.feature_dim; }));
    I(key_int("probe.out_dim", [](RunConfig& c) -> int& { return c.probe.out_dim; }));

    I(key_str("check.suite", [](RunConfig& c) -> std::string& { return c.check.suite; }));
    I(key_str("check.inject_fault",
              [](RunConfig& c) -> std::string& { return c.check.inject_fault; }));

    I(key_str("paths.dataset", [](RunConfig& c) -> std::string& { return c.paths.dataset; }));
    I(key_str("paths.out_dir", [](RunConfig& c) -> std::string& { return c.paths.out_dir; }));
    I(key_str("paths.checkpoint", [](RunConfig& c) -> std::string& { return c.paths.checkpoint; }));
    I(key_str("paths.resume", [](RunConfig& c) -> std::string& { return c.paths.resume; }));
    I(key_str("paths.samples", [](RunConfig& c) -> std::string& { return c.paths.samples; }));
    I(key_str("paths.gen", [](RunConfig& c) -> std::string& { return c.paths.gen; }));
    I(key_str("paths.ref", [](RunConfig& c) -> std::string& { return c.paths.ref; }));
    I(key_str("paths.report", [](RunConfig& c) -> std::string& { return c.paths.report; }));
    I(key_str("paths.conflict_csv",
              [](RunConfig& c) -> std::string& { return c.paths.conflict_csv; }));
    I(key_str("paths.probe_csv", [](RunConfig& c) -> std::string& { return c.paths.probe_csv; }));

    return d;
  }();
  return defs;
}

const KeyDef* find_key(const std::string& key) {
  for (const KeyDef& kd : registry())
    if (kd.key == key) return &kd;
  return nullptr;
}

const std::set<std::string>& known_sections() {
  static const std::set<std::string> sections = [] {
    std::set<std::string> s;
    for (const KeyDef& kd : registry()) s.insert(kd.key.substr(0, kd.key.find('.')));
    return s;
  }();
  return sections;
}

void req(bool ok, const std::string& key, const std::string& what) {
  if (!ok) bad_key(key, what);
}

std::vector<data::VmfComponent> mixture_components(const RunConfig& c) {
  const int k = c.data.components;
  const int dim = c.manifold.dim;
  std::vector<double> w = c.data.weights;
  if (w.empty()) w.assign(static_cast<size_t>(k), 1.0 / k);
  if (static_cast<int>(w.size()) != k)
    bad_key("data.weights", "expected " + std::to_string(k) + " entries, got " +
                                std::to_string(w.size()));
  // Placement rng is a fixed constant, not run.seed; see gen_spec() docs.
  Rng place(0x6d69787475726573ull);
  std::vector<data::VmfComponent> comps(static_cast<size_t>(k));
  for (int j = 0; j < k; ++j) {
    comps[j].kappa = c.data.kappa;
    comps[j].weight = w[j];
    comps[j].mean.assign(static_cast<size_t>(dim), 0.0);
    if (k <= 2) {
      comps[j].mean[dim - 1] = j == 0 ? 1.0 : -1.0;
    } else {
      double s2 = 0.0;
      do {
        s2 = 0.0;
        for (int i = 0; i < dim; ++i) {
          comps[j].mean[i] = place.normal();
          s2 += comps[j].mean[i] * comps[j].mean[i];
        }
      } while (s2 < 1e-12);
      const double inv = 1.0 / std::sqrt(s2);
      for (int i = 0; i < dim; ++i) comps[j].mean[i] *= inv;
    }
  }
  return comps;
}

}  // namespace

const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const KeyDef& kd : registry()) k.push_back(kd.key);
    return k;
  }();
  return keys;
}

void set_key(RunConfig& c, const std::string& key, const std::string& value) {
  const KeyDef* kd = find_key(key);
  if (!kd) fail(ErrorCode::Config, "unknown config key '" + key + "'");
  kd->set(c, value);
}

std::string get_key(const RunConfig& c, const std::string& key) {
  const KeyDef* kd = find_key(key);
  if (!kd) fail(ErrorCode::Config, "unknown config key '" + key + "'");
  return kd->get(c);
}

std::string render(const RunConfig& c) {
  std::string out;
  std::string section;
  for (const KeyDef& kd : registry()) {
    const std::string sec = kd.key.substr(0, kd.key.find('.'));
    if (sec != section) {
      if (!out.empty()) out += '\n';
      out += '[' + sec + "]\n";
      section = sec;
    }
    out += kd.key.substr(sec.size() + 1) + " = " + kd.get(c) + '\n';
  }
  return out;
}

void ConfigStack::load_text(const std::string& text, const std::string& origin) {
  std::string section;
  size_t pos = 0;
  int lineno = 0;
  while (pos < text.size()) {
    const size_t nl = text.find('\n', pos);
    const std::string line =
        nl == std::string::npos ? text.substr(pos) : text.substr(pos, nl - pos);
    pos = nl == std::string::npos ? text.size() : nl + 1;
    ++lineno;
    const std::string at = origin + ":" + std::to_string(lineno) + ": ";

    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[') {
      if (t.back() != ']') fail(ErrorCode::Config, at + "malformed section line '" + t + "'");
      section = trim(t.substr(1, t.size() - 2));
      if (!known_sections().count(section))
        fail(ErrorCode::Config, at + "unknown config section '" + section + "'");
      continue;
    }
    const size_t eq = t.find('=');
    if (eq == std::string::npos)
      fail(ErrorCode::Config, at + "expected key = value, got '" + t + "'");
    const std::string name = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (name.empty()) fail(ErrorCode::Config, at + "missing key before '='");
    if (section.empty())
      fail(ErrorCode::Config, at + "key '" + name + "' appears before any [section]");
    const std::string key = section + "." + name;
    set_key(config, key, value);
    keys.insert(key);
  }
}

void ConfigStack::load_file(const std::string& path) { load_text(io::read_file(path), path); }

void ConfigStack::set(const std::string& key, const std::string& value) {
  set_key(config, key, value);
  keys.insert(key);
}

double resolved_radius(const RunConfig& c) {
  return c.manifold.radius > 0.0 ? c.manifold.radius
                                 : std::sqrt(static_cast<double>(c.manifold.dim));
}

TimeConvention convention(const RunConfig& c) {
  return c.flow.reverse_time ? TimeConvention::data_at_0 : TimeConvention::data_at_1;
}

NetSpec net_spec(const RunConfig& c) {
  NetSpec s;
  s.n_patches = c.manifold.patches;
  s.dim = c.manifold.dim;
  s.radius = resolved_radius(c);
  s.hidden = c.net.hidden;
  s.act = c.net.act;
  s.time_feat_dim = c.net.time_feat_dim;
  s.n_classes = c.net.n_classes;
  s.class_embed_dim = c.net.class_embed_dim;
  return s;
}

TrainConfig train_config(const RunConfig& c) {
  TrainConfig t;
  t.lr = c.train.lr;
  t.beta1 = c.train.beta1;
  t.beta2 = c.train.beta2;
  t.weight_decay = c.train.weight_decay;
  t.grad_clip = c.train.grad_clip;
  t.batch_size = c.train.batch_size;
  t.total_steps = c.train.total_steps;
  t.ema_decay = c.train.ema_decay;
  t.seed = c.run.seed;
  t.time_dist = c.flow.time_dist;
  t.convention = convention(c);
  t.threads = c.run.threads;
  t.checkpoint_every = c.train.checkpoint_every;
  t.warmup_steps = c.train.warmup_steps;
  return t;
}

SampleConfig sample_config(const RunConfig& c) {
  SampleConfig s;
  s.steps = c.sample.steps;
  s.method = c.sample.method;
  s.shift = c.flow.shift;
  s.use_ema = c.sample.use_ema;
  s.label = c.sample.label;
  s.seed = c.run.seed;
  s.convention = convention(c);
  return s;
}

data::GenSpec gen_spec(const RunConfig& c) {
  data::GenSpec g;
  g.kind = c.data.kind;
  g.n = c.data.n;
  g.n_patches = c.manifold.patches;
  g.dim = c.manifold.dim;
  g.radius = resolved_radius(c);
  g.seed = c.run.seed;
  g.resolution = c.data.resolution;
  if (g.kind == data::GenKind::vmf_mixture) g.components = mixture_components(c);
  return g;
}

ConflictConfig conflict_config(const RunConfig& c) {
  ConflictConfig k = c.conflict;
  k.base_seed = c.run.seed;
  k.threads = c.run.threads;
  return k;
}

void validate(const RunConfig& c) {
  req(c.run.threads >= 0, "run.threads", "must be >= 0");

  req(c.manifold.patches >= 1, "manifold.patches", "must be >= 1");
  req(c.manifold.dim >= 2, "manifold.dim", "must be >= 2");
  req(c.manifold.radius >= 0.0 && std::isfinite(c.manifold.radius), "manifold.radius",
      "must be >= 0 (0 resolves to sqrt(dim))");

  req(std::isfinite(c.flow.shift) && c.flow.shift > 0.0, "flow.shift", "must be positive");

  req(!c.net.hidden.empty(), "net.hidden", "needs at least one layer width");
  for (int h : c.net.hidden) req(h >= 1, "net.hidden", "layer widths must be >= 1");
  req(c.net.time_feat_dim >= 2 && c.net.time_feat_dim % 2 == 0, "net.time_feat_dim",
      "must be even and >= 2");
  req(c.net.n_classes >= 0, "net.n_classes", "must be >= 0");
  req(c.net.class_embed_dim >= 1, "net.class_embed_dim", "must be >= 1");

  req(std::isfinite(c.train.lr) && c.train.lr > 0.0, "train.lr", "must be positive");
  req(c.train.beta1 >= 0.0 && c.train.beta1 < 1.0, "train.beta1", "must be in [0, 1)");
  req(c.train.beta2 >= 0.0 && c.train.beta2 < 1.0, "train.beta2", "must be in [0, 1)");
  req(c.train.weight_decay >= 0.0, "train.weight_decay", "must be >= 0");
  req(c.train.grad_clip >= 0.0, "train.grad_clip", "must be >= 0 (0 disables)");
  req(c.train.batch_size >= 1, "train.batch_size", "must be >= 1");
  req(c.train.total_steps >= 1, "train.total_steps", "must be >= 1");
  req(c.train.ema_decay >= 0.0 && c.train.ema_decay < 1.0, "train.ema_decay",
      "must be in [0, 1)");
  req(c.train.checkpoint_every >= 1, "train.checkpoint_every", "must be >= 1");
  req(c.train.warmup_steps >= 0, "train.warmup_steps", "must be >= 0");

  req(c.sample.steps >= 1, "sample.steps", "must be >= 1");
  req(c.sample.label >= -1, "sample.label", "must be -1 or a class index");
  req(c.sample.n >= 1, "sample.n", "must be >= 1");
  if (c.net.n_classes == 0)
    req(c.sample.label == -1, "sample.label", "set but net.n_classes is 0");
  else
    req(c.sample.label < c.net.n_classes, "sample.label",
        "must be below net.n_classes = " + std::to_string(c.net.n_classes));

  req(c.data.n >= 1, "data.n", "must be >= 1");
  req(c.data.components >= 1, "data.components", "must be >= 1");
  req(std::isfinite(c.data.kappa) && c.data.kappa >= 0.0, "data.kappa", "must be >= 0");
  if (!c.data.weights.empty()) {
    req(static_cast<int>(c.data.weights.size()) == c.data.components, "data.weights",
        "expected " + std::to_string(c.data.components) + " entries, got " +
            std::to_string(c.data.weights.size()));
    double sum = 0.0;
    for (double w : c.data.weights) {
      req(std::isfinite(w) && w >= 0.0, "data.weights", "entries must be >= 0");
      sum += w;
    }
    req(std::abs(sum - 1.0) <= 1e-12, "data.weights",
        "must sum to 1, got " + format_double(sum));
  }
  req(c.data.resolution >= 1, "data.resolution", "must be >= 1");

  req(std::isfinite(c.eval.bandwidth) && c.eval.bandwidth >= 0.0, "eval.bandwidth",
      "must be >= 0 (0 picks the median heuristic)");

  req(c.probe.kind == "linear" || c.probe.kind == "direction", "probe.kind",
      "expected one of {linear, direction}, got '" + c.probe.kind + "'");
  req(!c.probe.alphas.empty(), "probe.alphas", "needs at least one value");
  for (double a : c.probe.alphas)
    req(std::isfinite(a) && a > 0.0, "probe.alphas", "values must be positive");
  req(c.probe.n >= 1, "probe.n", "must be >= 1");
  req(c.probe.feature_dim >= 1, "probe.feature_dim", "must be >= 1");
  req(c.probe.out_dim >= 1, "probe.out_dim", "must be >= 1");

  // Backstops: the derived sub-configs re-check their own invariants.
  net_spec(c).validate();
  train_config(c).validate();
  sample_config(c).validate();
  gen_spec(c).validate();
  conflict_config(c).validate();
}

std::string manifest_text(const std::string& command, const RunConfig& c,
                          const std::vector<std::pair<std::string, std::string>>& extra) {
  std::string out = "command = " + command + "\n\n" + render(c);
  if (!extra.empty()) {
    out += '\n';
    for (const auto& [key, value] : extra) out += key + " = " + value + '\n';
  }
  return out;
}

}  // namespace sfm::cfg
