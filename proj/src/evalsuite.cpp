#include "sphereflow/evalsuite.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <map>

#include "sphereflow/ioutil.hpp"

namespace sfm::eval {

namespace {

constexpr int kPermutations = 200;
constexpr int kBandwidthSubsample = 256;

void check_batch(const std::vector<LatentField>& batch, const char* who) {
  if (batch.size() < 16)
    fail(ErrorCode::TooFewSamples,
         std::string(who) + ": got " + std::to_string(batch.size()) + " samples, need >= 16");
  for (size_t i = 1; i < batch.size(); ++i) geom::check_same_shape(batch[0], batch[i], who);
}

std::vector<const LatentField*> make_pool(const std::vector<LatentField>& gen,
                                          const std::vector<LatentField>& ref, const char* who) {
  geom::check_same_shape(gen[0], ref[0], who);
  std::vector<const LatentField*> pool;
  pool.reserve(gen.size() + ref.size());
  for (const LatentField& f : gen) pool.push_back(&f);
  for (const LatentField& f : ref) pool.push_back(&f);
  return pool;
}

// Gram matrix over the pooled samples, float to halve the footprint at eval
// scale. Each (i, j) pair is written by exactly one worker, so the matrix is
// identical for any thread count.
std::vector<float> pooled_gram(const std::vector<const LatentField*>& pool, double bandwidth,
                               int threads) {
  const size_t p = pool.size();
  std::vector<float> gram(p * p);
  parallel_for(static_cast<int64_t>(p), resolve_threads(threads), [&](int64_t lo, int64_t hi) {
    for (size_t i = static_cast<size_t>(lo); i < static_cast<size_t>(hi); ++i) {
      gram[i * p + i] = 1.0f;
      for (size_t j = i + 1; j < p; ++j) {
        const float k = static_cast<float>(kernel_value(*pool[i], *pool[j], bandwidth));
        gram[i * p + j] = k;
        gram[j * p + i] = k;
      }
    }
  });
  return gram;
}

// Paired U-statistic over positionally paired samples of equal size m.
// Each unordered pair contributes
//   h = k(x_i,x_j) + k(y_i,y_j) - k(x_i,y_j) - k(x_j,y_i)
// accumulated in one double expression; for identical arrays all four terms
// are the same stored float, so every h and the total are exactly zero.
double mmd2_paired(const std::vector<float>& gram, size_t p, const int* ix, const int* iy,
                   size_t m) {
  double acc = 0.0;
  for (size_t i = 0; i < m; ++i) {
    const float* rx = gram.data() + static_cast<size_t>(ix[i]) * p;
    const float* ry = gram.data() + static_cast<size_t>(iy[i]) * p;
    for (size_t j = i + 1; j < m; ++j) {
      const double h = (static_cast<double>(rx[ix[j]]) + static_cast<double>(ry[iy[j]])) -
                       static_cast<double>(rx[iy[j]]) - static_cast<double>(ry[ix[j]]);
      acc += h;
    }
  }
  return 2.0 * acc / (static_cast<double>(m) * (static_cast<double>(m) - 1.0));
}

// General unbiased estimator for unequal sizes. Three separately accumulated
// sums; role-symmetric up to rounding.
double mmd2_general(const std::vector<float>& gram, size_t p, const int* ix, const int* iy,
                    size_t m, size_t n) {
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (size_t i = 0; i < m; ++i) {
    const float* row = gram.data() + static_cast<size_t>(ix[i]) * p;
    for (size_t j = i + 1; j < m; ++j) sxx += row[ix[j]];
    for (size_t j = 0; j < n; ++j) sxy += row[iy[j]];
  }
  for (size_t i = 0; i < n; ++i) {
    const float* row = gram.data() + static_cast<size_t>(iy[i]) * p;
    for (size_t j = i + 1; j < n; ++j) syy += row[iy[j]];
  }
  return 2.0 * sxx / (static_cast<double>(m) * (static_cast<double>(m) - 1.0)) +
         2.0 * syy / (static_cast<double>(n) * (static_cast<double>(n) - 1.0)) -
         2.0 * sxy / (static_cast<double>(m) * static_cast<double>(n));
}

double mmd2_stat(const std::vector<float>& gram, size_t p, const int* ix, const int* iy, size_t m,
                 size_t n) {
  if (m == n) return mmd2_paired(gram, p, ix, iy, m);
  return mmd2_general(gram, p, ix, iy, m, n);
}

// Pool indices sorted by content so the permutation null does not depend on
// which argument was passed first. Fields with identical bytes are
// interchangeable in every statistic, so their relative order is free.
int64_t parse_count(const std::string& s) {
  char* end = nullptr;
  const long long x = std::strtoll(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0') fail(ErrorCode::Io, "not a count: '" + s + "'");
  return x;
}

std::vector<int> canonical_order(const std::vector<const LatentField*>& pool) {
  const size_t p = pool.size();
  const size_t bytes = pool[0]->data.size() * sizeof(double);
  std::vector<uint64_t> hash(p);
  for (size_t i = 0; i < p; ++i) hash[i] = fnv1a64(pool[i]->data.v.data(), bytes);
  std::vector<int> order(p);
  for (size_t i = 0; i < p; ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (hash[a] != hash[b]) return hash[a] < hash[b];
    return std::memcmp(pool[a]->data.v.data(), pool[b]->data.v.data(), bytes) < 0;
  });
  return order;
}

}  // namespace

double manifold_residual(const std::vector<LatentField>& samples) {
  if (samples.empty()) fail(ErrorCode::EmptyBatch, "manifold_residual: no samples");
  double worst = 0.0;
  for (const LatentField& f : samples) worst = std::max(worst, geom::max_norm_residual(f));
  return worst;
}

double mean_geodesic_distance(const LatentField& a, const LatentField& b) {
  AngularDistances d = geom::angular_distance(a, b);
  double sum = 0.0;
  for (double w : d.omega) sum += w;
  return sum / static_cast<double>(d.omega.size());
}

double kernel_value(const LatentField& a, const LatentField& b, double bandwidth) {
  if (!(bandwidth > 0.0)) fail(ErrorCode::Config, "kernel_value: bandwidth must be positive");
  const double d = mean_geodesic_distance(a, b);
  return std::exp(-d * d / (2.0 * bandwidth * bandwidth));
}

double median_bandwidth(const std::vector<LatentField>& gen, const std::vector<LatentField>& ref,
                        uint64_t seed, int threads) {
  check_batch(gen, "median_bandwidth");
  check_batch(ref, "median_bandwidth");
  std::vector<const LatentField*> pool = make_pool(gen, ref, "median_bandwidth");
  const size_t p = pool.size();
  const size_t k = std::min(static_cast<size_t>(kBandwidthSubsample), p);

  // Partial Fisher-Yates: after i swaps the first i entries are a uniform
  // draw without replacement.
  std::vector<size_t> pick(p);
  for (size_t i = 0; i < p; ++i) pick[i] = i;
  Rng rng(mix_seed(seed, 2));
  for (size_t i = 0; i < k; ++i) std::swap(pick[i], pick[i + rng.uniform_index(p - i)]);

  std::vector<double> dists(k * (k - 1) / 2);
  parallel_for(static_cast<int64_t>(k), resolve_threads(threads), [&](int64_t lo, int64_t hi) {
    for (size_t i = static_cast<size_t>(lo); i < static_cast<size_t>(hi); ++i) {
      size_t base = i * k - i * (i + 1) / 2;
      for (size_t j = i + 1; j < k; ++j)
        dists[base + j - i - 1] = mean_geodesic_distance(*pool[pick[i]], *pool[pick[j]]);
    }
  });
  std::nth_element(dists.begin(), dists.begin() + static_cast<int64_t>(dists.size() / 2),
                   dists.end());
  const double med = dists[dists.size() / 2];
  if (!(med > 0.0))
    fail(ErrorCode::Config, "median_bandwidth: collapsed to zero (degenerate sample set)");
  return med;
}

MmdResult geodesic_mmd(const std::vector<LatentField>& gen, const std::vector<LatentField>& ref,
                       double bandwidth, uint64_t seed, int threads) {
  check_batch(gen, "geodesic_mmd");
  check_batch(ref, "geodesic_mmd");
  if (!(bandwidth > 0.0)) fail(ErrorCode::Config, "geodesic_mmd: bandwidth must be positive");
  const size_t m = gen.size(), n = ref.size(), p = m + n;
  std::vector<const LatentField*> pool = make_pool(gen, ref, "geodesic_mmd");
  const std::vector<float> gram = pooled_gram(pool, bandwidth, threads);

  std::vector<int> identity(p);
  for (size_t i = 0; i < p; ++i) identity[i] = static_cast<int>(i);
  MmdResult res;
  res.mmd2 = mmd2_stat(gram, p, identity.data(), identity.data() + m, m, n);

  // Permutation null. Candidates are shuffled in content order and split at
  // min(m, n), so the same seed yields bitwise identical null statistics when
  // the arguments are swapped. Each permutation owns a derived rng, which
  // keeps the null independent of the thread count.
  const std::vector<int> canon = canonical_order(pool);
  const size_t lopt = std::min(m, n);
  std::vector<double> null_stats(kPermutations);
  parallel_for(kPermutations, resolve_threads(threads), [&](int64_t lo, int64_t hi) {
    std::vector<int> idx(p);
    for (int64_t b = lo; b < hi; ++b) {
      idx = canon;
      Rng rng(mix_seed(seed, 100 + static_cast<uint64_t>(b)));
      for (size_t i = p; i > 1; --i) std::swap(idx[i - 1], idx[rng.uniform_index(i)]);
      null_stats[static_cast<size_t>(b)] =
          mmd2_stat(gram, p, idx.data(), idx.data() + lopt, lopt, p - lopt);
    }
  });
  std::sort(null_stats.begin(), null_stats.end());
  // ceil(0.95 * 200) = 190, zero-based index 189.
  res.null95 = null_stats[189];
  return res;
}

EvalReport evaluate(const std::vector<LatentField>& gen, const std::vector<int>& gen_labels,
                    const std::vector<LatentField>& ref, const std::vector<int>& ref_labels,
                    double bandwidth, uint64_t seed, int threads) {
  check_batch(gen, "evaluate");
  check_batch(ref, "evaluate");
  EvalReport rep;
  rep.n_gen = static_cast<int64_t>(gen.size());
  rep.n_ref = static_cast<int64_t>(ref.size());
  rep.manifold_residual_max = manifold_residual(gen);
  rep.bandwidth = bandwidth > 0.0 ? bandwidth : median_bandwidth(gen, ref, seed, threads);
  MmdResult top = geodesic_mmd(gen, ref, rep.bandwidth, seed, threads);
  rep.mmd2 = top.mmd2;
  rep.mmd2_null_95 = top.null95;

  if (!gen_labels.empty() && !ref_labels.empty()) {
    if (gen_labels.size() != gen.size() || ref_labels.size() != ref.size())
      fail(ErrorCode::ShapeMismatch, "evaluate: label counts disagree with sample counts");
    std::map<int, std::pair<std::vector<LatentField>, std::vector<LatentField>>> split;
    for (size_t i = 0; i < gen.size(); ++i) split[gen_labels[i]].first.push_back(gen[i]);
    for (size_t i = 0; i < ref.size(); ++i) split[ref_labels[i]].second.push_back(ref[i]);
    for (const auto& [cls, pair] : split) {
      if (pair.first.size() < 16 || pair.second.size() < 16) continue;
      MmdResult r = geodesic_mmd(pair.first, pair.second, rep.bandwidth,
                                 mix_seed(seed, 7000 + static_cast<uint64_t>(cls)), threads);
      rep.per_class_mmd2.emplace_back(cls, r.mmd2);
    }
  }
  return rep;
}

void write_report(const EvalReport& report, const std::string& path) {
  std::string out = "metric,value\n";
  out += "manifold_residual_max," + format_double(report.manifold_residual_max) + "\n";
  out += "mmd2," + format_double(report.mmd2) + "\n";
  out += "mmd2_null_95," + format_double(report.mmd2_null_95) + "\n";
  out += "bandwidth," + format_double(report.bandwidth) + "\n";
  out += "n_gen," + std::to_string(report.n_gen) + "\n";
  out += "n_ref," + std::to_string(report.n_ref) + "\n";
  for (const auto& [cls, v] : report.per_class_mmd2)
    out += "mmd2_class_" + std::to_string(cls) + "," + format_double(v) + "\n";
  io::write_file(path, out);
}

EvalReport read_report(const std::string& path) {
  const std::string text = io::read_file(path);
  EvalReport rep;
  size_t pos = 0;
  bool first = true;
  while (pos < text.size()) {
    size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    const std::string line = text.substr(pos, eol - pos);
    pos = eol + 1;
    if (line.empty()) continue;
    if (first) {
      if (line != "metric,value") fail(ErrorCode::Io, "read_report: bad header in " + path);
      first = false;
      continue;
    }
    const size_t comma = line.find(',');
    if (comma == std::string::npos) fail(ErrorCode::Io, "read_report: bad row in " + path);
    const std::string key = line.substr(0, comma);
    const std::string val = line.substr(comma + 1);
    if (key == "manifold_residual_max")
      rep.manifold_residual_max = parse_double(val);
    else if (key == "mmd2")
      rep.mmd2 = parse_double(val);
    else if (key == "mmd2_null_95")
      rep.mmd2_null_95 = parse_double(val);
    else if (key == "bandwidth")
      rep.bandwidth = parse_double(val);
    else if (key == "n_gen")
      rep.n_gen = parse_count(val);
    else if (key == "n_ref")
      rep.n_ref = parse_count(val);
    else if (key.rfind("mmd2_class_", 0) == 0)
      rep.per_class_mmd2.emplace_back(static_cast<int>(parse_count(key.substr(11))),
                                      parse_double(val));
    else
      fail(ErrorCode::Io, "read_report: unknown metric '" + key + "' in " + path);
  }
  return rep;
}

}  // namespace sfm::eval
