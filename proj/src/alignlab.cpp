#include "sphereflow/alignlab.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sphereflow/ioutil.hpp"
#include "sphereflow/trainer.hpp"

namespace sfm {

void StageConfig::validate() const {
  if (stage < 1 || stage > 4)
    throw Error(ErrorCode::Config, "stage_objective: stage must be 1..4, got " +
                                       std::to_string(stage));
  for (double w : {lambda_cos, lambda_l1, lambda_lpips, lambda_adv})
    if (!std::isfinite(w) || w < 0.0)
      throw Error(ErrorCode::Config, "stage_objective: weights must be finite and >= 0");
}

void ConflictConfig::validate() const {
  if (signal_dim < 2) throw Error(ErrorCode::Config, "conflict: signal_dim must be >= 2");
  if (feature_dim < 2) throw Error(ErrorCode::Config, "conflict: feature_dim must be >= 2");
  if (n_samples < 8) throw Error(ErrorCode::Config, "conflict: n_samples must be >= 8");
  if (batch_size < 1 || batch_size > n_samples)
    throw Error(ErrorCode::Config, "conflict: batch_size must be in [1, n_samples]");
  if (steps < 1) throw Error(ErrorCode::Config, "conflict: steps must be >= 1");
  if (log_every < 1) throw Error(ErrorCode::Config, "conflict: log_every must be >= 1");
  if (!std::isfinite(lr) || lr <= 0.0) throw Error(ErrorCode::Config, "conflict: lr must be > 0");
  if (!std::isfinite(lambda_align) || lambda_align < 0.0)
    throw Error(ErrorCode::Config, "conflict: lambda_align must be >= 0");
  if (n_seeds < 5) throw Error(ErrorCode::Config, "conflict: n_seeds must be >= 5");
  if (threads < 0) throw Error(ErrorCode::Config, "conflict: threads must be >= 0");
}

namespace align {

namespace {

void check_pair(const FeaturePair& pair, const char* who) {
  if (!pair.z_s.same_shape(pair.z_t))
    throw Error(ErrorCode::ShapeMismatch,
                std::string(who) + ": student " + std::to_string(pair.z_s.rows) + "x" +
                    std::to_string(pair.z_s.cols) + " vs teacher " +
                    std::to_string(pair.z_t.rows) + "x" + std::to_string(pair.z_t.cols));
  if (pair.z_s.rows == 0 || pair.z_s.cols == 0)
    throw Error(ErrorCode::EmptyBatch, std::string(who) + ": empty feature arrays");
}

}  // namespace

AlignResult cosine_align_loss(const FeaturePair& pair) {
  check_pair(pair, "cosine_align_loss");
  const int n = pair.z_s.rows;
  const int c = pair.z_s.cols;
  AlignResult res;
  res.grad_s = Array2D(n, c);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const double* s = pair.z_s.row(i);
    const double* t = pair.z_t.row(i);
    const double ns = geom::patch_norm(s, c);
    const double nt = geom::patch_norm(t, c);
    if (ns <= geom::kEpsZero || nt <= geom::kEpsZero)
      throw Error(ErrorCode::ZeroPatch, "cosine_align_loss: patch " + std::to_string(i) +
                                            " has near-zero norm");
    const double cosv =
        std::clamp(geom::patch_dot(s, t, c) / (ns * nt), -1.0, 1.0);
    acc += 1.0 - cosv;
    double* g = res.grad_s.row(i);
    const double inv = 1.0 / (static_cast<double>(n) * ns);
    for (int j = 0; j < c; ++j) g[j] = -(t[j] / nt - cosv * (s[j] / ns)) * inv;
  }
  res.loss = acc / n;
  return res;
}

AlignResult mse_align_loss(const FeaturePair& pair) {
  check_pair(pair, "mse_align_loss");
  AlignResult res;
  res.grad_s = Array2D(pair.z_s.rows, pair.z_s.cols);
  const double scale = 1.0 / static_cast<double>(pair.z_s.size());
  double acc = 0.0;
  for (size_t i = 0; i < pair.z_s.size(); ++i) {
    const double d = pair.z_s.v[i] - pair.z_t.v[i];
    acc += d * d;
    res.grad_s.v[i] = 2.0 * d * scale;
  }
  res.loss = acc * scale;
  return res;
}

Array2D noise_augment(const Array2D& z, double tau, Rng& rng) {
  if (!std::isfinite(tau) || tau < 0.0)
    throw Error(ErrorCode::Config, "noise_augment: tau must be finite and >= 0, got " +
                                       format_double(tau));
  if (tau == 0.0) return z;
  Array2D out = z;
  const double sigma = rng.uniform(0.0, tau);
  for (auto& x : out.v) x += sigma * rng.normal();
  return out;
}

StageBreakdown stage_objective(const StageConfig& cfg, double recon_l1, const FeaturePair& pair) {
  cfg.validate();
  StageBreakdown b;
  b.encoder_frozen = cfg.encoder_frozen();
  const bool cos_on = cfg.stage <= 2;
  const bool adv_on = cfg.stage >= 2;
  const double cos_value = cos_on ? cosine_align_loss(pair).loss : 0.0;
  b.terms = {
      {"cos", cfg.lambda_cos, cos_value, 0.0, cos_on, true},
      {"l1", cfg.lambda_l1, recon_l1, 0.0, true, true},
      {"lpips", cfg.lambda_lpips, 0.0, 0.0, true, false},
      {"adv", cfg.lambda_adv, 0.0, 0.0, adv_on, false},
  };
  for (auto& t : b.terms) {
    if (t.enabled && t.available) t.contribution = t.weight * t.value;
    b.total += t.contribution;
  }
  return b;
}

namespace {

// One (seed, arm) training run of the conflict experiment. Everything the
// run touches is derived from its own seed streams, so the two arms of a
// seed see identical data, teacher, and initialization.
std::vector<ConflictRow> run_conflict_arm(const ConflictConfig& cfg, int seed_index,
                                          bool cosine_arm) {
  const int d = cfg.signal_dim;
  const int c = cfg.feature_dim;
  const int n = cfg.n_samples;
  const uint64_t seed_k = mix_seed(cfg.base_seed, static_cast<uint64_t>(seed_index));

  Array2D teacher_map(c, d);
  {
    Rng rng(mix_seed(seed_k, 0));
    const double s = 1.0 / std::sqrt(static_cast<double>(d));
    for (auto& x : teacher_map.v) x = s * rng.normal();
  }
  // Inputs carry per-sample scales: reconstruction has to track them, and a
  // linear encoder necessarily propagates them into the feature norms. The
  // teacher norms below are independent noise, so the mse arm is forced to
  // fight the propagation that the cosine arm rides for free.
  Array2D data(n, d);
  {
    Rng rng(mix_seed(seed_k, 1));
    for (int i = 0; i < n; ++i) {
      const double rho = rng.uniform(0.5, 2.0);
      double* x = data.row(i);
      for (int j = 0; j < d; ++j) x[j] = rho * rng.normal();
    }
  }
  Array2D teacher(n, c);
  {
    Rng rng(mix_seed(seed_k, 2));
    for (int i = 0; i < n; ++i) {
      const double* x = data.row(i);
      double* t = teacher.row(i);
      for (int j = 0; j < c; ++j) t[j] = geom::patch_dot(teacher_map.row(j), x, d);
      const double norm = geom::patch_norm(t, c);
      if (norm <= geom::kEpsZero)
        throw Error(ErrorCode::ZeroPatch, "conflict_experiment: degenerate teacher feature");
      const double target = rng.uniform(0.5, 2.0);
      for (int j = 0; j < c; ++j) t[j] *= target / norm;
    }
  }

  // Parameter layout: encoder (c x d) rows first, then decoder (d x c).
  const size_t enc_size = static_cast<size_t>(c) * d;
  std::vector<double> params(enc_size + static_cast<size_t>(d) * c);
  {
    Rng rng(mix_seed(seed_k, 3));
    const double se = 1.0 / std::sqrt(static_cast<double>(d));
    const double sd = 1.0 / std::sqrt(static_cast<double>(c));
    for (size_t i = 0; i < enc_size; ++i) params[i] = se * rng.normal();
    for (size_t i = enc_size; i < params.size(); ++i) params[i] = sd * rng.normal();
  }
  std::vector<double> m(params.size(), 0.0), v(params.size(), 0.0);
  std::vector<double> grad(params.size());

  std::vector<ConflictRow> rows;
  const std::string arm = cosine_arm ? "cosine" : "mse";

  // Whole-dataset metrics for the logged rows; training below runs on
  // minibatches.
  auto measure = [&](double* recon_l1, double* align_cos) {
    const double* enc = params.data();
    const double* dec = params.data() + enc_size;
    std::vector<double> zi(c);
    double l1 = 0.0;
    double cos_sum = 0.0;
    for (int i = 0; i < n; ++i) {
      const double* x = data.row(i);
      for (int j = 0; j < c; ++j)
        zi[j] = geom::patch_dot(enc + static_cast<size_t>(j) * d, x, d);
      for (int j = 0; j < d; ++j)
        l1 += std::abs(geom::patch_dot(dec + static_cast<size_t>(j) * c, zi.data(), c) - x[j]);
      const double* ti = teacher.row(i);
      const double nz = geom::patch_norm(zi.data(), c);
      const double nt = geom::patch_norm(ti, c);
      cos_sum += nz <= geom::kEpsZero ? 0.0 : geom::patch_dot(zi.data(), ti, c) / (nz * nt);
    }
    *recon_l1 = l1 / (static_cast<double>(n) * d);
    *align_cos = cos_sum / n;
  };

  Rng batch_rng(mix_seed(seed_k, 4));
  const int bsz = cfg.batch_size;
  const double recon_scale = 1.0 / (static_cast<double>(bsz) * d);
  std::vector<double> zi(c), gz(c);

  for (int64_t step = 0; step <= cfg.steps; ++step) {
    if (step % cfg.log_every == 0 || step == cfg.steps) {
      double recon_l1 = 0.0, align_cos = 0.0;
      measure(&recon_l1, &align_cos);
      rows.push_back({arm, seed_index, step, recon_l1, align_cos});
    }
    if (step == cfg.steps) break;

    std::fill(grad.begin(), grad.end(), 0.0);
    const double* enc = params.data();
    const double* dec = params.data() + enc_size;
    double* genc = grad.data();
    double* gdec = grad.data() + enc_size;
    for (int bi = 0; bi < bsz; ++bi) {
      const int i =
          bsz == n ? bi : static_cast<int>(batch_rng.uniform_index(static_cast<uint64_t>(n)));
      const double* x = data.row(i);
      for (int j = 0; j < c; ++j)
        zi[j] = geom::patch_dot(enc + static_cast<size_t>(j) * d, x, d);
      std::fill(gz.begin(), gz.end(), 0.0);
      for (int j = 0; j < d; ++j) {
        const double diff = geom::patch_dot(dec + static_cast<size_t>(j) * c, zi.data(), c) - x[j];
        if (diff == 0.0) continue;
        const double gout = diff > 0.0 ? recon_scale : -recon_scale;
        const double* dj = dec + static_cast<size_t>(j) * c;
        double* gdj = gdec + static_cast<size_t>(j) * c;
        for (int k = 0; k < c; ++k) {
          gdj[k] += gout * zi[k];
          gz[k] += gout * dj[k];
        }
      }
      if (cfg.lambda_align > 0.0) {
        const double* ti = teacher.row(i);
        if (cosine_arm) {
          const double nz = geom::patch_norm(zi.data(), c);
          if (nz <= geom::kEpsZero)
            throw Error(ErrorCode::ZeroPatch, "conflict_experiment: student feature collapsed");
          const double nt = geom::patch_norm(ti, c);
          const double cosv = std::clamp(geom::patch_dot(zi.data(), ti, c) / (nz * nt), -1.0, 1.0);
          const double w = cfg.lambda_align / (static_cast<double>(bsz) * nz);
          for (int k = 0; k < c; ++k) gz[k] -= w * (ti[k] / nt - cosv * (zi[k] / nz));
        } else {
          const double w = 2.0 * cfg.lambda_align / (static_cast<double>(bsz) * c);
          for (int k = 0; k < c; ++k) gz[k] += w * (zi[k] - ti[k]);
        }
      }
      for (int k = 0; k < c; ++k) {
        const double g = gz[k];
        if (g == 0.0) continue;
        double* gek = genc + static_cast<size_t>(k) * d;
        for (int j = 0; j < d; ++j) gek[j] += g * x[j];
      }
    }
    train::adamw_update(params, m, v, grad, step, cfg.lr, 0.9, 0.999, 0.0);
  }
  return rows;
}

ArmSummary summarize(const std::string& arm, const std::vector<ConflictRow>& finals) {
  ArmSummary s;
  s.arm = arm;
  const double cnt = static_cast<double>(finals.size());
  for (const auto& r : finals) {
    s.recon_l1_mean += r.recon_l1;
    s.align_cos_mean += r.align_cos;
  }
  s.recon_l1_mean /= cnt;
  s.align_cos_mean /= cnt;
  if (finals.size() > 1) {
    double vr = 0.0, vc = 0.0;
    for (const auto& r : finals) {
      vr += (r.recon_l1 - s.recon_l1_mean) * (r.recon_l1 - s.recon_l1_mean);
      vc += (r.align_cos - s.align_cos_mean) * (r.align_cos - s.align_cos_mean);
    }
    s.recon_l1_std = std::sqrt(vr / (cnt - 1.0));
    s.align_cos_std = std::sqrt(vc / (cnt - 1.0));
  }
  return s;
}

}  // namespace

ConflictReport conflict_experiment(const ConflictConfig& cfg) {
  cfg.validate();
  // Task order is arm-major so the assembled rows come out sorted by
  // (arm, seed, step) with "cosine" before "mse".
  const size_t n_tasks = 2 * static_cast<size_t>(cfg.n_seeds);
  std::vector<std::vector<ConflictRow>> per_task(n_tasks);
  parallel_for(n_tasks, resolve_threads(cfg.threads), [&](size_t lo, size_t hi) {
    for (size_t k = lo; k < hi; ++k) {
      const bool cosine_arm = k < static_cast<size_t>(cfg.n_seeds);
      const int seed_index = static_cast<int>(k % static_cast<size_t>(cfg.n_seeds));
      per_task[k] = run_conflict_arm(cfg, seed_index, cosine_arm);
    }
  });

  ConflictReport report;
  std::vector<ConflictRow> cos_finals, mse_finals;
  for (size_t k = 0; k < n_tasks; ++k) {
    (k < static_cast<size_t>(cfg.n_seeds) ? cos_finals : mse_finals)
        .push_back(per_task[k].back());
    for (auto& r : per_task[k]) report.rows.push_back(std::move(r));
  }
  report.summaries = {summarize("cosine", cos_finals), summarize("mse", mse_finals)};

  std::string text = "conflict_experiment: 2 arms x " + std::to_string(cfg.n_seeds) + " seeds, " +
                     std::to_string(cfg.steps) + " steps, batch " +
                     std::to_string(cfg.batch_size) + ", lambda_align=" +
                     format_double(cfg.lambda_align) + "\n";
  text +=
      "teacher feature norms are drawn from U(0.5, 2) per sample; with constant\n"
      "teacher norms the mse and cosine arms would be indistinguishable.\n";
  for (const auto& s : report.summaries) {
    text += "arm=" + s.arm + " final recon_l1 mean=" + format_double(s.recon_l1_mean) +
            " std=" + format_double(s.recon_l1_std) +
            " align_cos mean=" + format_double(s.align_cos_mean) +
            " std=" + format_double(s.align_cos_std) + "\n";
  }
  report.summary_text = std::move(text);
  return report;
}

void write_conflict_csv(const ConflictReport& report, const std::string& path) {
  std::string out = "arm,seed,step,recon_l1,align_cos\n";
  for (const auto& r : report.rows) {
    out += r.arm + "," + std::to_string(r.seed_index) + "," + std::to_string(r.step) + "," +
           format_double(r.recon_l1) + "," + format_double(r.align_cos) + "\n";
  }
  io::write_file(path, out);
}

std::vector<RescalePoint> rescale_probe(const DecoderFn& decoder, const LatentField& z,
                                        const std::vector<double>& alphas) {
  if (!decoder) throw Error(ErrorCode::Config, "rescale_probe: decoder is empty");
  if (z.n_patches() == 0) throw Error(ErrorCode::EmptyBatch, "rescale_probe: empty field");
  for (double a : alphas)
    if (!std::isfinite(a) || a <= 0.0)
      throw Error(ErrorCode::Config, "rescale_probe: alpha must be > 0, got " + format_double(a));

  const Array2D base = decoder(z.data);
  std::vector<RescalePoint> out;
  out.reserve(alphas.size());
  for (double a : alphas) {
    Array2D scaled = z.data;
    for (auto& x : scaled.v) x *= a;
    const Array2D y = decoder(scaled);
    if (!y.same_shape(base))
      throw Error(ErrorCode::ShapeMismatch, "rescale_probe: decoder output shape changed");
    double acc = 0.0;
    for (size_t i = 0; i < y.size(); ++i) {
      const double diff = y.v[i] - base.v[i];
      acc += diff * diff;
    }
    out.push_back({a, std::sqrt(acc)});
  }
  return out;
}

}  // namespace align
}  // namespace sfm
