#include "sphereflow/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>

#include "sphereflow/ioutil.hpp"

namespace sfm {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) fail(ErrorCode::Config, "TrainConfig: lr must be positive, got " + format_double(lr));
  if (!(beta1 >= 0.0 && beta1 < 1.0))
    fail(ErrorCode::Config, "TrainConfig: beta1 must lie in [0,1), got " + format_double(beta1));
  if (!(beta2 >= 0.0 && beta2 < 1.0))
    fail(ErrorCode::Config, "TrainConfig: beta2 must lie in [0,1), got " + format_double(beta2));
  if (!(weight_decay >= 0.0)) fail(ErrorCode::Config, "TrainConfig: weight_decay must be >= 0");
  if (!(grad_clip >= 0.0)) fail(ErrorCode::Config, "TrainConfig: grad_clip must be >= 0");
  if (batch_size < 1) fail(ErrorCode::Config, "TrainConfig: batch_size must be >= 1");
  if (total_steps < 0) fail(ErrorCode::Config, "TrainConfig: total_steps must be >= 0");
  if (!(ema_decay >= 0.0 && ema_decay <= 1.0))
    fail(ErrorCode::Config, "TrainConfig: ema_decay must lie in [0,1]");
  if (checkpoint_every < 1) fail(ErrorCode::Config, "TrainConfig: checkpoint_every must be >= 1");
  if (warmup_steps < 0) fail(ErrorCode::Config, "TrainConfig: warmup_steps must be >= 0");
}

namespace train {

namespace {

constexpr double kAdamEps = 1e-8;

double effective_lr(const TrainConfig& cfg, int64_t step) {
  if (cfg.warmup_steps <= 0) return cfg.lr;
  double ramp = static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
  return cfg.lr * std::min(1.0, ramp);
}

std::string checkpoint_name(const std::string& dir, int64_t step) {
  return dir + "/ckpt_step" + std::to_string(step) + ".bin";
}

}  // namespace

TrainState init_state(const VelocityNet& net, const TrainConfig& cfg) {
  TrainState st;
  st.m.assign(net.params.size(), 0.0);
  st.v.assign(net.params.size(), 0.0);
  st.rng = Rng(mix_seed(cfg.seed, 1));
  return st;
}

TrainState state_from_checkpoint(const Checkpoint& ck) {
  if (!ck.has_train_state)
    fail(ErrorCode::Config, "state_from_checkpoint: checkpoint carries no optimizer state");
  TrainState st;
  st.step = ck.step;
  st.m = ck.opt_m;
  st.v = ck.opt_v;
  st.rng = Rng::deserialize(ck.rng_state);
  st.loss_avg = ck.loss_avg;
  return st;
}

void adamw_update(std::vector<double>& params, std::vector<double>& m, std::vector<double>& v,
                  const std::vector<double>& grad, int64_t step, double lr, double beta1,
                  double beta2, double weight_decay) {
  if (m.size() != params.size() || v.size() != params.size() || grad.size() != params.size())
    fail(ErrorCode::ShapeMismatch, "adamw_update: moment/gradient size does not match params");
  const double t = static_cast<double>(step + 1);
  const double bc1 = 1.0 - std::pow(beta1, t);
  const double bc2 = 1.0 - std::pow(beta2, t);
  for (size_t i = 0; i < params.size(); ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    params[i] -= lr * (mhat / (std::sqrt(vhat) + kAdamEps) + weight_decay * params[i]);
  }
}

double clip_gradient(std::vector<double>& grad, double max_norm) {
  double s2 = 0.0;
  for (double g : grad) s2 += g * g;
  const double norm = std::sqrt(s2);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (double& g : grad) g *= scale;
  }
  return norm;
}

StepStats train_step(VelocityNet& net, TrainState& state, const std::vector<LatentField>& batch,
                     const std::vector<int>& labels, const TrainConfig& cfg) {
  if (batch.empty()) fail(ErrorCode::EmptyBatch, "train_step: empty batch");
  std::vector<PathSample> samples;
  samples.reserve(batch.size());
  for (const LatentField& data : batch)
    samples.push_back(flow::make_path_sample(data, state.rng, cfg.time_dist, cfg.convention));

  GradientReport rep;
  try {
    rep = net::loss_and_grad(net, samples, labels, cfg.threads);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::NonFinite)
      fail(ErrorCode::NonFinite,
           "train_step: aborted at step " + std::to_string(state.step) + ": " + e.what());
    throw;
  }

  StepStats stats;
  stats.loss = rep.loss;
  stats.grad_norm = clip_gradient(rep.grad, cfg.grad_clip);
  if (!std::isfinite(stats.loss) || !std::isfinite(stats.grad_norm))
    fail(ErrorCode::NonFinite, "train_step: non-finite at step " + std::to_string(state.step) +
                                   " (loss " + format_double(stats.loss) + ", grad norm " +
                                   format_double(stats.grad_norm) + ")");

  adamw_update(net.params, state.m, state.v, rep.grad, state.step, effective_lr(cfg, state.step),
               cfg.beta1, cfg.beta2, cfg.weight_decay);
  net.ema_decay = cfg.ema_decay;
  net::ema_update(net);
  state.step += 1;
  state.loss_avg = state.step == 1 ? stats.loss : 0.99 * state.loss_avg + 0.01 * stats.loss;
  return stats;
}

TrainResult run_training(VelocityNet& net, TrainState& state,
                         const std::vector<LatentField>& dataset, const std::vector<int>& labels,
                         const TrainConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  if (dataset.empty()) fail(ErrorCode::EmptyDataset, "run_training: dataset is empty");
  if (!labels.empty() && labels.size() != dataset.size())
    fail(ErrorCode::ShapeMismatch, "run_training: got " + std::to_string(labels.size()) +
                                       " labels for " + std::to_string(dataset.size()) + " fields");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) fail(ErrorCode::Io, "run_training: cannot create " + out_dir + ": " + ec.message());

  const std::string curve_path = out_dir + "/loss_curve.csv";
  const bool resuming = state.step > 0;
  std::FILE* csv = std::fopen(curve_path.c_str(), resuming ? "ab" : "wb");
  if (!csv) fail(ErrorCode::Io, "run_training: cannot open " + curve_path);
  if (!resuming) std::fputs("step,loss,grad_norm,wall_ms\n", csv);

  auto write_ckpt = [&](int64_t step) {
    Checkpoint ck;
    ck.net = net;
    ck.convention = cfg.convention;
    ck.step = step;
    ck.has_train_state = true;
    ck.opt_m = state.m;
    ck.opt_v = state.v;
    ck.rng_state = state.rng.serialize();
    ck.loss_avg = state.loss_avg;
    const std::string path = checkpoint_name(out_dir, step);
    net::save_checkpoint(ck, path);
    return path;
  };

  std::vector<LatentField> batch;
  std::vector<int> batch_labels;
  std::string ckpt_path = resuming ? checkpoint_name(out_dir, state.step) : write_ckpt(0);
  while (state.step < cfg.total_steps) {
    const auto t0 = std::chrono::steady_clock::now();
    batch.clear();
    batch_labels.clear();
    for (int b = 0; b < cfg.batch_size; ++b) {
      const size_t idx = state.rng.uniform_index(dataset.size());
      batch.push_back(dataset[idx]);
      if (!labels.empty()) batch_labels.push_back(labels[idx]);
    }
    StepStats stats;
    try {
      stats = train_step(net, state, batch, batch_labels, cfg);
    } catch (...) {
      std::fclose(csv);
      throw;
    }
    const double wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    std::fprintf(csv, "%lld,%s,%s,%.3f\n", static_cast<long long>(state.step),
                 format_double(stats.loss).c_str(), format_double(stats.grad_norm).c_str(),
                 wall_ms);
    if (state.step % cfg.checkpoint_every == 0 || state.step == cfg.total_steps)
      ckpt_path = write_ckpt(state.step);
  }
  std::fclose(csv);
  return {ckpt_path, curve_path};
}

}  // namespace train
}  // namespace sfm
