#include "sphereflow/flowpath.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace sfm::flow {

using geom::kEpsAntipodal;
using geom::kEpsParallel;

double kappa(double t, const Scheduler& sched) {
  if (!(t >= 0.0 && t <= 1.0))
    fail(ErrorCode::OutOfRange, "kappa: t = " + format_double(t) + " outside [0,1]");
  switch (sched.kind) {
    case SchedulerKind::linear: return 1.0 - t;
  }
  fail(ErrorCode::Config, "kappa: unknown scheduler kind");
}

LatentField conditional_point(const LatentField& x0, const LatentField& x1, double t,
                              const Scheduler& sched) {
  double k = kappa(t, sched);
  if (k == 1.0) return x0;
  if (k == 0.0) return x1;
  TangentField lg = geom::log_map(x1, x0);
  for (double& u : lg.data.v) u *= k;
  return geom::exp_map(x1, lg);
}

TangentField target_velocity(const LatentField& x0, const LatentField& x1, double t) {
  geom::check_same_shape(x0, x1, "target_velocity");
  const int n = x0.n_patches(), c = x0.dim();
  const double r2 = x0.radius * x0.radius;

  TangentField out;
  out.data = Array2D(n, c);
  out.base = geom::slerp(x0, x1, t);
  const double inv_r2 = 1.0 / r2;
  for (int i = 0; i < n; ++i) {
    const double* a = x0.data.row(i);
    const double* b = x1.data.row(i);
    const double* base = out.base.data.row(i);
    double* q = out.data.row(i);
    double om = std::acos(std::clamp(geom::patch_dot(a, b, c) / r2, -1.0, 1.0));
    if (om < kEpsParallel) {
      // Difference vector projected to the tangent space at the path point.
      double coef = 0.0;
      for (int j = 0; j < c; ++j) coef += (b[j] - a[j]) * base[j];
      coef *= inv_r2;
      for (int j = 0; j < c; ++j) q[j] = (b[j] - a[j]) - coef * base[j];
      continue;
    }
    double s = om / std::sin(om);
    double w1 = s * std::cos(t * om);
    double w0 = s * std::cos((1.0 - t) * om);
    for (int j = 0; j < c; ++j) q[j] = w1 * b[j] - w0 * a[j];
  }
  return out;
}

double rfm_loss(const TangentField& v_pred, const TangentField& u_target) {
  if (!v_pred.data.same_shape(u_target.data))
    fail(ErrorCode::ShapeMismatch, "rfm_loss: " + std::to_string(v_pred.data.rows) + "x" +
                                       std::to_string(v_pred.data.cols) + " vs " +
                                       std::to_string(u_target.data.rows) + "x" +
                                       std::to_string(u_target.data.cols));
  if (!(v_pred.base.data == u_target.base.data) || v_pred.base.radius != u_target.base.radius)
    fail(ErrorCode::BaseMismatch, "rfm_loss: tangent fields live at different base points");
  double acc = 0.0;
  for (size_t i = 0; i < v_pred.data.size(); ++i) {
    double d = v_pred.data.v[i] - u_target.data.v[i];
    acc += d * d;
  }
  return acc / v_pred.data.rows;
}

PathSample path_sample_at(const LatentField& x0, const LatentField& x_data, double t,
                          TimeConvention conv) {
  if (!(t >= 0.0 && t <= 1.0))
    fail(ErrorCode::OutOfRange, "path_sample_at: t = " + format_double(t) + " outside [0,1]");
  double ti = (conv == TimeConvention::data_at_1) ? t : 1.0 - t;
  PathSample out;
  out.u_t = target_velocity(x0, x_data, ti);
  out.x_t = out.u_t.base;
  out.t = t;
  if (conv == TimeConvention::data_at_0)
    for (double& u : out.u_t.data.v) u = -u;
  return out;
}

PathSample make_path_sample(const LatentField& x_data, Rng& rng, TimeDist dist,
                            TimeConvention conv) {
  geom::check_on_sphere(x_data, "make_path_sample");
  if (dist != TimeDist::uniform) fail(ErrorCode::Config, "make_path_sample: unknown time dist");

  const int kRetries = 8;
  LatentField x0;
  bool ok = false;
  for (int attempt = 0; attempt < kRetries && !ok; ++attempt) {
    x0 = geom::sample_prior(x_data.n_patches(), x_data.dim(), x_data.radius, rng);
    ok = true;
    for (double om : geom::angular_distance(x0, x_data).omega) {
      if (M_PI - om < kEpsAntipodal) {
        ok = false;
        break;
      }
    }
  }
  if (!ok)
    fail(ErrorCode::AntipodalPatch, "make_path_sample: antipodal prior draw persisted through " +
                                        std::to_string(kRetries) + " retries");
  return path_sample_at(x0, x_data, rng.uniform(), conv);
}

TimeSchedule time_schedule(int T, double shift, TimeDirection direction) {
  if (T < 1) fail(ErrorCode::OutOfRange, "time_schedule: T must be >= 1");
  if (!(shift > 0.0)) fail(ErrorCode::OutOfRange, "time_schedule: shift must be > 0");
  TimeSchedule out;
  out.direction = direction;
  out.shift = shift;
  out.steps.resize(static_cast<size_t>(T) + 1);
  for (int k = 0; k <= T; ++k) {
    double u = static_cast<double>(k) / T;
    double t;
    if (k == 0)
      t = 0.0;
    else if (k == T)
      t = 1.0;
    else
      t = shift * u / (1.0 + (shift - 1.0) * u);
    out.steps[static_cast<size_t>(k)] = t;
  }
  if (direction == TimeDirection::reverse) std::reverse(out.steps.begin(), out.steps.end());
  return out;
}

}  // namespace sfm::flow
