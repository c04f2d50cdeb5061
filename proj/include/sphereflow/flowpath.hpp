#pragma once

#include "sphereflow/geometry.hpp"

namespace sfm {

enum class SchedulerKind { linear };

/// Decreasing scheduler kappa with kappa(0) = 1 and kappa(1) = 0.
struct Scheduler {
  SchedulerKind kind = SchedulerKind::linear;
};

/// Training triple: point on the conditional path, target velocity there,
/// and the time it was sampled at (in the caller's convention).
struct PathSample {
  LatentField x_t;
  TangentField u_t;
  double t = 0.0;
};

enum class TimeDirection { forward, reverse };

/// Whether the data distribution sits at t=1 (internal default) or t=0
/// (the reversed convention where integration runs 1 -> 0).
enum class TimeConvention { data_at_1, data_at_0 };

enum class TimeDist { uniform };

struct TimeSchedule {
  std::vector<double> steps;  // T+1 values, strictly monotone, exact endpoints
  TimeDirection direction = TimeDirection::forward;
  double shift = 1.0;

  int n_steps() const { return static_cast<int>(steps.size()) - 1; }
};

namespace flow {

double kappa(double t, const Scheduler& sched);

/// Point at premetric fraction kappa(t) of the way from x1 back to x0:
/// exp_{x1}(kappa(t) * log_{x1}(x0)). Exact endpoints at kappa = 1 and 0.
LatentField conditional_point(const LatentField& x0, const LatentField& x1, double t,
                              const Scheduler& sched);

/// Time derivative of the geodesic from x0 to x1, evaluated at time t:
/// (omega/sin omega) * (cos(t*omega) x1 - cos((1-t)*omega) x0) per patch.
/// Constant speed: per-patch norm is R*omega for every t.
TangentField target_velocity(const LatentField& x0, const LatentField& x1, double t);

/// Patch-mean squared Euclidean distance between two tangent fields at the
/// same base point.
double rfm_loss(const TangentField& v_pred, const TangentField& u_target);

/// Deterministic core of training-pair construction: path point and target
/// velocity at external time t under the given convention.
PathSample path_sample_at(const LatentField& x0, const LatentField& x_data, double t,
                          TimeConvention conv);

/// Draws a prior endpoint (resampling antipodal draws, bounded retries) and
/// a time, then defers to path_sample_at.
PathSample make_path_sample(const LatentField& x_data, Rng& rng, TimeDist dist,
                            TimeConvention conv);

/// T+1 grid points: u_k = k/T through the rational shift t = s*u/(1+(s-1)u).
/// s = 1 is the uniform grid. Reverse direction flips the array.
TimeSchedule time_schedule(int T, double shift, TimeDirection direction);

}  // namespace flow
}  // namespace sfm
