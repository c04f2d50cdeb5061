#pragma once

#include "sphereflow/common.hpp"

namespace sfm {

/// Point on the product manifold of n_patches spheres of radius `radius`
/// embedded in R^dim. Invariant: every row of `data` has Euclidean norm
/// within 1e-9 * radius of radius.
struct LatentField {
  Array2D data;
  double radius = 1.0;

  int n_patches() const { return data.rows; }
  int dim() const { return data.cols; }
  bool same_shape(const LatentField& o) const {
    return data.same_shape(o.data) && radius == o.radius;
  }
};

/// Per-patch tangent vectors at `base`: row i is orthogonal to base row i.
struct TangentField {
  Array2D data;
  LatentField base;
};

struct AngularDistances {
  std::vector<double> omega;  // radians, in [0, pi]
};

namespace geom {

inline constexpr double kEpsZero = 1e-12;       // patch norms below this are degenerate
inline constexpr double kEpsParallel = 1e-7;    // below this angle, use the lerp fallback
inline constexpr double kEpsAntipodal = 1e-6;   // pi - omega below this: geodesic not unique
inline constexpr double kTangentTol = 1e-8;     // |<v,x>| <= tol * R * |v|
inline constexpr double kOnSphereTol = 1e-9;    // | |x| - R | <= tol * R

double patch_norm(const double* p, int c);
double patch_dot(const double* a, const double* b, int c);

/// Rescales every patch onto the radius-R sphere. Throws ZeroPatch when a
/// patch norm is at or below eps_zero.
LatentField project_to_sphere(const Array2D& v, double radius, double eps_zero = kEpsZero);

/// Per-patch arc angle: acos of the clamped normalized dot product. The
/// clamp matters: rounding can push |dot|/R^2 past 1 for on-sphere inputs.
AngularDistances angular_distance(const LatentField& x0, const LatentField& x1);

/// Constant-speed geodesic interpolation. t=0 and t=1 return the endpoints
/// exactly. Near-parallel patches (omega < kEpsParallel) fall back to
/// lerp-then-project; antipodal patches throw.
LatentField slerp(const LatentField& x0, const LatentField& x1, double t);

/// Removes the radial component of each row: v - (<v,x>/R^2) x.
TangentField tangent_project(const Array2D& v, const LatentField& x);

/// Rodrigues rotation along the great circle: cos(theta) x + sin(theta) R v/|v|
/// with theta = |v|/R. Throws NotTangent when v is not tangent at x.
LatentField exp_map(const LatentField& x, const TangentField& v);

/// Inverse of exp_map: the tangent at x whose exponential reaches y.
/// |log_x(y)| = R * omega per patch.
TangentField log_map(const LatentField& x, const LatentField& y);

/// Independent standard-normal patches projected to radius R; uniform on the
/// sphere. Zero-norm draws (probability ~0) are redrawn.
LatentField sample_prior(int n_patches, int dim, double radius, Rng& rng);

/// Max over patches of | |x| - R | / R. Zero for exactly on-sphere fields.
double max_norm_residual(const LatentField& x);

/// Max over patches of |<v,x>| / (R |v|), skipping near-zero rows.
double max_tangency_residual(const TangentField& v);

void check_on_sphere(const LatentField& x, const char* who);
void check_same_shape(const LatentField& a, const LatentField& b, const char* who);

}  // namespace geom
}  // namespace sfm
