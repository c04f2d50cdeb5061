#include "sphereflow/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace sfm::geom {

double patch_norm(const double* p, int c) {
  double s = 0.0;
  for (int j = 0; j < c; ++j) s += p[j] * p[j];
  return std::sqrt(s);
}

double patch_dot(const double* a, const double* b, int c) {
  double s = 0.0;
  for (int j = 0; j < c; ++j) s += a[j] * b[j];
  return s;
}

void check_same_shape(const LatentField& a, const LatentField& b, const char* who) {
  if (!a.data.same_shape(b.data))
    fail(ErrorCode::ShapeMismatch, std::string(who) + ": " + std::to_string(a.data.rows) + "x" +
                                       std::to_string(a.data.cols) + " vs " +
                                       std::to_string(b.data.rows) + "x" +
                                       std::to_string(b.data.cols));
  if (a.radius != b.radius)
    fail(ErrorCode::ShapeMismatch, std::string(who) + ": radius " + format_double(a.radius) +
                                       " vs " + format_double(b.radius));
}

void check_on_sphere(const LatentField& x, const char* who) {
  double r = max_norm_residual(x);
  if (r > kOnSphereTol)
    fail(ErrorCode::OutOfRange,
         std::string(who) + ": field off sphere, residual " + format_double(r));
}

LatentField project_to_sphere(const Array2D& v, double radius, double eps_zero) {
  if (radius <= 0.0) fail(ErrorCode::OutOfRange, "project_to_sphere: radius must be > 0");
  LatentField out;
  out.data = Array2D(v.rows, v.cols);
  out.radius = radius;
  for (int i = 0; i < v.rows; ++i) {
    const double* p = v.row(i);
    double nrm = patch_norm(p, v.cols);
    if (nrm <= eps_zero)
      fail(ErrorCode::ZeroPatch,
           "project_to_sphere: patch " + std::to_string(i) + " has norm " + format_double(nrm));
    double s = radius / nrm;
    double* q = out.data.row(i);
    for (int j = 0; j < v.cols; ++j) q[j] = p[j] * s;
  }
  return out;
}

AngularDistances angular_distance(const LatentField& x0, const LatentField& x1) {
  check_same_shape(x0, x1, "angular_distance");
  const double r2 = x0.radius * x0.radius;
  AngularDistances out;
  out.omega.resize(static_cast<size_t>(x0.n_patches()));
  for (int i = 0; i < x0.n_patches(); ++i) {
    double c = patch_dot(x0.data.row(i), x1.data.row(i), x0.dim()) / r2;
    out.omega[static_cast<size_t>(i)] = std::acos(std::clamp(c, -1.0, 1.0));
  }
  return out;
}

LatentField slerp(const LatentField& x0, const LatentField& x1, double t) {
  check_same_shape(x0, x1, "slerp");
  if (!(t >= 0.0 && t <= 1.0))
    fail(ErrorCode::OutOfRange, "slerp: t = " + format_double(t) + " outside [0,1]");
  if (t == 0.0) return x0;
  if (t == 1.0) return x1;

  const int n = x0.n_patches(), c = x0.dim();
  const double r = x0.radius, r2 = r * r;
  LatentField out;
  out.data = Array2D(n, c);
  out.radius = r;
  for (int i = 0; i < n; ++i) {
    const double* a = x0.data.row(i);
    const double* b = x1.data.row(i);
    double* q = out.data.row(i);
    double om = std::acos(std::clamp(patch_dot(a, b, c) / r2, -1.0, 1.0));
    if (M_PI - om < kEpsAntipodal)
      fail(ErrorCode::AntipodalPatch,
           "slerp: patch " + std::to_string(i) + " antipodal (omega = " + format_double(om) + ")");
    if (om < kEpsParallel) {
      // Lerp then renormalize; error is O(omega^2).
      double nrm = 0.0;
      for (int j = 0; j < c; ++j) {
        q[j] = (1.0 - t) * a[j] + t * b[j];
        nrm += q[j] * q[j];
      }
      nrm = std::sqrt(nrm);
      if (nrm <= kEpsZero) fail(ErrorCode::ZeroPatch, "slerp: degenerate lerp fallback");
      double s = r / nrm;
      for (int j = 0; j < c; ++j) q[j] *= s;
      continue;
    }
    double inv_sin = 1.0 / std::sin(om);
    double w0 = std::sin((1.0 - t) * om) * inv_sin;
    double w1 = std::sin(t * om) * inv_sin;
    for (int j = 0; j < c; ++j) q[j] = w0 * a[j] + w1 * b[j];
  }
  return out;
}

TangentField tangent_project(const Array2D& v, const LatentField& x) {
  if (!v.same_shape(x.data))
    fail(ErrorCode::ShapeMismatch, "tangent_project: array " + std::to_string(v.rows) + "x" +
                                       std::to_string(v.cols) + " vs base " +
                                       std::to_string(x.data.rows) + "x" +
                                       std::to_string(x.data.cols));
  const int n = x.n_patches(), c = x.dim();
  const double inv_r2 = 1.0 / (x.radius * x.radius);
  TangentField out;
  out.data = Array2D(n, c);
  out.base = x;
  for (int i = 0; i < n; ++i) {
    const double* p = v.row(i);
    const double* b = x.data.row(i);
    double* q = out.data.row(i);
    double coef = patch_dot(p, b, c) * inv_r2;
    for (int j = 0; j < c; ++j) q[j] = p[j] - coef * b[j];
  }
  return out;
}

LatentField exp_map(const LatentField& x, const TangentField& v) {
  if (!v.data.same_shape(x.data))
    fail(ErrorCode::ShapeMismatch, "exp_map: tangent shape mismatch");
  const int n = x.n_patches(), c = x.dim();
  const double r = x.radius;
  LatentField out;
  out.data = Array2D(n, c);
  out.radius = r;
  for (int i = 0; i < n; ++i) {
    const double* b = x.data.row(i);
    const double* p = v.data.row(i);
    double* q = out.data.row(i);
    double vn = patch_norm(p, c);
    if (vn < kEpsZero) {
      std::copy(b, b + c, q);
      continue;
    }
    double radial = std::abs(patch_dot(p, b, c));
    if (radial > kTangentTol * r * vn)
      fail(ErrorCode::NotTangent, "exp_map: patch " + std::to_string(i) +
                                      " radial component " + format_double(radial / (r * vn)));
    double theta = vn / r;
    double ct = std::cos(theta);
    double st = std::sin(theta) * r / vn;
    for (int j = 0; j < c; ++j) q[j] = ct * b[j] + st * p[j];
  }
  return out;
}

TangentField log_map(const LatentField& x, const LatentField& y) {
  check_same_shape(x, y, "log_map");
  const int n = x.n_patches(), c = x.dim();
  const double r = x.radius, r2 = r * r;
  TangentField out;
  out.data = Array2D(n, c);
  out.base = x;
  for (int i = 0; i < n; ++i) {
    const double* a = x.data.row(i);
    const double* b = y.data.row(i);
    double* q = out.data.row(i);
    double cosom = std::clamp(patch_dot(a, b, c) / r2, -1.0, 1.0);
    double om = std::acos(cosom);
    if (M_PI - om < kEpsAntipodal)
      fail(ErrorCode::AntipodalPatch, "log_map: patch " + std::to_string(i) +
                                          " antipodal (omega = " + format_double(om) + ")");
    if (om < kEpsParallel) {
      // y - x, projected to the tangent space at x
      double coef = (patch_dot(b, a, c) - patch_dot(a, a, c)) / r2;
      for (int j = 0; j < c; ++j) q[j] = (b[j] - a[j]) - coef * a[j];
      continue;
    }
    double s = om / std::sin(om);
    for (int j = 0; j < c; ++j) q[j] = s * (b[j] - cosom * a[j]);
  }
  return out;
}

LatentField sample_prior(int n_patches, int dim, double radius, Rng& rng) {
  if (n_patches < 1) fail(ErrorCode::OutOfRange, "sample_prior: n_patches must be >= 1");
  if (dim < 2) fail(ErrorCode::OutOfRange, "sample_prior: dim must be >= 2");
  if (radius <= 0.0) fail(ErrorCode::OutOfRange, "sample_prior: radius must be > 0");
  LatentField out;
  out.data = Array2D(n_patches, dim);
  out.radius = radius;
  for (int i = 0; i < n_patches; ++i) {
    double* q = out.data.row(i);
    for (;;) {
      rng.fill_normal(q, static_cast<size_t>(dim));
      double nrm = patch_norm(q, dim);
      if (nrm > kEpsZero) {
        double s = radius / nrm;
        for (int j = 0; j < dim; ++j) q[j] *= s;
        break;
      }
    }
  }
  return out;
}

double max_norm_residual(const LatentField& x) {
  double worst = 0.0;
  for (int i = 0; i < x.n_patches(); ++i) {
    double d = std::abs(patch_norm(x.data.row(i), x.dim()) - x.radius) / x.radius;
    worst = std::max(worst, d);
  }
  return worst;
}

double max_tangency_residual(const TangentField& v) {
  const double r = v.base.radius;
  double worst = 0.0;
  for (int i = 0; i < v.data.rows; ++i) {
    double vn = patch_norm(v.data.row(i), v.data.cols);
    if (vn < kEpsZero) continue;
    double d = std::abs(patch_dot(v.data.row(i), v.base.data.row(i), v.data.cols)) / (r * vn);
    worst = std::max(worst, d);
  }
  return worst;
}

}  // namespace sfm::geom
