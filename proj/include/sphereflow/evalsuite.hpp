#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sphereflow/geometry.hpp"

namespace sfm {

struct EvalReport {
  double manifold_residual_max = 0.0;
  double mmd2 = 0.0;
  double mmd2_null_95 = 0.0;
  std::vector<std::pair<int, double>> per_class_mmd2;  // sorted by class; empty when not computed
  int64_t n_gen = 0;
  int64_t n_ref = 0;
  double bandwidth = 0.0;  // radians
};

namespace eval {

/// Max over samples and patches of | ||x|| - R | / R.
double manifold_residual(const std::vector<LatentField>& samples);

/// Patch-mean geodesic angle between two fields, in radians.
double mean_geodesic_distance(const LatentField& a, const LatentField& b);

/// Gaussian kernel on the patch-mean geodesic angle: exp(-d^2 / (2 h^2)).
/// Equals 1 at d=0 and stays in (0, 1]. Not guaranteed positive definite on
/// the sphere for every h, which is why the test statistic below is
/// calibrated with a permutation null rather than an asymptotic one.
double kernel_value(const LatentField& a, const LatentField& b, double bandwidth);

/// Median pairwise distance over a subsample of at most 256 fields drawn
/// deterministically from the pooled inputs.
double median_bandwidth(const std::vector<LatentField>& gen, const std::vector<LatentField>& ref,
                        uint64_t seed, int threads = 0);

struct MmdResult {
  double mmd2 = 0.0;
  double null95 = 0.0;
};

/// Unbiased MMD^2 between gen and ref plus the 95% quantile of its
/// 200-permutation null. Equal sizes use the paired U-statistic (which is
/// exactly zero for identical arrays and may legitimately go negative near
/// the null); unequal sizes use the general unbiased estimator.
MmdResult geodesic_mmd(const std::vector<LatentField>& gen, const std::vector<LatentField>& ref,
                       double bandwidth, uint64_t seed, int threads = 0);

/// Full report. bandwidth = 0 picks the median heuristic. Labels may be
/// empty; when both sides carry labels a per-class MMD split is included,
/// restricted to classes with at least 16 samples on each side.
EvalReport evaluate(const std::vector<LatentField>& gen, const std::vector<int>& gen_labels,
                    const std::vector<LatentField>& ref, const std::vector<int>& ref_labels,
                    double bandwidth, uint64_t seed, int threads = 0);

/// CSV with a fixed `metric,value` column order, deterministic bytes.
void write_report(const EvalReport& report, const std::string& path);

EvalReport read_report(const std::string& path);

}  // namespace eval
}  // namespace sfm
