#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sphereflow/geometry.hpp"

namespace sfm::data {

struct VmfComponent {
  std::vector<double> mean;  // unit vector, length = dim
  double kappa = 0.0;
  double weight = 0.0;
};

enum class GenKind { vmf_mixture, checkerboard_s2 };

struct GenSpec {
  GenKind kind = GenKind::vmf_mixture;
  int64_t n = 0;
  int n_patches = 1;
  int dim = 3;
  double radius = 1.0;
  uint64_t seed = 0;
  std::vector<VmfComponent> components;  // vmf_mixture only
  int resolution = 0;                    // checkerboard_s2 only

  int n_classes() const;
  void validate() const;
};

struct SphereDataset {
  std::vector<LatentField> samples;
  std::vector<int> labels;
  GenSpec spec;
};

/// One draw of w = cos(angle to the mean) from the vMF marginal on the
/// sphere in `dim` ambient dimensions. Exposed so tests can compare the
/// marginal directly against a plain rejection oracle.
double vmf_cos_draw(Rng& rng, double kappa, int dim);

/// Full dataset from a validated spec. Samples are generated independently
/// with per-sample derived seeds, so the result is identical for any thread
/// count.
SphereDataset generate(const GenSpec& spec, int threads = 0);

SphereDataset gen_vmf_mixture(int64_t n, int n_patches, int dim, double radius,
                              const std::vector<VmfComponent>& components, uint64_t seed,
                              int threads = 0);

SphereDataset gen_checkerboard_s2(int64_t n, int resolution, double radius, uint64_t seed,
                                  int threads = 0);

/// Parity predicate behind the checkerboard target. Bands are
/// floor(theta*res/pi) over the colatitude and floor(phi*res/pi) over the
/// azimuth in [0, 2pi); a point is kept when the band parities agree. On
/// acceptance *label is the index of the cell among the res*res kept cells.
bool checkerboard_accepts(const double* xyz, double radius, int resolution, int* label);

void save_dataset(const SphereDataset& ds, const std::string& path);
SphereDataset load_dataset(const std::string& path);

}  // namespace sfm::data
