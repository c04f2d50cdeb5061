#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sphereflow/geometry.hpp"

namespace sfm {

/// Student/teacher feature arrays, one row per patch. These are raw network
/// features, not sphere points; the alignment losses put no norm constraint
/// on them beyond non-zero patches where a direction is needed.
struct FeaturePair {
  Array2D z_s;
  Array2D z_t;
};

struct AlignResult {
  double loss = 0.0;
  Array2D grad_s;  // d loss / d z_s, same shape as z_s
};

/// Weighted multi-term training objective. The lpips and adv slots keep the
/// staged recipe structurally complete but have no implementation here; they
/// always evaluate to zero and are flagged unavailable in the breakdown.
struct StageConfig {
  int stage = 1;  // 1..4
  double lambda_cos = 0.5;
  double lambda_l1 = 1.0;
  double lambda_lpips = 1.0;
  double lambda_adv = 0.5;

  /// Stages 3 and 4 tune the decoder against a frozen encoder, which is what
  /// drops the alignment term from the objective.
  bool encoder_frozen() const { return stage >= 3; }

  void validate() const;
};

struct StageTerm {
  std::string name;
  double weight = 0.0;
  double value = 0.0;
  double contribution = 0.0;  // weight * value when enabled and available
  bool enabled = false;       // part of this stage's objective
  bool available = false;     // computable in this toolkit
};

struct StageBreakdown {
  double total = 0.0;
  bool encoder_frozen = false;
  std::vector<StageTerm> terms;  // fixed order: cos, l1, lpips, adv
};

/// Two linear students trained against the same frozen random teacher and
/// identical reconstruction objective, differing only in the alignment term
/// (mse vs cosine at matched weight). The setup keeps the feature-norm
/// channel both live and contested for a linear student: inputs carry
/// per-sample scales from U(0.5, 2) that reconstruction has to track, the
/// teacher feature norms are independent U(0.5, 2) noise, and
/// n_samples <= signal_dim so the encoder can realize per-sample feature
/// norms at all. The mse arm must pin the norms to the teacher's noise; the
/// cosine arm is free to spend them on the input scales.
struct ConflictConfig {
  int signal_dim = 32;
  int feature_dim = 16;
  int n_samples = 24;
  int batch_size = 24;  // batch_size == n_samples trains full-batch, no sampling
  int64_t steps = 2000;
  int64_t log_every = 100;
  double lr = 0.01;
  double lambda_align = 20.0;
  int n_seeds = 5;
  uint64_t base_seed = 0;
  int threads = 0;

  void validate() const;
};

struct ConflictRow {
  std::string arm;  // "cosine" or "mse"
  int seed_index = 0;
  int64_t step = 0;
  double recon_l1 = 0.0;
  double align_cos = 0.0;  // mean cosine between student and teacher features
};

struct ArmSummary {
  std::string arm;
  double recon_l1_mean = 0.0;
  double recon_l1_std = 0.0;
  double align_cos_mean = 0.0;
  double align_cos_std = 0.0;
};

struct ConflictReport {
  std::vector<ConflictRow> rows;        // ordered by (arm, seed, step)
  std::vector<ArmSummary> summaries;    // cosine first, then mse
  std::string summary_text;
};

/// Decoder stub for the rescale probe: maps an N x C feature array to an
/// output array of caller-defined shape. Must be a pure function.
using DecoderFn = std::function<Array2D(const Array2D&)>;

struct RescalePoint {
  double alpha = 0.0;
  double deviation = 0.0;  // Frobenius distance from the alpha = 1 output
};

namespace align {

/// Mean over patches of 1 - <s, t> / (|s| |t|), in [0, 2], with the exact
/// gradient w.r.t. z_s. Invariant to positive per-patch rescaling of either
/// side, and the gradient is orthogonal to z_s patch by patch.
AlignResult cosine_align_loss(const FeaturePair& pair);

/// Mean over all entries of (z_s - z_t)^2, with gradient w.r.t. z_s.
AlignResult mse_align_loss(const FeaturePair& pair);

/// z + sigma * eps with one sigma ~ U(0, tau) per call and fresh standard
/// normal eps per entry (row-major draw order, sigma first). tau = 0 returns
/// the input unchanged without consuming any rng draws.
Array2D noise_augment(const Array2D& z, double tau, Rng& rng);

/// Weighted sum for the given stage over the terms that are both enabled at
/// that stage and available here: cos (stages 1-2) and l1 (all stages).
/// Stages 3 and 4 never evaluate `pair`, so it may be empty for them.
StageBreakdown stage_objective(const StageConfig& cfg, double recon_l1, const FeaturePair& pair);

ConflictReport conflict_experiment(const ConflictConfig& cfg);

/// CSV with header `arm,seed,step,recon_l1,align_cos`, deterministic bytes.
void write_conflict_csv(const ConflictReport& report, const std::string& path);

/// Evaluates `decoder` on alpha * z for each alpha and reports the Frobenius
/// distance of each output from the alpha = 1 output. Pure measurement, no
/// pass/fail judgement.
std::vector<RescalePoint> rescale_probe(const DecoderFn& decoder, const LatentField& z,
                                        const std::vector<double>& alphas);

}  // namespace align
}  // namespace sfm
