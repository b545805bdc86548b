#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "latesim/dense_vector.hpp"
#include "latesim/matrix.hpp"

namespace latesim {

// Training hyperparameters: temperature, the six joint-loss weights, and the
// Matryoshka truncation schedule with per-length weights.
struct LossConfig {
  double tau = 0.02;
  std::array<double, 6> weights = {1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
  // Empty = halve the batch's dense dimension down to 4 (e.g. 16, 8, 4).
  std::vector<std::size_t> truncation_dims;
  // Per-truncation weights; empty = all 1.0.
  std::vector<double> matryoshka_weights;

  // A training run needs at least one positive joint-loss weight; evaluating
  // the joint loss itself does not.
  void validate(bool require_positive_weight = true) const;
  TruncationSchedule schedule_for(std::size_t dense_dim) const;
  std::vector<double> schedule_weights(std::size_t n_lengths) const;

  // Keys: tau, weights (array of 6), truncation_dims, matryoshka_weights.
  // Unknown keys are rejected.
  static LossConfig from_json(const nlohmann::json& j);
  static LossConfig from_json_file(const std::filesystem::path& path);
  nlohmann::ordered_json to_json() const;
};

// Loss value plus the analytic gradient with respect to every input
// similarity entry (same shape as the input score grid).
struct LossValueAndGrad {
  double value = 0.0;
  Matrix grad;
};

// ---------------------------------------------------------------------------
// Score-space objectives. Inputs are similarity grids; gradients are exact.
// All softmax evaluations subtract the row maximum before exponentiating.
// ---------------------------------------------------------------------------

// ln( e^{s_ij/tau} / sum_k e^{s_ik/tau} ). Always <= 0.
double log_softmax_row(const SimilarityMatrix& s, double tau, std::size_t i, std::size_t j);

// -sum_i log_softmax_row(s, tau, i, i) over a square grid whose diagonal
// holds the positives (in-batch negatives elsewhere).
LossValueAndGrad info_nce(const SimilarityMatrix& s, double tau);

// Row-wise KL( softmax(s_dense/tau) || softmax(s_late/tau) ), summed over
// rows. The late side is the teacher: its distribution is treated as fixed,
// so the returned gradient is with respect to s_dense only.
LossValueAndGrad kl_distillation(const SimilarityMatrix& s_dense, const SimilarityMatrix& s_late,
                                 double tau);

// InfoNCE extended with hard negatives, on a k x k*(1+m) score grid:
// column i < k holds s(q_row, p_i); column k + i*m + j holds s(q_row, n_{j,i}).
// The positive for row r is column r; the denominator spans every column.
// With m = 0 this is exactly info_nce.
LossValueAndGrad info_nce_hard_negatives_scores(const Matrix& scores, std::size_t m, double tau);

// CoSENT over per-pair model scores with ground-truth similarities:
// ln(1 + sum over (i, j) with zeta_i > zeta_j of e^{(s_j - s_i)/tau}).
// No ordered pairs (all ground truths equal) gives 0. Gradient is 1 x n.
LossValueAndGrad cosent_scores(std::span<const double> sims, std::span<const double> zeta,
                               double tau);

// ---------------------------------------------------------------------------
// Embedding-space objectives. Inputs are raw (pre-normalization) 64-bit
// embeddings; similarity grids are built internally (dense: cosine of
// normalized vectors; late: query-length-normalized late interaction of
// row-normalized token rows) and gradients are chained back to the raw
// values. Batch accumulation follows index order for reproducibility.
// ---------------------------------------------------------------------------

enum class LossMode { dense, late };

struct ItemEmbedding {
  std::vector<double> dense;  // raw pooled vector
  Matrix multi;               // raw token rows; may be empty for dense-only use
};
using ItemGrad = ItemEmbedding;

struct PairBatch {
  std::vector<ItemEmbedding> queries;
  std::vector<ItemEmbedding> passages;  // positives pair up by index
  bool empty() const { return queries.empty(); }
};
struct PairBatchGrad {
  std::vector<ItemGrad> queries;
  std::vector<ItemGrad> passages;
};

// Entries (q, p, n_1..n_m); m is uniform across entries.
struct HardNegativeBatch {
  std::vector<ItemEmbedding> queries;
  std::vector<ItemEmbedding> positives;
  std::vector<std::vector<ItemEmbedding>> negatives;
  bool empty() const { return queries.empty(); }
  std::size_t negatives_per_entry() const;  // validates uniformity
};
struct HardNegativeBatchGrad {
  std::vector<ItemGrad> queries;
  std::vector<ItemGrad> positives;
  std::vector<std::vector<ItemGrad>> negatives;
};

struct StsPair {
  ItemEmbedding a;
  ItemEmbedding b;
  std::optional<double> ground_truth;
};
struct StsBatch {
  std::vector<StsPair> pairs;
};

struct HardNegativeLoss {
  double value = 0.0;
  Matrix score_grad;  // layout of info_nce_hard_negatives_scores
  HardNegativeBatchGrad grad;
};
HardNegativeLoss info_nce_hard_negatives(const HardNegativeBatch& batch, LossMode mode,
                                         double tau);

struct CosentLoss {
  double value = 0.0;
  std::vector<double> score_grad;  // d value / d model score, per pair
  std::vector<ItemGrad> grad_a;
  std::vector<ItemGrad> grad_b;
};
// Every pair must carry a ground truth.
CosentLoss cosent(std::span<const StsPair> pairs, LossMode mode, double tau);

// Matryoshka wrapper over two sets of raw dense vectors: for each truncation
// length, vectors are truncated and renormalized, the score grid is rebuilt,
// and the base loss is applied; terms are combined with the schedule weights.
struct MatryoshkaSetsLoss {
  double value = 0.0;
  std::vector<std::vector<double>> grad_left;
  std::vector<std::vector<double>> grad_right;
};
MatryoshkaSetsLoss matryoshka_over_sets(
    std::span<const std::vector<double>> left, std::span<const std::vector<double>> right,
    const std::function<LossValueAndGrad(const SimilarityMatrix&)>& base_loss,
    const LossConfig& config);

// Matryoshka-wrapped InfoNCE over a pair batch (dense mode).
struct PairLoss {
  double value = 0.0;
  PairBatchGrad grad;
};
PairLoss matryoshka_info_nce(const PairBatch& batch, const LossConfig& config);

// Joint pair-training objective:
//   w1 L_NCE(S_dense(B_txt))  + w2 L_NCE(S_late(B_txt))  + w3 L_D(B_txt)
// + w4 L_NCE(S_dense(B_mm))   + w5 L_NCE(S_late(B_mm))   + w6 L_D(B_mm)
// with the dense NCE terms Matryoshka-wrapped. Either batch may be empty
// (its terms drop out); both empty is an error. terms[] holds the six
// unweighted term values.
struct JointLoss {
  double value = 0.0;
  std::array<double, 6> terms = {};
  PairBatchGrad grad_txt;
  PairBatchGrad grad_multi;
};
JointLoss joint_loss(const PairBatch& b_txt, const PairBatch& b_multi, const LossConfig& config);

// Phase-2 retrieval/code variant: L_NCE is replaced by the hard-negative
// extension on both modes; the KL term runs over the extended score rows.
struct JointHardNegativeLoss {
  double value = 0.0;
  std::array<double, 6> terms = {};
  HardNegativeBatchGrad grad_txt;
  HardNegativeBatchGrad grad_multi;
};
JointHardNegativeLoss joint_loss_hard_negatives(const HardNegativeBatch& b_txt,
                                                const HardNegativeBatch& b_multi,
                                                const LossConfig& config);

// Phase-2 text-matching variant over one mixed batch of pairs: pairs with a
// ground truth contribute through CoSENT, pairs without through InfoNCE, per
// mode; the KL term runs over the unscored pairs' square grids. Dense
// contributions are Matryoshka-wrapped. terms = {dense, late, kl}.
struct TextMatchingLoss {
  double value = 0.0;
  std::array<double, 3> terms = {};
  std::vector<ItemGrad> grad_a;
  std::vector<ItemGrad> grad_b;
};
TextMatchingLoss text_matching_loss(const StsBatch& batch, const LossConfig& config);

}  // namespace latesim
