#pragma once

#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "latesim/dense_vector.hpp"

namespace latesim {

// Matched pair of dense embeddings for geometry analyses.
struct EmbeddingPair {
  DenseVector a;
  DenseVector b;
};
using PairSet = std::vector<EmbeddingPair>;

struct DistributionSummary {
  std::vector<double> bin_edges;   // bins + 1, strictly increasing
  std::vector<std::size_t> counts;  // per bin
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t samples = 0;

  nlohmann::ordered_json to_json() const;
};

// Histogram of pairwise cosines over [-1, 1] with `bins` uniform bins.
DistributionSummary cosine_distribution(const PairSet& pairs, std::size_t bins);

// Mean cosine over matched pairs (the cross-modal alignment score when the
// pairs are image-text matches).
double alignment_score(const PairSet& pairs);

// Sum over bins of min(p, q) of the two normalized histograms; 1 = identical
// supports, 0 = disjoint.
double overlap_coefficient(const DistributionSummary& a, const DistributionSummary& b);

struct ModalityGapResult {
  DistributionSummary cross_modal;
  DistributionSummary same_modal;
  double gap = 0.0;  // mean(same) - mean(cross)
  nlohmann::ordered_json to_json() const;
};
ModalityGapResult modality_gap(const PairSet& cross_modal, const PairSet& same_modal,
                               std::size_t bins = 50);

struct ConeEffectResult {
  DistributionSummary positives;
  DistributionSummary negatives;
  double separation = 0.0;  // mean(pos) - mean(neg)
  double overlap = 0.0;
  nlohmann::ordered_json to_json() const;
};
ConeEffectResult cone_effect(const PairSet& positives, const PairSet& negatives,
                             std::size_t bins = 50);

// CSV histogram rows: bin_lo,bin_hi,count_a,count_b.
void write_histogram_csv(std::ostream& out, const DistributionSummary& a,
                         const DistributionSummary& b);

}  // namespace latesim
