#pragma once

#include <cstddef>
#include <span>

#include "latesim/matrix.hpp"
#include "latesim/multi_vector.hpp"
#include "latesim/record.hpp"
#include "latesim/similarity.hpp"

namespace latesim {

// Serial naive implementations, kept as oracles for the blocked kernels and
// as the baseline side of the benchmark target. No pragmas, strict
// index-order 64-bit accumulation.

double maxsim_reference(const float* q, std::size_t t, const float* p, std::size_t m,
                        std::size_t d);

double late_interaction_reference(const MultiVector& q, const MultiVector& p);

SimilarityMatrix similarity_matrix_reference(std::span<const EmbeddingRecord> queries,
                                             std::span<const EmbeddingRecord> passages,
                                             ScoreMode mode);

}  // namespace latesim
