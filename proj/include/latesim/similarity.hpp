#pragma once

#include <span>

#include "latesim/matrix.hpp"
#include "latesim/record.hpp"

namespace latesim {

enum class ScoreMode { dense, late };

// Batch-vs-batch score grid. Dense mode scores by cosine; late mode by the
// query-length-normalized late-interaction score (the training convention).
// Parallel over entries; every entry has a fixed internal reduction order, so
// the grid is bitwise independent of thread count.
SimilarityMatrix similarity_matrix(std::span<const EmbeddingRecord> queries,
                                   std::span<const EmbeddingRecord> passages, ScoreMode mode);

}  // namespace latesim
