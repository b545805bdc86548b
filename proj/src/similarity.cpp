#include "latesim/similarity.hpp"

#include <cstdint>
#include <string>

#include "latesim/common.hpp"
#include "latesim/kernels.hpp"

namespace latesim {
namespace {

// All throw paths run before the parallel region; an exception escaping an
// OpenMP loop would terminate the process.
void validate(std::span<const EmbeddingRecord> queries, std::span<const EmbeddingRecord> passages,
              ScoreMode mode) {
  if (queries.empty() || passages.empty()) throw DataError("empty input lists");
  const std::size_t dense_dim = queries.front().dense.dim();
  auto check = [&](const EmbeddingRecord& r) {
    if (r.dense.dim() != dense_dim) {
      throw DataError("dimension mismatch: " + std::to_string(dense_dim) + " vs " +
                      std::to_string(r.dense.dim()) + " (record " + r.id + ")");
    }
    if (mode == ScoreMode::dense && l2_norm(r.dense) == 0.0) {
      throw DataError("degenerate embedding (record " + r.id + ")");
    }
    if (mode == ScoreMode::late && !r.multi) {
      throw DataError("late mode requires multi-vectors on both sides (record " + r.id + ")");
    }
  };
  for (const auto& r : queries) check(r);
  for (const auto& r : passages) check(r);
  if (mode == ScoreMode::late) {
    const std::size_t multi_dim = queries.front().multi->dim();
    for (const auto& r : queries)
      if (r.multi->dim() != multi_dim)
        throw DataError("dimension mismatch: " + std::to_string(multi_dim) + " vs " +
                        std::to_string(r.multi->dim()) + " (record " + r.id + ")");
    for (const auto& r : passages)
      if (r.multi->dim() != multi_dim)
        throw DataError("dimension mismatch: " + std::to_string(multi_dim) + " vs " +
                        std::to_string(r.multi->dim()) + " (record " + r.id + ")");
  }
}

}  // namespace

SimilarityMatrix similarity_matrix(std::span<const EmbeddingRecord> queries,
                                   std::span<const EmbeddingRecord> passages, ScoreMode mode) {
  validate(queries, passages, mode);
  SimilarityMatrix s(queries.size(), passages.size());
  const std::int64_t n = std::int64_t(queries.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& q = queries[std::size_t(i)];
    for (std::size_t j = 0; j < passages.size(); ++j) {
      const auto& p = passages[j];
      s.at(std::size_t(i), j) = mode == ScoreMode::dense
                                    ? cosine(q.dense, p.dense)
                                    : normalized_late_score(*q.multi, *p.multi);
    }
  }
  return s;
}

}  // namespace latesim
