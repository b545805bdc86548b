#include "latesim/reference.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "latesim/common.hpp"

namespace latesim {

double maxsim_reference(const float* q, std::size_t t, const float* p, std::size_t m,
                        std::size_t d) {
  // Row norms once, then the plain triple loop over cosine values.
  std::vector<double> q_inv(t), p_inv(m);
  for (std::size_t i = 0; i < t; ++i) {
    double sum = 0.0;
    for (std::size_t x = 0; x < d; ++x) sum += double(q[i * d + x]) * double(q[i * d + x]);
    q_inv[i] = sum > 0.0 ? 1.0 / std::sqrt(sum) : 0.0;
  }
  for (std::size_t j = 0; j < m; ++j) {
    double sum = 0.0;
    for (std::size_t x = 0; x < d; ++x) sum += double(p[j * d + x]) * double(p[j * d + x]);
    p_inv[j] = sum > 0.0 ? 1.0 / std::sqrt(sum) : 0.0;
  }
  double total = 0.0;
  for (std::size_t i = 0; i < t; ++i) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) {
      double dot = 0.0;
      for (std::size_t x = 0; x < d; ++x) dot += double(q[i * d + x]) * double(p[j * d + x]);
      dot *= q_inv[i] * p_inv[j];
      if (dot > best) best = dot;
    }
    total += best;
  }
  return total;
}

double late_interaction_reference(const MultiVector& q, const MultiVector& p) {
  if (q.dim() != p.dim()) {
    throw DataError("dimension mismatch: " + std::to_string(q.dim()) + " vs " +
                    std::to_string(p.dim()));
  }
  return maxsim_reference(q.data(), q.tokens(), p.data(), p.tokens(), q.dim());
}

SimilarityMatrix similarity_matrix_reference(std::span<const EmbeddingRecord> queries,
                                             std::span<const EmbeddingRecord> passages,
                                             ScoreMode mode) {
  if (queries.empty() || passages.empty()) throw DataError("empty input lists");
  SimilarityMatrix s(queries.size(), passages.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    for (std::size_t j = 0; j < passages.size(); ++j) {
      if (mode == ScoreMode::dense) {
        s.at(i, j) = cosine(queries[i].dense, passages[j].dense);
      } else {
        if (!queries[i].multi || !passages[j].multi) {
          throw DataError("late mode requires multi-vectors on both sides");
        }
        s.at(i, j) = late_interaction_reference(*queries[i].multi, *passages[j].multi) /
                     double(queries[i].multi->tokens());
      }
    }
  }
  return s;
}

}  // namespace latesim
