#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "latesim/dense_vector.hpp"

namespace latesim {

// Per-token embedding rows: a t x d row-major float matrix, t >= 1.
// Row i holds the embedding of token i. Immutable after construction.
class MultiVector {
 public:
  MultiVector(std::size_t tokens, std::size_t dim, std::vector<float> row_major);

  std::size_t tokens() const { return tokens_; }
  std::size_t dim() const { return dim_; }

  std::span<const float> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }
  const float* data() const { return data_.data(); }
  std::span<const float> values() const { return data_; }

  bool operator==(const MultiVector&) const = default;

 private:
  std::size_t tokens_;
  std::size_t dim_;
  std::vector<float> data_;
};

// Every row scaled to unit L2 norm. Throws DataError("degenerate embedding")
// if any row is zero.
MultiVector normalize_rows(const MultiVector& m);

// Row-wise mean followed by normalization. Throws if the mean is zero.
DenseVector mean_pool(const MultiVector& m);

}  // namespace latesim
