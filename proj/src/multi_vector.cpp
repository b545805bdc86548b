#include "latesim/multi_vector.hpp"

#include <cmath>
#include <string>

#include "latesim/common.hpp"

namespace latesim {

MultiVector::MultiVector(std::size_t tokens, std::size_t dim, std::vector<float> row_major)
    : tokens_(tokens), dim_(dim), data_(std::move(row_major)) {
  if (tokens_ == 0) throw DataError("multi-vector must have at least one token row");
  if (dim_ == 0) throw DataError("multi-vector dimension must be positive");
  if (data_.size() != tokens_ * dim_) {
    throw DataError("multi-vector buffer size " + std::to_string(data_.size()) +
                    " does not match " + std::to_string(tokens_) + "x" + std::to_string(dim_));
  }
}

MultiVector normalize_rows(const MultiVector& m) {
  std::vector<float> out(m.tokens() * m.dim());
  for (std::size_t i = 0; i < m.tokens(); ++i) {
    const auto row = m.row(i);
    double sum = 0.0;
    for (float v : row) sum += double(v) * double(v);
    if (sum == 0.0) throw DataError("degenerate embedding");
    const double inv = 1.0 / std::sqrt(sum);
    for (std::size_t x = 0; x < m.dim(); ++x) out[i * m.dim() + x] = float(double(row[x]) * inv);
  }
  return MultiVector(m.tokens(), m.dim(), std::move(out));
}

DenseVector mean_pool(const MultiVector& m) {
  std::vector<double> mean(m.dim(), 0.0);
  for (std::size_t i = 0; i < m.tokens(); ++i) {
    const auto row = m.row(i);
    for (std::size_t x = 0; x < m.dim(); ++x) mean[x] += double(row[x]);
  }
  std::vector<float> pooled(m.dim());
  for (std::size_t x = 0; x < m.dim(); ++x) pooled[x] = float(mean[x] / double(m.tokens()));
  return normalize(DenseVector(std::move(pooled)));
}

}  // namespace latesim
