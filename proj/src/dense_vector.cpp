#include "latesim/dense_vector.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "latesim/common.hpp"

namespace latesim {

DenseVector::DenseVector(std::vector<float> values) : values_(std::move(values)) {
  if (values_.empty()) throw DataError("dense vector must have at least one dimension");
}

double dot(const DenseVector& a, const DenseVector& b) {
  if (a.dim() != b.dim()) {
    throw DataError("dimension mismatch: " + std::to_string(a.dim()) + " vs " +
                    std::to_string(b.dim()));
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) sum += double(a[i]) * double(b[i]);
  return sum;
}

double l2_norm(const DenseVector& v) {
  double sum = 0.0;
  for (std::size_t i = 0; i < v.dim(); ++i) sum += double(v[i]) * double(v[i]);
  return std::sqrt(sum);
}

DenseVector normalize(const DenseVector& v) {
  const double norm = l2_norm(v);
  if (norm == 0.0) throw DataError("degenerate embedding");
  std::vector<float> out(v.dim());
  for (std::size_t i = 0; i < v.dim(); ++i) out[i] = float(double(v[i]) / norm);
  return DenseVector(std::move(out));
}

DenseVector truncate(const DenseVector& v, std::size_t k) {
  if (k == 0 || k > v.dim()) {
    throw DataError("truncation length " + std::to_string(k) + " outside [1, " +
                    std::to_string(v.dim()) + "]");
  }
  if (k == v.dim()) return v;  // full-dimension truncation is the identity, bit for bit
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) sum += double(v[i]) * double(v[i]);
  if (sum == 0.0) throw DataError("degenerate truncation");
  const double norm = std::sqrt(sum);
  std::vector<float> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = float(double(v[i]) / norm);
  return DenseVector(std::move(out));
}

double cosine(const DenseVector& a, const DenseVector& b) {
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) throw DataError("degenerate embedding");
  const double value = dot(a, b) / (na * nb);
  return std::clamp(value, -1.0, 1.0);
}

TruncationSchedule::TruncationSchedule(std::vector<std::size_t> dims, std::size_t full_dim)
    : dims_(std::move(dims)) {
  if (dims_.empty()) throw DataError("truncation schedule must be nonempty");
  if (dims_.front() != full_dim) {
    throw DataError("truncation schedule must start at the full dimension " +
                    std::to_string(full_dim) + ", got " + std::to_string(dims_.front()));
  }
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (dims_[i] == 0 || dims_[i] > full_dim) {
      throw DataError("truncation length " + std::to_string(dims_[i]) + " outside [1, " +
                      std::to_string(full_dim) + "]");
    }
    if (i > 0 && dims_[i] >= dims_[i - 1]) {
      throw DataError("truncation schedule must be strictly decreasing");
    }
  }
}

TruncationSchedule TruncationSchedule::halving(std::size_t full_dim, std::size_t min_dim) {
  std::vector<std::size_t> dims;
  for (std::size_t k = full_dim; k >= std::max<std::size_t>(min_dim, 1); k /= 2) {
    dims.push_back(k);
    if (k == 1) break;
  }
  return TruncationSchedule(std::move(dims), full_dim);
}

}  // namespace latesim
