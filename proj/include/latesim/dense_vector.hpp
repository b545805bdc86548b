#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace latesim {

// Single pooled embedding. Components are stored as 32-bit floats and are
// Matryoshka-ordered: prefixes remain usable embeddings after renormalization.
// Immutable after construction.
class DenseVector {
 public:
  // Empty placeholder; any real vector must come through the value
  // constructor, which rejects zero dimensions.
  DenseVector() = default;
  explicit DenseVector(std::vector<float> values);

  std::size_t dim() const { return values_.size(); }
  float operator[](std::size_t i) const { return values_[i]; }
  std::span<const float> values() const { return values_; }

  bool operator==(const DenseVector&) const = default;

 private:
  std::vector<float> values_;
};

double dot(const DenseVector& a, const DenseVector& b);
double l2_norm(const DenseVector& v);

// v / ||v||. Throws DataError("degenerate embedding") on a zero vector.
DenseVector normalize(const DenseVector& v);

// First k components, renormalized to unit length.
// Throws on k == 0, k > dim, or an all-zero prefix ("degenerate truncation").
DenseVector truncate(const DenseVector& v, std::size_t k);

// Cosine similarity, clamped to [-1, 1]. Accumulates in 64-bit.
double cosine(const DenseVector& a, const DenseVector& b);

// Strictly decreasing list of truncation lengths; first entry is the full
// dimension. Drives Matryoshka loss terms and truncated dense search.
class TruncationSchedule {
 public:
  TruncationSchedule(std::vector<std::size_t> dims, std::size_t full_dim);

  // full_dim, full_dim/2, ... down to min_dim.
  static TruncationSchedule halving(std::size_t full_dim, std::size_t min_dim = 4);

  std::span<const std::size_t> dims() const { return dims_; }
  std::size_t full_dim() const { return dims_.front(); }

 private:
  std::vector<std::size_t> dims_;
};

}  // namespace latesim
