#pragma once

#include <cmath>
#include <vector>

#include "latesim/multi_vector.hpp"
#include "latesim/record.hpp"
#include "latesim/rng.hpp"

namespace latesim::testing {

inline DenseVector dv(std::initializer_list<float> values) {
  return DenseVector(std::vector<float>(values));
}

inline MultiVector mv(std::initializer_list<std::initializer_list<float>> rows) {
  std::vector<float> flat;
  std::size_t dim = rows.begin()->size();
  for (const auto& row : rows) flat.insert(flat.end(), row.begin(), row.end());
  return MultiVector(rows.size(), dim, std::move(flat));
}

inline MultiVector random_unit_multi(Rng& rng, std::size_t tokens, std::size_t dim) {
  std::vector<float> data(tokens * dim);
  for (std::size_t r = 0; r < tokens; ++r) {
    double sum = 0.0;
    for (std::size_t x = 0; x < dim; ++x) {
      const double v = rng.normal();
      data[r * dim + x] = float(v);
      sum += v * v;
    }
    const float inv = float(1.0 / std::sqrt(sum));
    for (std::size_t x = 0; x < dim; ++x) data[r * dim + x] *= inv;
  }
  return MultiVector(tokens, dim, std::move(data));
}

inline DenseVector random_unit_dense(Rng& rng, std::size_t dim) {
  std::vector<float> v(dim);
  double sum = 0.0;
  for (auto& x : v) {
    const double g = rng.normal();
    x = float(g);
    sum += g * g;
  }
  const float inv = float(1.0 / std::sqrt(sum));
  for (auto& x : v) x *= inv;
  return DenseVector(std::move(v));
}

inline EmbeddingRecord random_record(Rng& rng, std::string id, std::size_t dense_dim,
                                     std::size_t tokens, std::size_t multi_dim) {
  return EmbeddingRecord{std::move(id),
                         rng.below(2) ? Role::query : Role::passage,
                         rng.below(2) ? Modality::text : Modality::image,
                         random_unit_dense(rng, dense_dim),
                         random_unit_multi(rng, tokens, multi_dim)};
}

}  // namespace latesim::testing
