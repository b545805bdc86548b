#pragma once

#include <optional>
#include <string>

#include "latesim/common.hpp"
#include "latesim/dense_vector.hpp"
#include "latesim/multi_vector.hpp"

namespace latesim {

// One embedded item: pooled dense vector plus optional per-token rows.
struct EmbeddingRecord {
  std::string id;
  Role role = Role::passage;
  Modality modality = Modality::text;
  DenseVector dense;
  std::optional<MultiVector> multi;

  bool operator==(const EmbeddingRecord&) const = default;
};

// Validates the id and, when requested, normalizes the dense vector and the
// multi-vector rows (the storage convention for everything this library
// scores).
EmbeddingRecord make_record(std::string id, Role role, Modality modality, DenseVector dense,
                            std::optional<MultiVector> multi, bool normalize_embeddings = true);

}  // namespace latesim
