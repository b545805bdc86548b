#include "latesim/record.hpp"

namespace latesim {

std::string to_string(Role r) { return r == Role::query ? "query" : "passage"; }

std::string to_string(Modality m) { return m == Modality::text ? "text" : "image"; }

Role role_from_string(const std::string& s) {
  if (s == "query") return Role::query;
  if (s == "passage") return Role::passage;
  throw DataError("unknown role '" + s + "' (expected query or passage)");
}

Modality modality_from_string(const std::string& s) {
  if (s == "text") return Modality::text;
  if (s == "image") return Modality::image;
  throw DataError("unknown modality '" + s + "' (expected text or image)");
}

EmbeddingRecord make_record(std::string id, Role role, Modality modality, DenseVector dense,
                            std::optional<MultiVector> multi, bool normalize_embeddings) {
  if (id.empty()) throw DataError("record id must be nonempty");
  if (normalize_embeddings) {
    dense = normalize(dense);
    if (multi) multi = normalize_rows(*multi);
  }
  return EmbeddingRecord{std::move(id), role, modality, std::move(dense), std::move(multi)};
}

}  // namespace latesim
