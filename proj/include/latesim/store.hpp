#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "latesim/record.hpp"

namespace latesim {

// Binary multi-vector store, little-endian:
//   magic "LSIM", u16 version = 1, u32 dense dim, u32 multi dim, u64 count;
//   per record: u16 id length, id bytes (UTF-8), u8 role (0=query, 1=passage),
//   u8 modality (0=text, 1=image), f32 x dense dim, u32 token count,
//   f32 x tokens x multi dim.
// A record without a multi-vector stores token count 0.

inline constexpr char kStoreMagic[4] = {'L', 'S', 'I', 'M'};
inline constexpr std::uint16_t kStoreVersion = 1;

void write_store(const std::filesystem::path& path, std::span<const EmbeddingRecord> records);
std::vector<EmbeddingRecord> read_store(const std::filesystem::path& path);

// JSONL interchange: one object per line with fields id, role, modality,
// dense (array), and optionally multi (array of arrays).
std::vector<EmbeddingRecord> read_jsonl(const std::filesystem::path& path,
                                        bool normalize_embeddings = false);
void write_jsonl(const std::filesystem::path& path, std::span<const EmbeddingRecord> records);

// Immutable, searchable collection of records with a unique-id index.
class EmbeddingStore {
 public:
  static EmbeddingStore open(const std::filesystem::path& path);
  static EmbeddingStore from_records(std::vector<EmbeddingRecord> records);

  std::size_t size() const { return records_.size(); }
  std::size_t dense_dim() const { return dense_dim_; }
  std::size_t multi_dim() const { return multi_dim_; }
  const EmbeddingRecord& record(std::size_t i) const { return records_[i]; }
  std::span<const EmbeddingRecord> records() const { return records_; }
  const EmbeddingRecord* find(const std::string& id) const;

 private:
  std::vector<EmbeddingRecord> records_;
  std::map<std::string, std::size_t> index_;
  std::size_t dense_dim_ = 0;
  std::size_t multi_dim_ = 0;  // 0 when no record carries a multi-vector
};

// Validates, writes the binary format, and opens the result.
EmbeddingStore build_store(std::vector<EmbeddingRecord> records,
                           const std::filesystem::path& path);

}  // namespace latesim
