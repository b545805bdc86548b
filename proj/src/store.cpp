#include "latesim/store.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

namespace latesim {
namespace {

void put_bytes(std::ostream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), std::streamsize(n));
}

template <typename T>
void put_le(std::ostream& out, T value) {
  static_assert(std::is_integral_v<T>);
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    buf[i] = static_cast<unsigned char>((std::make_unsigned_t<T>(value) >> (8 * i)) & 0xff);
  }
  put_bytes(out, buf, sizeof(T));
}

void put_f32(std::ostream& out, float value) {
  const auto bits = std::bit_cast<std::uint32_t>(value);
  put_le(out, bits);
}

void get_bytes(std::istream& in, void* p, std::size_t n, const char* what) {
  in.read(static_cast<char*>(p), std::streamsize(n));
  if (std::size_t(in.gcount()) != n) throw DataError(std::string("truncated store: ") + what);
}

template <typename T>
T get_le(std::istream& in, const char* what) {
  unsigned char buf[sizeof(T)];
  get_bytes(in, buf, sizeof(T), what);
  std::make_unsigned_t<T> v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= std::make_unsigned_t<T>(buf[i]) << (8 * i);
  return static_cast<T>(v);
}

float get_f32(std::istream& in, const char* what) {
  return std::bit_cast<float>(get_le<std::uint32_t>(in, what));
}

struct Dims {
  std::size_t dense = 0;
  std::size_t multi = 0;
};

Dims check_dims(std::span<const EmbeddingRecord> records) {
  if (records.empty()) throw DataError("store must contain at least one record");
  Dims dims;
  dims.dense = records.front().dense.dim();
  for (const auto& r : records) {
    if (r.id.empty()) throw DataError("record id must be nonempty");
    if (r.dense.dim() != dims.dense) {
      throw DataError("dimension mismatch: " + std::to_string(dims.dense) + " vs " +
                      std::to_string(r.dense.dim()) + " (record " + r.id + ")");
    }
    if (r.multi) {
      if (dims.multi == 0) dims.multi = r.multi->dim();
      if (r.multi->dim() != dims.multi) {
        throw DataError("dimension mismatch: " + std::to_string(dims.multi) + " vs " +
                        std::to_string(r.multi->dim()) + " (record " + r.id + ")");
      }
    }
  }
  return dims;
}

}  // namespace

void write_store(const std::filesystem::path& path, std::span<const EmbeddingRecord> records) {
  const Dims dims = check_dims(records);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path.string());

  put_bytes(out, kStoreMagic, 4);
  put_le<std::uint16_t>(out, kStoreVersion);
  put_le<std::uint32_t>(out, std::uint32_t(dims.dense));
  put_le<std::uint32_t>(out, std::uint32_t(dims.multi));
  put_le<std::uint64_t>(out, std::uint64_t(records.size()));

  for (const auto& r : records) {
    if (r.id.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw DataError("record id too long: " + r.id.substr(0, 32) + "...");
    }
    put_le<std::uint16_t>(out, std::uint16_t(r.id.size()));
    put_bytes(out, r.id.data(), r.id.size());
    put_le<std::uint8_t>(out, std::uint8_t(r.role));
    put_le<std::uint8_t>(out, std::uint8_t(r.modality));
    for (float v : r.dense.values()) put_f32(out, v);
    if (r.multi) {
      put_le<std::uint32_t>(out, std::uint32_t(r.multi->tokens()));
      for (float v : r.multi->values()) put_f32(out, v);
    } else {
      put_le<std::uint32_t>(out, 0);
    }
  }
  out.flush();
  if (!out) throw DataError("write failed: " + path.string());
}

std::vector<EmbeddingRecord> read_store(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open store: " + path.string());

  char magic[4];
  get_bytes(in, magic, 4, "magic");
  if (std::memcmp(magic, kStoreMagic, 4) != 0) {
    throw DataError("malformed store header: bad magic in " + path.string());
  }
  const auto version = get_le<std::uint16_t>(in, "version");
  if (version != kStoreVersion) {
    throw DataError("unsupported store version " + std::to_string(version));
  }
  const auto dense_dim = get_le<std::uint32_t>(in, "dense dim");
  const auto multi_dim = get_le<std::uint32_t>(in, "multi dim");
  const auto count = get_le<std::uint64_t>(in, "record count");
  if (dense_dim == 0) throw DataError("malformed store header: dense dim 0");

  std::vector<EmbeddingRecord> records;
  records.reserve(count);
  for (std::uint64_t n = 0; n < count; ++n) {
    const auto id_len = get_le<std::uint16_t>(in, "id length");
    if (id_len == 0) throw DataError("record id must be nonempty");
    std::string id(id_len, '\0');
    get_bytes(in, id.data(), id_len, "id bytes");

    const auto role_byte = get_le<std::uint8_t>(in, "role");
    const auto modality_byte = get_le<std::uint8_t>(in, "modality");
    if (role_byte > 1) throw DataError("bad role byte in record " + id);
    if (modality_byte > 1) throw DataError("bad modality byte in record " + id);

    std::vector<float> dense(dense_dim);
    for (auto& v : dense) v = get_f32(in, "dense values");

    const auto tokens = get_le<std::uint32_t>(in, "token count");
    std::optional<MultiVector> multi;
    if (tokens > 0) {
      if (multi_dim == 0) throw DataError("record " + id + " has tokens but store multi dim is 0");
      std::vector<float> rows(std::size_t(tokens) * multi_dim);
      for (auto& v : rows) v = get_f32(in, "multi values");
      multi.emplace(tokens, multi_dim, std::move(rows));
    }

    records.push_back(EmbeddingRecord{std::move(id), Role(role_byte), Modality(modality_byte),
                                      DenseVector(std::move(dense)), std::move(multi)});
  }
  return records;
}

std::vector<EmbeddingRecord> read_jsonl(const std::filesystem::path& path,
                                        bool normalize_embeddings) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path.string());
  std::vector<EmbeddingRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    try {
      std::vector<float> dense = j.at("dense").get<std::vector<float>>();
      std::optional<MultiVector> multi;
      if (j.contains("multi") && !j["multi"].is_null()) {
        const auto rows = j["multi"].get<std::vector<std::vector<float>>>();
        if (rows.empty()) throw DataError("multi must have at least one row");
        const std::size_t dim = rows.front().size();
        std::vector<float> flat;
        flat.reserve(rows.size() * dim);
        for (const auto& row : rows) {
          if (row.size() != dim) throw DataError("ragged multi rows");
          flat.insert(flat.end(), row.begin(), row.end());
        }
        multi.emplace(rows.size(), dim, std::move(flat));
      }
      records.push_back(make_record(j.at("id").get<std::string>(),
                                    role_from_string(j.at("role").get<std::string>()),
                                    modality_from_string(j.at("modality").get<std::string>()),
                                    DenseVector(std::move(dense)), std::move(multi),
                                    normalize_embeddings));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (records.empty()) throw DataError("no records in " + path.string());
  return records;
}

void write_jsonl(const std::filesystem::path& path, std::span<const EmbeddingRecord> records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["role"] = to_string(r.role);
    j["modality"] = to_string(r.modality);
    j["dense"] = std::vector<float>(r.dense.values().begin(), r.dense.values().end());
    if (r.multi) {
      std::vector<std::vector<float>> rows;
      rows.reserve(r.multi->tokens());
      for (std::size_t i = 0; i < r.multi->tokens(); ++i) {
        rows.emplace_back(r.multi->row(i).begin(), r.multi->row(i).end());
      }
      j["multi"] = rows;
    }
    out << j.dump() << '\n';
  }
  if (!out) throw DataError("write failed: " + path.string());
}

EmbeddingStore EmbeddingStore::open(const std::filesystem::path& path) {
  return from_records(read_store(path));
}

EmbeddingStore EmbeddingStore::from_records(std::vector<EmbeddingRecord> records) {
  const Dims dims = check_dims(records);
  EmbeddingStore store;
  store.dense_dim_ = dims.dense;
  store.multi_dim_ = dims.multi;
  store.records_ = std::move(records);
  for (std::size_t i = 0; i < store.records_.size(); ++i) {
    const auto& r = store.records_[i];
    const auto [it, inserted] = store.index_.emplace(r.id, i);
    if (!inserted) throw DataError("duplicate id: " + r.id);
    // Zero rows are rejected at open so the scoring paths stay throw-free.
    if (r.multi) {
      for (std::size_t row = 0; row < r.multi->tokens(); ++row) {
        double sum = 0.0;
        for (const float v : r.multi->row(row)) sum += double(v) * double(v);
        if (sum == 0.0) throw DataError("degenerate embedding (record " + r.id + ")");
      }
    }
  }
  return store;
}

const EmbeddingRecord* EmbeddingStore::find(const std::string& id) const {
  const auto it = index_.find(id);
  return it == index_.end() ? nullptr : &records_[it->second];
}

EmbeddingStore build_store(std::vector<EmbeddingRecord> records,
                           const std::filesystem::path& path) {
  auto store = EmbeddingStore::from_records(std::move(records));
  write_store(path, store.records());
  return store;
}

}  // namespace latesim
