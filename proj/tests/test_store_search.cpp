#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "latesim/reference.hpp"
#include "latesim/search.hpp"
#include "latesim/store.hpp"
#include "test_helpers.hpp"

using namespace latesim;
using namespace latesim::testing;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("latesim_test_" + name);
}

std::string file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// Naive search oracle: score every document, sort by (score desc, id asc).
RankedList brute_force_late(const EmbeddingStore& store, const EmbeddingRecord& query,
                            std::size_t k) {
  std::vector<ScoredDoc> scored;
  for (const auto& rec : store.records()) {
    scored.push_back({rec.id, late_interaction_reference(*query.multi, *rec.multi)});
  }
  std::sort(scored.begin(), scored.end(), [](const ScoredDoc& a, const ScoredDoc& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  scored.resize(std::min(k, scored.size()));
  return scored;
}

}  // namespace

TEST_CASE("store roundtrip preserves fields") {
  Rng rng(301);
  std::vector<EmbeddingRecord> records;
  records.push_back(random_record(rng, "alpha", 8, 3, 4));
  records.push_back(random_record(rng, "beta", 8, 1, 4));
  records.push_back({"gamma", Role::passage, Modality::text, random_unit_dense(rng, 8),
                     std::nullopt});  // no multi-vector

  const auto path = temp_path("roundtrip.bin");
  write_store(path, records);
  const auto back = read_store(path);
  REQUIRE(back.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(back[i] == records[i]);
  }
  std::filesystem::remove(path);
}

TEST_CASE("duplicate ids are rejected, naming the id") {
  Rng rng(303);
  std::vector<EmbeddingRecord> records;
  records.push_back(random_record(rng, "dup", 4, 1, 3));
  records.push_back(random_record(rng, "dup", 4, 1, 3));
  CHECK_THROWS_WITH_AS(EmbeddingStore::from_records(std::move(records)), "duplicate id: dup",
                       DataError);
}

TEST_CASE("10k-record roundtrip is byte-identical on rewrite") {
  Rng rng(307);
  std::vector<EmbeddingRecord> records;
  records.reserve(10000);
  for (int i = 0; i < 10000; ++i) {
    records.push_back(random_record(rng, "doc-" + std::to_string(i), 16, 1 + rng.below(6), 8));
  }
  const auto path_a = temp_path("bulk_a.bin");
  const auto path_b = temp_path("bulk_b.bin");
  write_store(path_a, records);
  const auto back = read_store(path_a);
  write_store(path_b, back);
  CHECK(file_bytes(path_a) == file_bytes(path_b));
  REQUIRE(back.size() == records.size());
  CHECK(back == records);
  std::filesystem::remove(path_a);
  std::filesystem::remove(path_b);
}

TEST_CASE("malformed stores are rejected") {
  const auto path = temp_path("malformed.bin");
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << "MISM" << std::string(64, '\0');
  }
  CHECK_THROWS_AS(read_store(path), DataError);
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << "LS";  // truncated magic
  }
  CHECK_THROWS_AS(read_store(path), DataError);
  {
    // valid magic, bogus version
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << "LSIM";
    const char version[2] = {9, 0};
    out.write(version, 2);
    out << std::string(16, '\0');
  }
  CHECK_THROWS_AS(read_store(path), DataError);
  std::filesystem::remove(path);
}

TEST_CASE("jsonl roundtrip") {
  Rng rng(311);
  std::vector<EmbeddingRecord> records;
  records.push_back(random_record(rng, "a", 4, 2, 3));
  records.push_back({"b", Role::query, Modality::image, random_unit_dense(rng, 4), std::nullopt});
  const auto path = temp_path("records.jsonl");
  write_jsonl(path, records);
  const auto back = read_jsonl(path, /*normalize_embeddings=*/false);
  REQUIRE(back.size() == 2);
  CHECK(back[0].id == "a");
  CHECK(back[0].multi.has_value());
  CHECK(back[1].multi == std::nullopt);
  CHECK(back[0].dense.dim() == 4);
  std::filesystem::remove(path);
}

TEST_CASE("dense search on an orthogonal basis") {
  std::vector<EmbeddingRecord> docs = {
      {"d1", Role::passage, Modality::text, dv({1, 0}), std::nullopt},
      {"d2", Role::passage, Modality::text, dv({0, 1}), std::nullopt}};
  const auto store = EmbeddingStore::from_records(std::move(docs));

  SearchRequest req;
  req.query = {"q", Role::query, Modality::text, dv({1, 0}), std::nullopt};
  req.mode = SearchMode::dense;
  req.k = 2;
  const auto ranking = search(store, req);
  REQUIRE(ranking.size() == 2);
  CHECK(ranking[0].id == "d1");
  CHECK(ranking[0].score == doctest::Approx(1.0));
  CHECK(ranking[1].id == "d2");
  CHECK(ranking[1].score == doctest::Approx(0.0));

  // k beyond the store size returns the full ranking, not an error
  req.k = 50;
  CHECK(search(store, req).size() == 2);

  // dimension mismatch names both dims
  req.query = {"q", Role::query, Modality::text, dv({1, 0, 0}), std::nullopt};
  CHECK_THROWS_WITH_AS(search(store, req),
                       "dimension mismatch: query dense dim 3 vs store dense dim 2", DataError);
}

TEST_CASE("late search equals the brute-force oracle on 200 random documents") {
  Rng rng(313);
  std::vector<EmbeddingRecord> docs;
  for (int i = 0; i < 200; ++i) {
    docs.push_back(random_record(rng, "doc-" + std::to_string(i), 8, 1 + rng.below(8), 6));
  }
  const auto store = EmbeddingStore::from_records(std::move(docs));

  for (int trial = 0; trial < 10; ++trial) {
    SearchRequest req;
    req.query = random_record(rng, "q", 8, 1 + rng.below(8), 6);
    req.mode = SearchMode::late;
    req.k = 10;
    const auto got = search(store, req);
    const auto expected = brute_force_late(store, req.query, req.k);
    REQUIRE(got.size() == expected.size());
    for (std::size_t r = 0; r < got.size(); ++r) {
      CHECK(got[r].id == expected[r].id);
      CHECK(std::fabs(got[r].score - expected[r].score) < 1e-5);
    }
  }
}

TEST_CASE("two-stage search with a full candidate pool equals pure late search") {
  Rng rng(317);
  std::vector<EmbeddingRecord> docs;
  for (int i = 0; i < 64; ++i) {
    docs.push_back(random_record(rng, "doc-" + std::to_string(i), 8, 1 + rng.below(5), 6));
  }
  const auto store = EmbeddingStore::from_records(std::move(docs));

  SearchRequest late_req;
  late_req.query = random_record(rng, "q", 8, 4, 6);
  late_req.mode = SearchMode::late;
  late_req.k = 12;

  SearchRequest two_stage = late_req;
  two_stage.mode = SearchMode::two_stage;
  two_stage.candidate_pool = store.size();

  const auto a = search(store, late_req);
  const auto b = search(store, two_stage);
  REQUIRE(a.size() == b.size());
  for (std::size_t r = 0; r < a.size(); ++r) {
    CHECK(a[r].id == b[r].id);
    CHECK(a[r].score == b[r].score);
  }

  // narrow pools cannot return more than requested and stay late-scored
  two_stage.candidate_pool = 16;
  CHECK(search(store, two_stage).size() == 12);
}

TEST_CASE("dense search with full-dimension truncation equals untruncated search") {
  Rng rng(331);
  std::vector<EmbeddingRecord> docs;
  for (int i = 0; i < 40; ++i) {
    docs.push_back(random_record(rng, "doc-" + std::to_string(i), 16, 1, 4));
  }
  const auto store = EmbeddingStore::from_records(std::move(docs));

  SearchRequest req;
  req.query = random_record(rng, "q", 16, 1, 4);
  req.mode = SearchMode::dense;
  req.k = 10;
  const auto plain = search(store, req);
  req.truncate_to = 16;
  const auto truncated = search(store, req);
  REQUIRE(plain.size() == truncated.size());
  for (std::size_t r = 0; r < plain.size(); ++r) {
    CHECK(plain[r].id == truncated[r].id);
    CHECK(plain[r].score == truncated[r].score);
  }

  // shorter prefixes change scores but stay a valid ranking
  req.truncate_to = 4;
  const auto shorter = search(store, req);
  CHECK(shorter.size() == 10);
  for (std::size_t r = 1; r < shorter.size(); ++r) {
    CHECK(shorter[r - 1].score >= shorter[r].score);
  }
}

TEST_CASE("ties break by ascending doc id") {
  std::vector<EmbeddingRecord> docs = {
      {"zeta", Role::passage, Modality::text, dv({1, 0}), std::nullopt},
      {"alpha", Role::passage, Modality::text, dv({1, 0}), std::nullopt},
      {"mid", Role::passage, Modality::text, dv({0, 1}), std::nullopt}};
  const auto store = EmbeddingStore::from_records(std::move(docs));
  SearchRequest req;
  req.query = {"q", Role::query, Modality::text, dv({1, 0}), std::nullopt};
  req.mode = SearchMode::dense;
  req.k = 3;
  const auto ranking = search(store, req);
  REQUIRE(ranking.size() == 3);
  CHECK(ranking[0].id == "alpha");
  CHECK(ranking[1].id == "zeta");
  CHECK(ranking[2].id == "mid");
}

TEST_CASE("batch search equals sequential search") {
  Rng rng(337);
  std::vector<EmbeddingRecord> docs;
  for (int i = 0; i < 100; ++i) {
    docs.push_back(random_record(rng, "doc-" + std::to_string(i), 8, 1 + rng.below(4), 6));
  }
  const auto store = EmbeddingStore::from_records(std::move(docs));

  std::vector<SearchRequest> requests;
  for (int i = 0; i < 50; ++i) {
    SearchRequest req;
    req.query = random_record(rng, "q" + std::to_string(i), 8, 1 + rng.below(4), 6);
    req.mode = (i % 3 == 0) ? SearchMode::dense
                            : (i % 3 == 1 ? SearchMode::late : SearchMode::two_stage);
    req.k = 5;
    requests.push_back(std::move(req));
  }
  const auto batched = batch_search(store, requests);
  REQUIRE(batched.size() == requests.size());
  for (std::size_t i = 0; i < requests.size(); ++i) {
    const auto single = search(store, requests[i]);
    CHECK(batched[i] == single);
  }

  CHECK(batch_search(store, {}).empty());
}

TEST_CASE("trec run format") {
  RankedList ranking = {{"docB", 0.987654321}, {"docA", 0.5}};
  std::ostringstream out;
  write_trec_run(out, "q7", ranking, "latesim");
  CHECK(out.str() == "q7 Q0 docB 1 0.987654 latesim\nq7 Q0 docA 2 0.500000 latesim\n");
}
