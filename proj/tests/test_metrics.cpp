#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "latesim/harness.hpp"
#include "latesim/metrics.hpp"
#include "test_helpers.hpp"

using namespace latesim;
using namespace latesim::testing;

namespace {

std::map<std::string, int> qrels_of(std::initializer_list<std::pair<const char*, int>> entries) {
  std::map<std::string, int> out;
  for (const auto& [id, rel] : entries) out[id] = rel;
  return out;
}

RankedList ranking_of(std::initializer_list<const char*> ids) {
  RankedList out;
  double score = 1.0;
  for (const char* id : ids) {
    out.push_back({id, score});
    score -= 0.01;
  }
  return out;
}

// Direct formula evaluation with exponential gain (2^rel - 1); for binary
// judgments this must coincide with the linear-gain implementation.
double ndcg_exponential(const RankedList& ranking, const std::map<std::string, int>& qrels,
                        std::size_t k) {
  auto gain = [](int rel) { return std::pow(2.0, double(rel)) - 1.0; };
  double dcg = 0.0;
  for (std::size_t r = 0; r < std::min(k, ranking.size()); ++r) {
    const auto it = qrels.find(ranking[r].id);
    if (it != qrels.end()) dcg += gain(it->second) / std::log2(double(r) + 2.0);
  }
  std::vector<int> rels;
  for (const auto& [id, rel] : qrels) {
    if (rel > 0) rels.push_back(rel);
  }
  if (rels.empty()) return 0.0;
  std::sort(rels.begin(), rels.end(), std::greater<>());
  double idcg = 0.0;
  for (std::size_t r = 0; r < std::min(k, rels.size()); ++r) {
    idcg += gain(rels[r]) / std::log2(double(r) + 2.0);
  }
  return dcg / idcg;
}

}  // namespace

TEST_CASE("ndcg worked example") {
  const auto qrels = qrels_of({{"d1", 1}, {"d3", 1}, {"d2", 0}});
  const auto ranking = ranking_of({"d2", "d1", "d3"});
  CHECK(ndcg_at_k(ranking, qrels, 3) == doctest::Approx(0.69343).epsilon(1e-5));

  // perfect ranking of all positives first
  CHECK(ndcg_at_k(ranking_of({"d1", "d3", "d2"}), qrels, 3) == doctest::Approx(1.0));

  // no relevant docs within k
  CHECK(ndcg_at_k(ranking_of({"d2", "d9"}), qrels, 2) == doctest::Approx(0.0));
}

TEST_CASE("recall examples") {
  const auto two = qrels_of({{"d1", 1}, {"d2", 1}});
  CHECK(recall_at_k(ranking_of({"d1", "d2", "x", "y", "z"}), two, 5) == doctest::Approx(1.0));
  CHECK(recall_at_k(ranking_of({"d1", "x", "y", "z", "w"}), two, 5) == doctest::Approx(0.5));

  const auto three = qrels_of({{"d1", 1}, {"d2", 1}, {"d3", 1}});
  CHECK(recall_at_k(ranking_of({"d1", "x"}), three, 2) == doctest::Approx(0.33333).epsilon(1e-5));
}

TEST_CASE("spearman examples") {
  const double a1[] = {1, 2, 3};
  const double b1[] = {10, 20, 30};
  CHECK(spearman(a1, b1) == doctest::Approx(1.0));

  const double b2[] = {30, 20, 10};
  CHECK(spearman(a1, b2) == doctest::Approx(-1.0));

  const double a3[] = {1, 2, 2, 4};
  const double b3[] = {1, 3, 2, 4};
  CHECK(spearman(a3, b3) == doctest::Approx(0.94737).epsilon(1e-5));

  const double c[] = {5, 5, 5};
  CHECK_THROWS_AS(spearman(a1, c), DataError);
  const double short_list[] = {1.0};
  CHECK_THROWS_AS(spearman(short_list, short_list), DataError);
  const double mismatched[] = {1, 2};
  CHECK_THROWS_AS(spearman(a1, mismatched), DataError);
}

TEST_CASE("spearman is invariant under strictly monotone transforms") {
  Rng rng(401);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 3 + rng.below(6);
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = double(rng.below(5));  // ties likely
      b[i] = 2.0 * rng.uniform() - 1.0;
    }
    bool const_a = std::all_of(a.begin(), a.end(), [&](double v) { return v == a[0]; });
    if (const_a) a[0] += 1.0;

    const double base = spearman(a, b);
    std::vector<double> ta(n), tb(n);
    for (std::size_t i = 0; i < n; ++i) {
      ta[i] = std::exp(a[i]);          // strictly increasing
      tb[i] = 2.0 * b[i] * b[i] * b[i] + b[i];  // strictly increasing
    }
    CHECK(spearman(ta, tb) == doctest::Approx(base).epsilon(1e-12));
    CHECK(base >= -1.0 - 1e-12);
    CHECK(base <= 1.0 + 1e-12);
  }
}

TEST_CASE("binary-relevance ndcg equals the exponential-gain variant") {
  Rng rng(409);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t docs = 1 + rng.below(6);
    std::map<std::string, int> qrels;
    RankedList ranking;
    for (std::size_t d = 0; d < docs; ++d) {
      const std::string id = "d" + std::to_string(d);
      qrels[id] = int(rng.below(2));
      ranking.push_back({id, rng.uniform()});
    }
    std::sort(ranking.begin(), ranking.end(),
              [](const ScoredDoc& a, const ScoredDoc& b) { return a.score > b.score; });
    const std::size_t k = 1 + rng.below(6);
    const double linear = ndcg_at_k(ranking, qrels, k);
    const double exponential = ndcg_exponential(ranking, qrels, k);
    CHECK(linear == doctest::Approx(exponential).epsilon(1e-12));
  }
}

TEST_CASE("metrics are invariant to permutations of irrelevant docs below k") {
  const auto qrels = qrels_of({{"r1", 1}, {"r2", 1}});
  const auto base = ranking_of({"r1", "x", "y", "r2", "z"});
  auto swapped = base;
  std::swap(swapped[1].id, swapped[2].id);  // permute irrelevant docs
  CHECK(ndcg_at_k(base, qrels, 5) == doctest::Approx(ndcg_at_k(swapped, qrels, 5)));
  CHECK(recall_at_k(base, qrels, 5) == doctest::Approx(recall_at_k(swapped, qrels, 5)));
}

TEST_CASE("ndcg and recall match brute-force formula evaluation on small instances") {
  Rng rng(419);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t docs = 1 + rng.below(6);
    std::map<std::string, int> qrels;
    RankedList ranking;
    for (std::size_t d = 0; d < docs; ++d) {
      const std::string id = "d" + std::to_string(d);
      qrels[id] = int(rng.below(4));  // graded relevance
      ranking.push_back({id, rng.uniform()});
    }
    std::sort(ranking.begin(), ranking.end(),
              [](const ScoredDoc& a, const ScoredDoc& b) { return a.score > b.score; });
    const std::size_t k = 1 + rng.below(6);

    // direct evaluation of the defining formulas
    double dcg = 0.0;
    for (std::size_t r = 0; r < std::min(k, ranking.size()); ++r) {
      dcg += double(qrels[ranking[r].id]) / std::log2(double(r) + 2.0);
    }
    std::vector<int> rels;
    std::size_t relevant = 0;
    for (const auto& [id, rel] : qrels) {
      if (rel > 0) {
        rels.push_back(rel);
        ++relevant;
      }
    }
    std::sort(rels.begin(), rels.end(), std::greater<>());
    double idcg = 0.0;
    for (std::size_t r = 0; r < std::min(k, rels.size()); ++r) {
      idcg += double(rels[r]) / std::log2(double(r) + 2.0);
    }
    const double expected_ndcg = idcg == 0.0 ? 0.0 : dcg / idcg;

    std::size_t hits = 0;
    for (std::size_t r = 0; r < std::min(k, ranking.size()); ++r) {
      if (qrels[ranking[r].id] > 0) ++hits;
    }
    const double expected_recall = relevant == 0 ? 0.0 : double(hits) / double(relevant);

    CHECK(ndcg_at_k(ranking, qrels, k) == doctest::Approx(expected_ndcg).epsilon(1e-5));
    CHECK(recall_at_k(ranking, qrels, k) == doctest::Approx(expected_recall).epsilon(1e-5));
  }
}

namespace {

// Ten orthogonal passages; a query e_i ranks d_i first and the rest tie at
// zero, so tie-break order is d0, d1, ... and recall@5 is fully predictable.
EmbeddingStore orthogonal_store() {
  std::vector<EmbeddingRecord> docs;
  for (int d = 0; d < 10; ++d) {
    std::vector<float> v(10, 0.0f);
    v[std::size_t(d)] = 1.0f;
    docs.push_back({"d" + std::to_string(d), Role::passage, Modality::text,
                    DenseVector(std::move(v)), std::nullopt});
  }
  return EmbeddingStore::from_records(std::move(docs));
}

EmbeddingRecord basis_query(const std::string& id, std::size_t axis) {
  std::vector<float> v(10, 0.0f);
  v[axis] = 1.0f;
  return {id, Role::query, Modality::text, DenseVector(std::move(v)), std::nullopt};
}

}  // namespace

TEST_CASE("run_benchmark applies the multilingual aggregation rule") {
  const auto store = orthogonal_store();
  // All three queries retrieve [d0, d1, d2, d3, d4] in the top 5.
  std::vector<EmbeddingRecord> queries = {basis_query("qa", 0), basis_query("qb", 0),
                                          basis_query("qc", 0)};

  Qrels qrels;
  qrels.judgments["qa"] = {{"d0", 1}, {"d1", 1}, {"d5", 1}, {"d6", 1}, {"d7", 1}};  // 0.4
  qrels.judgments["qb"] = {{"d0", 1}, {"d1", 1}, {"d2", 1}, {"d5", 1}, {"d6", 1}};  // 0.6
  qrels.judgments["qc"] = {{"d0", 1}, {"d1", 1}, {"d2", 1}, {"d3", 1}, {"d5", 1}};  // 0.8

  std::map<std::string, QuerySplit> splits;
  splits["qa"] = {"multi", "de"};
  splits["qb"] = {"multi", "fr"};
  splits["qc"] = {"solo", "en"};

  BenchmarkConfig config;
  config.metrics = {"recall@5"};
  config.mode = SearchMode::dense;
  config.k = 5;

  const auto report = run_benchmark(store, queries, qrels, config, splits);
  CHECK(report.per_query.at("recall@5").at("qa") == doctest::Approx(0.4));
  CHECK(report.per_query.at("recall@5").at("qb") == doctest::Approx(0.6));
  CHECK(report.per_query.at("recall@5").at("qc") == doctest::Approx(0.8));
  CHECK(report.per_task.at("recall@5").at("multi") == doctest::Approx(0.5));
  CHECK(report.per_task.at("recall@5").at("solo") == doctest::Approx(0.8));
  CHECK(report.aggregate.at("recall@5") == doctest::Approx(0.65));

  // determinism: identical reports on a second run
  const auto again = run_benchmark(store, queries, qrels, config, splits);
  CHECK(report.to_json().dump() == again.to_json().dump());
}

TEST_CASE("run_benchmark skips queries without positive judgments") {
  const auto store = orthogonal_store();
  std::vector<EmbeddingRecord> queries = {basis_query("qa", 0), basis_query("qz", 1)};
  Qrels qrels;
  qrels.judgments["qa"] = {{"d0", 1}};
  qrels.judgments["qz"] = {{"d1", 0}};          // judged but no positives
  qrels.judgments["qa"]["ghost-doc"] = 1;       // judged doc missing from the store

  BenchmarkConfig config;
  config.metrics = {"ndcg@5"};
  config.mode = SearchMode::dense;
  config.k = 5;

  const auto report = run_benchmark(store, queries, qrels, config);
  CHECK(report.evaluated_queries == 1);
  REQUIRE(report.skipped_queries.size() == 1);
  CHECK(report.skipped_queries[0] == "qz");
  CHECK(report.missing_doc_ids == 1);

  Qrels empty;
  empty.judgments["qa"] = {{"d0", 0}};
  CHECK_THROWS_AS(run_benchmark(store, queries, empty, config), DataError);
}

TEST_CASE("single task single language mean is the plain per-query mean") {
  const auto store = orthogonal_store();
  std::vector<EmbeddingRecord> queries = {basis_query("q1", 0), basis_query("q2", 0)};
  Qrels qrels;
  qrels.judgments["q1"] = {{"d0", 1}};                                              // 1.0
  qrels.judgments["q2"] = {{"d0", 1}, {"d1", 1}, {"d5", 1}, {"d6", 1}, {"d7", 1}};  // 0.4

  BenchmarkConfig config;
  config.metrics = {"recall@5"};
  config.mode = SearchMode::dense;
  config.k = 5;
  const auto report = run_benchmark(store, queries, qrels, config);
  CHECK(report.aggregate.at("recall@5") == doctest::Approx(0.7));
}
