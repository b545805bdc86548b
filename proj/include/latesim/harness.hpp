#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "latesim/metrics.hpp"
#include "latesim/search.hpp"
#include "latesim/store.hpp"

namespace latesim {

// Assigns a query to a (task, language) cell for aggregation.
struct QuerySplit {
  std::string task = "default";
  std::string language = "und";
};

// TSV lines: query_id <TAB> task <TAB> language.
std::map<std::string, QuerySplit> load_splits_tsv(const std::filesystem::path& path);

struct BenchmarkConfig {
  std::vector<std::string> metrics = {"ndcg@10"};  // "ndcg@K" | "recall@K" per entry
  SearchMode mode = SearchMode::dense;
  std::size_t k = 10;                   // retrieval depth (>= metric cutoffs)
  std::size_t candidate_pool = 0;       // two-stage only; 0 = 10 * k
  std::optional<std::size_t> truncate_to;
  std::string run_name = "latesim";
};

struct MetricReport {
  // metric -> query id -> value
  std::map<std::string, std::map<std::string, double>> per_query;
  // metric -> task -> language -> mean
  std::map<std::string, std::map<std::string, std::map<std::string, double>>> per_language;
  // metric -> task -> score (multilingual tasks collapse to their language mean)
  std::map<std::string, std::map<std::string, double>> per_task;
  // metric -> cross-task mean
  std::map<std::string, double> aggregate;

  std::vector<std::string> skipped_queries;  // no positive judgments
  std::size_t evaluated_queries = 0;
  std::size_t missing_doc_ids = 0;  // judged docs absent from the store

  nlohmann::ordered_json to_json() const;
};

// Runs every query against the store, scores the rankings against qrels, and
// aggregates: per-language means first, multilingual tasks collapsed to one
// score, then the cross-task mean. Queries without positive judgments are
// skipped and reported. Optionally writes the TREC run.
MetricReport run_benchmark(const EmbeddingStore& docs,
                           std::span<const EmbeddingRecord> queries, const Qrels& qrels,
                           const BenchmarkConfig& config,
                           const std::map<std::string, QuerySplit>& splits = {},
                           std::ostream* trec_out = nullptr);

}  // namespace latesim
