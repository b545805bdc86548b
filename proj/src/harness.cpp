#include "latesim/harness.hpp"

#include <fstream>
#include <sstream>

#include "latesim/common.hpp"

namespace latesim {
namespace {

struct MetricSpec {
  std::string name;
  bool is_ndcg = true;
  std::size_t k = 10;
};

MetricSpec parse_metric(const std::string& name) {
  const auto at = name.find('@');
  if (at == std::string::npos) throw DataError("bad metric '" + name + "' (expected name@k)");
  const std::string head = name.substr(0, at);
  MetricSpec spec;
  spec.name = name;
  if (head == "ndcg") {
    spec.is_ndcg = true;
  } else if (head == "recall") {
    spec.is_ndcg = false;
  } else {
    throw DataError("unknown metric '" + head + "' (expected ndcg or recall)");
  }
  try {
    spec.k = std::stoul(name.substr(at + 1));
  } catch (const std::exception&) {
    throw DataError("bad metric cutoff in '" + name + "'");
  }
  if (spec.k == 0) throw DataError("metric cutoff must be >= 1");
  return spec;
}

double mean_of(const std::map<std::string, double>& values) {
  double sum = 0.0;
  for (const auto& [key, v] : values) sum += v;
  return sum / double(values.size());
}

}  // namespace

std::map<std::string, QuerySplit> load_splits_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open splits: " + path.string());
  std::map<std::string, QuerySplit> splits;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string qid, task, language;
    if (!std::getline(ss, qid, '\t') || !std::getline(ss, task, '\t') ||
        !std::getline(ss, language, '\t')) {
      throw DataError(path.string() + ":" + std::to_string(line_no) +
                      ": expected query_id<TAB>task<TAB>language");
    }
    splits[qid] = QuerySplit{task, language};
  }
  return splits;
}

MetricReport run_benchmark(const EmbeddingStore& docs, std::span<const EmbeddingRecord> queries,
                           const Qrels& qrels, const BenchmarkConfig& config,
                           const std::map<std::string, QuerySplit>& splits,
                           std::ostream* trec_out) {
  if (queries.empty()) throw DataError("no queries");
  std::vector<MetricSpec> specs;
  specs.reserve(config.metrics.size());
  std::size_t max_cutoff = config.k;
  for (const auto& name : config.metrics) {
    specs.push_back(parse_metric(name));
    max_cutoff = std::max(max_cutoff, specs.back().k);
  }
  if (specs.empty()) throw DataError("no metrics requested");

  MetricReport report;

  // Count judged docs missing from the store once per query set.
  for (const auto& [qid, judged] : qrels.judgments) {
    for (const auto& [did, rel] : judged) {
      if (!docs.find(did)) ++report.missing_doc_ids;
    }
  }

  std::vector<SearchRequest> requests;
  std::vector<const EmbeddingRecord*> evaluated;
  for (const auto& q : queries) {
    if (!qrels.has_positive(q.id)) {
      report.skipped_queries.push_back(q.id);
      continue;
    }
    SearchRequest req;
    req.query = q;
    req.mode = config.mode;
    req.k = max_cutoff;
    req.candidate_pool = config.candidate_pool;
    req.truncate_to = config.truncate_to;
    requests.push_back(std::move(req));
    evaluated.push_back(&q);
  }
  if (requests.empty()) throw DataError("zero evaluable queries (no positive judgments)");

  const auto rankings = batch_search(docs, requests);
  report.evaluated_queries = rankings.size();

  // metric -> task -> language -> per-query values
  std::map<std::string, std::map<std::string, std::map<std::string, std::map<std::string, double>>>>
      cells;
  for (std::size_t i = 0; i < rankings.size(); ++i) {
    const auto& q = *evaluated[i];
    if (trec_out) write_trec_run(*trec_out, q.id, rankings[i], config.run_name);
    const auto* judged = qrels.for_query(q.id);
    QuerySplit split;
    if (const auto it = splits.find(q.id); it != splits.end()) split = it->second;
    for (const auto& spec : specs) {
      const double value = spec.is_ndcg ? ndcg_at_k(rankings[i], *judged, spec.k)
                                        : recall_at_k(rankings[i], *judged, spec.k);
      report.per_query[spec.name][q.id] = value;
      cells[spec.name][split.task][split.language][q.id] = value;
    }
  }

  // Per-language means first; a multilingual task's score is the mean of its
  // language means; the aggregate is the cross-task mean.
  for (const auto& [metric, tasks] : cells) {
    for (const auto& [task, languages] : tasks) {
      double task_sum = 0.0;
      for (const auto& [language, values] : languages) {
        const double language_mean = mean_of(values);
        report.per_language[metric][task][language] = language_mean;
        task_sum += language_mean;
      }
      report.per_task[metric][task] = task_sum / double(languages.size());
    }
    report.aggregate[metric] = mean_of(report.per_task[metric]);
  }
  return report;
}

nlohmann::ordered_json MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["aggregate"] = aggregate;
  j["per_task"] = per_task;
  j["per_language"] = per_language;
  j["per_query"] = per_query;
  j["evaluated_queries"] = evaluated_queries;
  j["skipped_queries"] = skipped_queries;
  j["missing_doc_ids"] = missing_doc_ids;
  return j;
}

}  // namespace latesim
