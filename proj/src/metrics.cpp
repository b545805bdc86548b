#include "latesim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <vector>

#include "latesim/common.hpp"

namespace latesim {
namespace {

std::vector<std::string> split_tsv(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, '\t')) fields.push_back(field);
  return fields;
}

// Average ranks (1-based); tied values share the mean of their rank block.
std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double shared = 0.5 * double(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = shared;
    i = j + 1;
  }
  return ranks;
}

// T = sum over tie groups of (t^3 - t) / 2.
double tie_term(std::span<const double> values) {
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  double t_sum = 0.0;
  std::size_t i = 0;
  while (i < sorted.size()) {
    std::size_t j = i;
    while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
    const double t = double(j - i + 1);
    t_sum += (t * t * t - t) / 2.0;
    i = j + 1;
  }
  return t_sum;
}

}  // namespace

Qrels Qrels::load_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open qrels: " + path.string());
  Qrels qrels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_tsv(line);
    if (fields.size() != 3) {
      throw DataError(path.string() + ":" + std::to_string(line_no) +
                      ": expected 3 tab-separated fields");
    }
    int rel = 0;
    try {
      rel = std::stoi(fields[2]);
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": bad relevance '" +
                      fields[2] + "'");
    }
    if (rel < 0) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": negative relevance");
    }
    qrels.judgments[fields[0]][fields[1]] = rel;
  }
  if (qrels.judgments.empty()) throw DataError("no judgments in " + path.string());
  return qrels;
}

const std::map<std::string, int>* Qrels::for_query(const std::string& query_id) const {
  const auto it = judgments.find(query_id);
  return it == judgments.end() ? nullptr : &it->second;
}

bool Qrels::has_positive(const std::string& query_id) const {
  const auto* judged = for_query(query_id);
  if (!judged) return false;
  for (const auto& [doc, rel] : *judged) {
    if (rel > 0) return true;
  }
  return false;
}

double ndcg_at_k(const RankedList& ranking, const std::map<std::string, int>& qrels,
                 std::size_t k) {
  if (k == 0) throw DataError("k must be >= 1");
  double dcg = 0.0;
  const std::size_t depth = std::min(k, ranking.size());
  for (std::size_t r = 0; r < depth; ++r) {
    const auto it = qrels.find(ranking[r].id);
    if (it != qrels.end() && it->second > 0) {
      dcg += double(it->second) / std::log2(double(r) + 2.0);
    }
  }
  std::vector<int> rels;
  rels.reserve(qrels.size());
  for (const auto& [doc, rel] : qrels) {
    if (rel > 0) rels.push_back(rel);
  }
  if (rels.empty()) return 0.0;
  std::sort(rels.begin(), rels.end(), std::greater<>());
  double idcg = 0.0;
  for (std::size_t r = 0; r < std::min(k, rels.size()); ++r) {
    idcg += double(rels[r]) / std::log2(double(r) + 2.0);
  }
  return dcg / idcg;
}

double recall_at_k(const RankedList& ranking, const std::map<std::string, int>& qrels,
                   std::size_t k) {
  if (k == 0) throw DataError("k must be >= 1");
  std::size_t relevant = 0;
  for (const auto& [doc, rel] : qrels) {
    if (rel > 0) ++relevant;
  }
  if (relevant == 0) return 0.0;
  std::size_t hit = 0;
  for (std::size_t r = 0; r < std::min(k, ranking.size()); ++r) {
    const auto it = qrels.find(ranking[r].id);
    if (it != qrels.end() && it->second > 0) ++hit;
  }
  return double(hit) / double(relevant);
}

double spearman(std::span<const double> model_scores, std::span<const double> ground_truth) {
  if (model_scores.size() != ground_truth.size()) {
    throw DataError("length mismatch: " + std::to_string(model_scores.size()) + " vs " +
                    std::to_string(ground_truth.size()));
  }
  const std::size_t n = model_scores.size();
  if (n < 2) throw DataError("spearman needs at least 2 observations");
  auto constant = [](std::span<const double> v) {
    for (double x : v) {
      if (x != v[0]) return false;
    }
    return true;
  };
  if (constant(model_scores) || constant(ground_truth)) {
    throw DataError("spearman undefined for constant input");
  }
  for (double x : model_scores) {
    if (!std::isfinite(x)) throw NumericError("non-finite model score");
  }
  for (double x : ground_truth) {
    if (!std::isfinite(x)) throw NumericError("non-finite ground truth");
  }

  const auto ra = average_ranks(model_scores);
  const auto rb = average_ranks(ground_truth);
  double d2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = ra[i] - rb[i];
    d2 += d * d;
  }
  const double cube = double(n) * (double(n) * double(n) - 1.0);
  const double denom = cube - tie_term(model_scores) - tie_term(ground_truth);
  return 1.0 - 6.0 * d2 / denom;
}

}  // namespace latesim
