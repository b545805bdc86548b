#include "latesim/search.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <numeric>

#include "latesim/common.hpp"
#include "latesim/kernels.hpp"

namespace latesim {
namespace {

double prefix_norm(std::span<const float> v, std::size_t k) {
  double sum = 0.0;
  for (std::size_t x = 0; x < k; ++x) sum += double(v[x]) * double(v[x]);
  return std::sqrt(sum);
}

void validate_request(const EmbeddingStore& store, const SearchRequest& req) {
  if (req.k == 0) throw DataError("k must be >= 1");
  if (req.query.dense.dim() != store.dense_dim()) {
    throw DataError("dimension mismatch: query dense dim " +
                    std::to_string(req.query.dense.dim()) + " vs store dense dim " +
                    std::to_string(store.dense_dim()));
  }
  if (req.truncate_to) {
    if (*req.truncate_to == 0 || *req.truncate_to > store.dense_dim()) {
      throw DataError("truncation length " + std::to_string(*req.truncate_to) + " outside [1, " +
                      std::to_string(store.dense_dim()) + "]");
    }
    if (req.mode != SearchMode::dense) {
      throw DataError("truncate_to applies to dense mode only");
    }
  }
  const bool needs_late = req.mode != SearchMode::dense;
  if (needs_late) {
    if (!req.query.multi) throw DataError("query has no multi-vector for late scoring");
    if (store.multi_dim() == 0) throw DataError("store has no multi-vectors for late scoring");
    if (req.query.multi->dim() != store.multi_dim()) {
      throw DataError("dimension mismatch: query multi dim " +
                      std::to_string(req.query.multi->dim()) + " vs store multi dim " +
                      std::to_string(store.multi_dim()));
    }
    for (const auto& r : store.records()) {
      if (!r.multi) throw DataError("record " + r.id + " has no multi-vector for late scoring");
    }
  }
  if (req.mode == SearchMode::two_stage && req.candidate_pool != 0 &&
      req.candidate_pool < req.k) {
    throw DataError("candidate_pool must be >= k");
  }
}

bool ranks_before(const EmbeddingStore& store, std::size_t a, double score_a, std::size_t b,
                  double score_b) {
  if (score_a != score_b) return score_a > score_b;
  return store.record(a).id < store.record(b).id;
}

// Deterministic top-k over precomputed scores: full index sort under
// (score desc, id asc) would be O(n log n); a partial selection suffices.
std::vector<std::size_t> select_top(const EmbeddingStore& store, const std::vector<double>& scores,
                                    const std::vector<std::size_t>& candidates, std::size_t k) {
  std::vector<std::size_t> order = candidates;
  const std::size_t take = std::min(k, order.size());
  auto cmp = [&](std::size_t a, std::size_t b) {
    return ranks_before(store, a, scores[a], b, scores[b]);
  };
  std::partial_sort(order.begin(), order.begin() + std::ptrdiff_t(take), order.end(), cmp);
  order.resize(take);
  return order;
}

// Cosine of the k-prefixes; the prefix norms carry out the renormalization,
// so no truncated vectors are materialized. Norms are precomputed serially,
// which keeps the parallel loop throw-free.
void score_dense(const EmbeddingStore& store, const SearchRequest& req,
                 std::vector<double>& scores) {
  const auto q = req.query.dense.values();
  const std::size_t k = req.truncate_to.value_or(store.dense_dim());

  const double qn = prefix_norm(q, k);
  if (qn == 0.0) throw DataError("degenerate truncation (query " + req.query.id + ")");
  std::vector<double> inv_norm(store.size());
  for (std::size_t j = 0; j < store.size(); ++j) {
    const double dn = prefix_norm(store.record(j).dense.values(), k);
    if (dn == 0.0) throw DataError("degenerate truncation (record " + store.record(j).id + ")");
    inv_norm[j] = 1.0 / (qn * dn);
  }

  const std::int64_t n = std::int64_t(store.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t j = 0; j < n; ++j) {
    const auto doc = store.record(std::size_t(j)).dense.values();
    double ab = 0.0;
#pragma omp simd reduction(+ : ab)
    for (std::size_t x = 0; x < k; ++x) ab += double(q[x]) * double(doc[x]);
    scores[std::size_t(j)] = std::clamp(ab * inv_norm[std::size_t(j)], -1.0, 1.0);
  }
}

void score_late(const EmbeddingStore& store, const SearchRequest& req,
                const std::vector<std::size_t>& candidates, std::vector<double>& scores) {
  const auto& q = *req.query.multi;
  const std::int64_t n = std::int64_t(candidates.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t c = 0; c < n; ++c) {
    const std::size_t j = candidates[std::size_t(c)];
    const auto& doc = *store.record(j).multi;
    scores[j] = maxsim(q.data(), q.tokens(), doc.data(), doc.tokens(), q.dim());
  }
}

}  // namespace

SearchMode search_mode_from_string(const std::string& s) {
  if (s == "dense") return SearchMode::dense;
  if (s == "late") return SearchMode::late;
  if (s == "two-stage" || s == "two_stage") return SearchMode::two_stage;
  throw DataError("unknown mode '" + s + "' (expected dense, late, or two-stage)");
}

std::string to_string(SearchMode m) {
  switch (m) {
    case SearchMode::dense: return "dense";
    case SearchMode::late: return "late";
    default: return "two-stage";
  }
}

RankedList search(const EmbeddingStore& store, const SearchRequest& req) {
  validate_request(store, req);

  std::vector<std::size_t> all(store.size());
  std::iota(all.begin(), all.end(), 0);
  std::vector<double> scores(store.size(), 0.0);

  std::vector<std::size_t> winners;
  if (req.mode == SearchMode::dense) {
    score_dense(store, req, scores);
    winners = select_top(store, scores, all, req.k);
  } else if (req.mode == SearchMode::late) {
    score_late(store, req, all, scores);
    winners = select_top(store, scores, all, req.k);
  } else {
    const std::size_t pool = req.candidate_pool == 0
                                 ? std::min(store.size(), req.k * 10)
                                 : std::min(store.size(), req.candidate_pool);
    SearchRequest dense_req = req;
    dense_req.mode = SearchMode::dense;
    dense_req.truncate_to.reset();
    score_dense(store, dense_req, scores);
    const std::vector<std::size_t> candidates = select_top(store, scores, all, pool);
    score_late(store, req, candidates, scores);
    winners = select_top(store, scores, candidates, req.k);
  }

  RankedList out;
  out.reserve(winners.size());
  for (std::size_t j : winners) out.push_back({store.record(j).id, scores[j]});
  return out;
}

std::vector<RankedList> batch_search(const EmbeddingStore& store,
                                     std::span<const SearchRequest> requests) {
  std::vector<RankedList> results(requests.size());
  for (const auto& r : requests) validate_request(store, r);
  const std::int64_t n = std::int64_t(requests.size());
  std::exception_ptr pending = nullptr;
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < n; ++i) {
    try {
      results[std::size_t(i)] = search(store, requests[std::size_t(i)]);
    } catch (...) {
#pragma omp critical
      if (!pending) pending = std::current_exception();
    }
  }
  if (pending) std::rethrow_exception(pending);
  return results;
}

void write_trec_run(std::ostream& out, const std::string& query_id, const RankedList& ranking,
                    const std::string& run_name) {
  for (std::size_t r = 0; r < ranking.size(); ++r) {
    out << query_id << " Q0 " << ranking[r].id << ' ' << (r + 1) << ' ' << std::fixed
        << std::setprecision(6) << ranking[r].score << ' ' << run_name << '\n';
  }
  out.unsetf(std::ios_base::fixed);
}

}  // namespace latesim
