#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>

#include "latesim/search.hpp"

namespace latesim {

// Graded relevance judgments per query. std::map keeps iteration order
// deterministic.
struct Qrels {
  std::map<std::string, std::map<std::string, int>> judgments;

  // TSV lines: query_id <TAB> doc_id <TAB> relevance (integer >= 0).
  static Qrels load_tsv(const std::filesystem::path& path);

  const std::map<std::string, int>* for_query(const std::string& query_id) const;
  bool has_positive(const std::string& query_id) const;
};

// nDCG@k with linear gain rel_i and discount log2(rank + 1). For binary
// relevance this coincides with the exponential-gain variant. Returns 0 when
// the query has no positive judgments.
double ndcg_at_k(const RankedList& ranking, const std::map<std::string, int>& qrels,
                 std::size_t k);

// |relevant in top-k| / |relevant|. Returns 0 when there are no relevant docs.
double recall_at_k(const RankedList& ranking, const std::map<std::string, int>& qrels,
                   std::size_t k);

// Rank correlation with average ranks for ties and the tie-corrected form
//   1 - 6 * sum d_i^2 / (n(n^2-1) - Tx - Ty),   T = sum_g (t_g^3 - t_g) / 2,
// which reduces to the classic Spearman formula when either input is tie-free
// and stays within [-1, 1]. Throws on length mismatch, n < 2, or constant
// input.
double spearman(std::span<const double> model_scores, std::span<const double> ground_truth);

}  // namespace latesim
