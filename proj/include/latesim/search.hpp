#pragma once

#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "latesim/record.hpp"
#include "latesim/store.hpp"

namespace latesim {

enum class SearchMode { dense, late, two_stage };

SearchMode search_mode_from_string(const std::string& s);
std::string to_string(SearchMode m);

struct SearchRequest {
  EmbeddingRecord query;
  SearchMode mode = SearchMode::dense;
  std::size_t k = 10;
  // Two-stage only: dense recall depth before the late rerank. 0 = 10 * k.
  std::size_t candidate_pool = 0;
  // Dense Matryoshka search: truncate query and stored vectors to this length.
  std::optional<std::size_t> truncate_to;
};

struct ScoredDoc {
  std::string id;
  double score = 0.0;
  bool operator==(const ScoredDoc&) const = default;
};

// Descending score, ties broken by ascending doc id.
using RankedList = std::vector<ScoredDoc>;

// Exhaustive scoring over the store. Dense mode ranks by cosine, late mode by
// the unnormalized late-interaction score (the query is invariant across
// documents, so normalization cannot change the ranking), two_stage takes the
// top candidate_pool documents by dense score and reranks them by late
// interaction. k larger than the store returns the full ranking.
RankedList search(const EmbeddingStore& store, const SearchRequest& request);

// Elementwise equal to repeated search; parallel over queries.
std::vector<RankedList> batch_search(const EmbeddingStore& store,
                                     std::span<const SearchRequest> requests);

// TREC run lines: `query_id Q0 doc_id rank score run_name`, rank from 1,
// score with 6 decimals.
void write_trec_run(std::ostream& out, const std::string& query_id, const RankedList& ranking,
                    const std::string& run_name);

}  // namespace latesim
