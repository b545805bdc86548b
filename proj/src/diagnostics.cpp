#include "latesim/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>

#include "latesim/common.hpp"

namespace latesim {
namespace {

std::vector<double> pair_cosines(const PairSet& pairs) {
  if (pairs.empty()) throw DataError("empty pair set");
  std::vector<double> values;
  values.reserve(pairs.size());
  for (const auto& p : pairs) values.push_back(cosine(p.a, p.b));
  return values;
}

}  // namespace

DistributionSummary cosine_distribution(const PairSet& pairs, std::size_t bins) {
  if (bins == 0) throw DataError("bins must be >= 1");
  const auto values = pair_cosines(pairs);

  DistributionSummary summary;
  summary.samples = values.size();
  summary.bin_edges.resize(bins + 1);
  for (std::size_t b = 0; b <= bins; ++b) {
    summary.bin_edges[b] = -1.0 + 2.0 * double(b) / double(bins);
  }
  summary.counts.assign(bins, 0);
  double sum = 0.0, sum_sq = 0.0;
  for (double v : values) {
    sum += v;
    sum_sq += v * v;
    // cosine() clamps to [-1, 1]; the top edge lands in the last bin.
    auto b = std::size_t((v + 1.0) / 2.0 * double(bins));
    if (b >= bins) b = bins - 1;
    ++summary.counts[b];
  }
  summary.mean = sum / double(values.size());
  const double var = std::max(0.0, sum_sq / double(values.size()) - summary.mean * summary.mean);
  summary.stddev = std::sqrt(var);
  return summary;
}

double alignment_score(const PairSet& pairs) {
  const auto values = pair_cosines(pairs);
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / double(values.size());
}

double overlap_coefficient(const DistributionSummary& a, const DistributionSummary& b) {
  if (a.counts.size() != b.counts.size()) {
    throw DataError("histograms must share binning to compute overlap");
  }
  if (a.samples == 0 || b.samples == 0) throw DataError("empty histogram");
  double overlap = 0.0;
  for (std::size_t i = 0; i < a.counts.size(); ++i) {
    overlap += std::min(double(a.counts[i]) / double(a.samples),
                        double(b.counts[i]) / double(b.samples));
  }
  return overlap;
}

ModalityGapResult modality_gap(const PairSet& cross_modal, const PairSet& same_modal,
                               std::size_t bins) {
  ModalityGapResult result;
  result.cross_modal = cosine_distribution(cross_modal, bins);
  result.same_modal = cosine_distribution(same_modal, bins);
  result.gap = result.same_modal.mean - result.cross_modal.mean;
  return result;
}

ConeEffectResult cone_effect(const PairSet& positives, const PairSet& negatives,
                             std::size_t bins) {
  ConeEffectResult result;
  result.positives = cosine_distribution(positives, bins);
  result.negatives = cosine_distribution(negatives, bins);
  result.separation = result.positives.mean - result.negatives.mean;
  result.overlap = overlap_coefficient(result.positives, result.negatives);
  return result;
}

void write_histogram_csv(std::ostream& out, const DistributionSummary& a,
                         const DistributionSummary& b) {
  if (a.counts.size() != b.counts.size()) {
    throw DataError("histograms must share binning to emit CSV");
  }
  out << "bin_lo,bin_hi,count_a,count_b\n";
  const auto old_precision = out.precision();
  out << std::setprecision(6) << std::fixed;
  for (std::size_t i = 0; i < a.counts.size(); ++i) {
    out << a.bin_edges[i] << ',' << a.bin_edges[i + 1] << ',' << a.counts[i] << ','
        << b.counts[i] << '\n';
  }
  out.unsetf(std::ios_base::fixed);
  out.precision(old_precision);
}

nlohmann::ordered_json DistributionSummary::to_json() const {
  nlohmann::ordered_json j;
  j["mean"] = mean;
  j["stddev"] = stddev;
  j["samples"] = samples;
  j["bin_edges"] = bin_edges;
  j["counts"] = counts;
  return j;
}

nlohmann::ordered_json ModalityGapResult::to_json() const {
  nlohmann::ordered_json j;
  j["gap"] = gap;
  j["cross_modal"] = cross_modal.to_json();
  j["same_modal"] = same_modal.to_json();
  return j;
}

nlohmann::ordered_json ConeEffectResult::to_json() const {
  nlohmann::ordered_json j;
  j["separation"] = separation;
  j["overlap"] = overlap;
  j["positives"] = positives.to_json();
  j["negatives"] = negatives.to_json();
  return j;
}

}  // namespace latesim
