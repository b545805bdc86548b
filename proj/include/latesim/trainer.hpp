#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "latesim/encoder.hpp"
#include "latesim/losses.hpp"
#include "latesim/synthetic.hpp"

namespace latesim {

struct PhaseConfig {
  std::size_t steps = 300;
  double lr = 0.05;
  std::size_t batch_size = 16;
  std::size_t hard_negatives = 2;  // retrieval/code triplets
  std::size_t scored_pairs = 8;    // text-matching: scored pairs per batch

  static PhaseConfig from_json(const nlohmann::json& j);
  nlohmann::ordered_json to_json() const;
};

struct TrainRunReport {
  std::string phase;  // "phase1" or "phase2"
  std::string task;   // "pair" or the adapter name
  std::uint64_t seed = 0;
  std::size_t steps = 0;
  double lr = 0.0;
  std::size_t batch_size = 0;
  std::vector<double> step_total;  // loss before each step's update
  std::vector<std::map<std::string, double>> step_terms;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double ndcg10_dense = 0.0;  // held-out, after training
  double ndcg10_late = 0.0;
  nlohmann::ordered_json config_snapshot;

  nlohmann::ordered_json to_json() const;
};

// Held-out protocol: eval text items are queries, eval image items are the
// document store, relevance 1 iff same latent class, nDCG@10.
struct HeldOutMetrics {
  double ndcg10_dense = 0.0;
  double ndcg10_late = 0.0;
};
HeldOutMetrics evaluate_held_out(const ToyEncoder& encoder, const std::string& task,
                                 const SyntheticDataset& dataset);

// Pair training of the shared adapter with the joint loss. The backbone is
// frozen from initialization; only the pair head (projection, dense scale,
// role offsets) updates. steps = 0 evaluates the loss once and changes
// nothing.
TrainRunReport train_phase1(const SyntheticDataset& dataset, ToyEncoder& encoder,
                            const LossConfig& loss, const PhaseConfig& phase, std::uint64_t seed);

// Task fine-tuning of one duplicated adapter. retrieval trains on text and
// text-image triplets with the hard-negative loss; code on text triplets
// only; text-matching on mixed scored/unscored pairs. Only the named
// adapter head changes.
TrainRunReport train_phase2(ToyEncoder& encoder, const std::string& task,
                            const SyntheticDataset& dataset, const LossConfig& loss,
                            const PhaseConfig& phase, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Modality-gap experiment: trains (a) a shared-encoder model and (b) a
// two-tower variant (independent backbone per modality) end to end on
// identical batches, then compares modality-gap statistics on held-out
// matched pairs. Unlike the two-phase pipeline, backbones are trainable in
// both variants; the comparison is between architectures.
// ---------------------------------------------------------------------------

struct GapExperimentConfig {
  SyntheticConfig generator;
  ToyEncoderConfig encoder;
  LossConfig loss;
  PhaseConfig training;
  std::size_t bins = 50;

  static GapExperimentConfig from_json(const nlohmann::json& j);
  nlohmann::ordered_json to_json() const;
};

struct GapExperimentReport {
  std::uint64_t seed = 0;
  double gap_shared = 0.0;
  double gap_two_tower = 0.0;
  double cross_modal_mean_shared = 0.0;
  double same_modal_mean_shared = 0.0;
  double cross_modal_mean_two_tower = 0.0;
  double same_modal_mean_two_tower = 0.0;
  nlohmann::ordered_json config_snapshot;

  nlohmann::ordered_json to_json() const;
};

GapExperimentReport modality_gap_experiment(std::uint64_t seed, const GapExperimentConfig& config);

}  // namespace latesim
