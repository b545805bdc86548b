#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "latesim/common.hpp"
#include "latesim/matrix.hpp"

namespace latesim {

// Bimodal class-structured toy data. Classes come in sibling pairs sharing a
// pair center, so each class has a designated near-miss class whose items
// serve as mined hard negatives. Image items get a fixed feature-space offset
// plus their own noise, giving the generator a controllable modality gap.
struct SyntheticConfig {
  std::size_t n_classes = 16;  // even; class c's sibling is c ^ 1
  std::size_t items_per_class = 8;       // per modality, train split
  std::size_t eval_items_per_class = 4;  // per modality, held-out split
  std::size_t feat_dim = 12;
  std::size_t min_tokens = 2;
  std::size_t max_tokens = 8;
  double sibling_delta = 0.55;    // class offset from the shared pair center
  double modality_offset = 0.9;   // image offset magnitude; 0 = no modality signal
  double token_noise = 0.35;      // per-token gaussian noise scale

  static SyntheticConfig from_json(const nlohmann::json& j);
  nlohmann::ordered_json to_json() const;
};

struct SyntheticItem {
  std::string id;
  int latent_class = 0;
  Modality modality = Modality::text;
  Matrix tokens;  // t x feat_dim raw features
};

struct SyntheticDataset {
  SyntheticConfig config;
  std::uint64_t seed = 0;
  std::vector<SyntheticItem> train_text;
  std::vector<SyntheticItem> train_image;
  std::vector<SyntheticItem> eval_text;
  std::vector<SyntheticItem> eval_image;

  int sibling_of(int latent_class) const { return latent_class ^ 1; }
  // Train items of a class within one modality, by index into the split.
  std::vector<std::size_t> class_members(const std::vector<SyntheticItem>& split,
                                         int latent_class) const;
};

// Deterministic in (seed, config): equal inputs give bit-identical datasets.
SyntheticDataset generate_synthetic(std::uint64_t seed, const SyntheticConfig& config);

// Mean cosine between mean-pooled raw feature vectors of item pairs sampled
// by the caller-provided index pairs.
double mean_feature_cosine(const std::vector<SyntheticItem>& items_a,
                           const std::vector<SyntheticItem>& items_b,
                           const std::vector<std::pair<std::size_t, std::size_t>>& pairs);

}  // namespace latesim
