#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "latesim/losses.hpp"
#include "latesim/matrix.hpp"
#include "latesim/record.hpp"
#include "latesim/rng.hpp"
#include "latesim/synthetic.hpp"

namespace latesim {

struct ToyEncoderConfig {
  std::size_t feat_dim = 12;
  std::size_t hidden_dim = 16;  // dense embedding dimension
  std::size_t multi_dim = 8;    // per-token embedding dimension

  static ToyEncoderConfig from_json(const nlohmann::json& j);
  nlohmann::ordered_json to_json() const;
};

// Task adapter: the multi-vector projection, an elementwise scale on the
// pooled dense path, and the learned role-offset vectors that stand in for
// the query/passage prefixes.
struct AdapterHead {
  Matrix multi_head;                        // hidden x multi_dim
  std::vector<double> dense_scale;          // hidden
  std::vector<double> role_offset_query;    // feat
  std::vector<double> role_offset_passage;  // feat

  static AdapterHead init(const ToyEncoderConfig& config, Rng& rng);
  bool operator==(const AdapterHead&) const = default;
};

// Cached activations of one item, kept for the backward pass.
struct EncoderForward {
  Matrix input;                // t x feat (tokens + role offset)
  Matrix hidden;               // t x hidden
  std::vector<double> pooled;  // hidden (row mean of hidden)
  ItemEmbedding embedding;     // raw dense = scale .* pooled; raw multi = hidden * multi_head
};

EncoderForward encoder_forward(const Matrix& tokens, const Matrix& backbone,
                               const AdapterHead& head, Role role);

// Gradient accumulator for one tower (backbone + head). The backbone block
// is only filled when train_backbone is set; the two-phase pipeline keeps
// the backbone frozen and only the gap experiment trains it.
struct TowerGrad {
  Matrix backbone;
  Matrix multi_head;
  std::vector<double> dense_scale;
  std::vector<double> role_offset_query;
  std::vector<double> role_offset_passage;

  static TowerGrad zeros(const ToyEncoderConfig& config);
  void scale(double factor);
};

void encoder_backward(const Matrix& tokens, const Matrix& backbone, const AdapterHead& head,
                      Role role, const EncoderForward& fwd, const ItemGrad& grad, TowerGrad& acc,
                      bool train_backbone);

// SGD step: parameters -= lr * grad.
void apply_update(Matrix& backbone, AdapterHead& head, const TowerGrad& grad, double lr,
                  bool update_backbone);

// Shared frozen backbone plus the phase-1 adapter ("pair") and, after
// duplication, the three task adapters.
struct ToyEncoder {
  ToyEncoderConfig config;
  Matrix backbone;
  AdapterHead pair_head;
  std::map<std::string, AdapterHead> adapters;

  static ToyEncoder init(const ToyEncoderConfig& config, std::uint64_t seed);

  // Copies the pair-trained head into the retrieval, text-matching, and code
  // adapters. No-op if already duplicated.
  void duplicate_adapters();

  const AdapterHead& head(const std::string& task) const;
  AdapterHead& mutable_head(const std::string& task);
  std::vector<std::string> valid_tasks() const;

  ItemEmbedding embed_raw(const SyntheticItem& item, const std::string& task, Role role) const;
  EmbeddingRecord encode(const SyntheticItem& item, const std::string& task, Role role) const;
};

std::uint64_t checksum(const Matrix& m);
std::uint64_t checksum(const AdapterHead& head);

}  // namespace latesim
