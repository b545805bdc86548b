#include "latesim/encoder.hpp"

#include <bit>
#include <cmath>

namespace latesim {
namespace {

const std::vector<double>& offset_for(const AdapterHead& head, Role role) {
  return role == Role::query ? head.role_offset_query : head.role_offset_passage;
}

std::vector<double>& offset_for(AdapterHead& head, Role role) {
  return role == Role::query ? head.role_offset_query : head.role_offset_passage;
}

void fnv_mix(std::uint64_t& hash, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) {
    hash ^= (bits >> (8 * b)) & 0xff;
    hash *= 0x100000001b3ULL;
  }
}

}  // namespace

ToyEncoderConfig ToyEncoderConfig::from_json(const nlohmann::json& j) {
  ToyEncoderConfig cfg;
  for (const auto& [key, value] : j.items()) {
    if (key == "feat_dim") {
      cfg.feat_dim = value.get<std::size_t>();
    } else if (key == "hidden_dim") {
      cfg.hidden_dim = value.get<std::size_t>();
    } else if (key == "multi_dim") {
      cfg.multi_dim = value.get<std::size_t>();
    } else {
      throw DataError("unknown encoder config key '" + key + "'");
    }
  }
  if (cfg.feat_dim == 0 || cfg.hidden_dim == 0 || cfg.multi_dim == 0) {
    throw DataError("encoder dimensions must be positive");
  }
  return cfg;
}

nlohmann::ordered_json ToyEncoderConfig::to_json() const {
  nlohmann::ordered_json j;
  j["feat_dim"] = feat_dim;
  j["hidden_dim"] = hidden_dim;
  j["multi_dim"] = multi_dim;
  return j;
}

AdapterHead AdapterHead::init(const ToyEncoderConfig& config, Rng& rng) {
  AdapterHead head;
  head.multi_head = Matrix(config.hidden_dim, config.multi_dim);
  const double scale = 1.0 / std::sqrt(double(config.hidden_dim));
  for (auto& v : head.multi_head.data()) v = scale * rng.normal();
  head.dense_scale.assign(config.hidden_dim, 1.0);
  head.role_offset_query.assign(config.feat_dim, 0.0);
  head.role_offset_passage.assign(config.feat_dim, 0.0);
  return head;
}

EncoderForward encoder_forward(const Matrix& tokens, const Matrix& backbone,
                               const AdapterHead& head, Role role) {
  const std::size_t t = tokens.rows();
  const std::size_t f = tokens.cols();
  const std::size_t h = backbone.cols();
  const std::size_t d = head.multi_head.cols();
  if (f != backbone.rows()) {
    throw DataError("dimension mismatch: tokens " + std::to_string(f) + " vs backbone " +
                    std::to_string(backbone.rows()));
  }

  EncoderForward fwd;
  const auto& offset = offset_for(head, role);
  fwd.input = Matrix(t, f);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t x = 0; x < f; ++x) fwd.input.at(i, x) = tokens.at(i, x) + offset[x];
  }

  fwd.hidden = Matrix(t, h);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t y = 0; y < h; ++y) {
      double sum = 0.0;
      for (std::size_t x = 0; x < f; ++x) sum += fwd.input.at(i, x) * backbone.at(x, y);
      fwd.hidden.at(i, y) = sum;
    }
  }

  fwd.pooled.assign(h, 0.0);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t y = 0; y < h; ++y) fwd.pooled[y] += fwd.hidden.at(i, y);
  }
  for (auto& v : fwd.pooled) v /= double(t);

  fwd.embedding.dense.resize(h);
  for (std::size_t y = 0; y < h; ++y) fwd.embedding.dense[y] = head.dense_scale[y] * fwd.pooled[y];

  fwd.embedding.multi = Matrix(t, d);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t z = 0; z < d; ++z) {
      double sum = 0.0;
      for (std::size_t y = 0; y < h; ++y) sum += fwd.hidden.at(i, y) * head.multi_head.at(y, z);
      fwd.embedding.multi.at(i, z) = sum;
    }
  }
  return fwd;
}

TowerGrad TowerGrad::zeros(const ToyEncoderConfig& config) {
  TowerGrad g;
  g.backbone = Matrix(config.feat_dim, config.hidden_dim);
  g.multi_head = Matrix(config.hidden_dim, config.multi_dim);
  g.dense_scale.assign(config.hidden_dim, 0.0);
  g.role_offset_query.assign(config.feat_dim, 0.0);
  g.role_offset_passage.assign(config.feat_dim, 0.0);
  return g;
}

void TowerGrad::scale(double factor) {
  for (auto& v : backbone.data()) v *= factor;
  for (auto& v : multi_head.data()) v *= factor;
  for (auto& v : dense_scale) v *= factor;
  for (auto& v : role_offset_query) v *= factor;
  for (auto& v : role_offset_passage) v *= factor;
}

void encoder_backward(const Matrix& tokens, const Matrix& backbone, const AdapterHead& head,
                      Role role, const EncoderForward& fwd, const ItemGrad& grad, TowerGrad& acc,
                      bool train_backbone) {
  const std::size_t t = tokens.rows();
  const std::size_t f = tokens.cols();
  const std::size_t h = backbone.cols();
  const std::size_t d = head.multi_head.cols();

  // dense path: v = scale .* pooled, pooled = mean rows of hidden
  Matrix d_hidden(t, h);
  for (std::size_t y = 0; y < h; ++y) {
    const double gv = grad.dense[y];
    acc.dense_scale[y] += gv * fwd.pooled[y];
    const double d_pooled = gv * head.dense_scale[y] / double(t);
    for (std::size_t i = 0; i < t; ++i) d_hidden.at(i, y) += d_pooled;
  }

  // multi path: Z = hidden * multi_head
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t z = 0; z < d; ++z) {
      const double gz = grad.multi.at(i, z);
      if (gz == 0.0) continue;
      for (std::size_t y = 0; y < h; ++y) {
        acc.multi_head.at(y, z) += fwd.hidden.at(i, y) * gz;
        d_hidden.at(i, y) += gz * head.multi_head.at(y, z);
      }
    }
  }

  // backbone and role offset: hidden = input * backbone
  if (train_backbone) {
    for (std::size_t x = 0; x < f; ++x) {
      for (std::size_t y = 0; y < h; ++y) {
        double sum = 0.0;
        for (std::size_t i = 0; i < t; ++i) sum += fwd.input.at(i, x) * d_hidden.at(i, y);
        acc.backbone.at(x, y) += sum;
      }
    }
  }
  auto& d_offset = role == Role::query ? acc.role_offset_query : acc.role_offset_passage;
  for (std::size_t x = 0; x < f; ++x) {
    double sum = 0.0;
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t y = 0; y < h; ++y) sum += d_hidden.at(i, y) * backbone.at(x, y);
    }
    d_offset[x] += sum;
  }
}

void apply_update(Matrix& backbone, AdapterHead& head, const TowerGrad& grad, double lr,
                  bool update_backbone) {
  if (update_backbone) {
    for (std::size_t i = 0; i < backbone.data().size(); ++i) {
      backbone.data()[i] -= lr * grad.backbone.data()[i];
    }
  }
  for (std::size_t i = 0; i < head.multi_head.data().size(); ++i) {
    head.multi_head.data()[i] -= lr * grad.multi_head.data()[i];
  }
  for (std::size_t i = 0; i < head.dense_scale.size(); ++i) {
    head.dense_scale[i] -= lr * grad.dense_scale[i];
  }
  for (std::size_t i = 0; i < head.role_offset_query.size(); ++i) {
    head.role_offset_query[i] -= lr * grad.role_offset_query[i];
  }
  for (std::size_t i = 0; i < head.role_offset_passage.size(); ++i) {
    head.role_offset_passage[i] -= lr * grad.role_offset_passage[i];
  }
}

ToyEncoder ToyEncoder::init(const ToyEncoderConfig& config, std::uint64_t seed) {
  ToyEncoder enc;
  enc.config = config;
  Rng rng(seed ^ 0x746f79656e63ULL);
  enc.backbone = Matrix(config.feat_dim, config.hidden_dim);
  const double scale = 1.0 / std::sqrt(double(config.feat_dim));
  for (auto& v : enc.backbone.data()) v = scale * rng.normal();
  enc.pair_head = AdapterHead::init(config, rng);
  return enc;
}

void ToyEncoder::duplicate_adapters() {
  if (!adapters.empty()) return;
  adapters.emplace("retrieval", pair_head);
  adapters.emplace("text-matching", pair_head);
  adapters.emplace("code", pair_head);
}

std::vector<std::string> ToyEncoder::valid_tasks() const {
  std::vector<std::string> tasks = {"pair"};
  for (const auto& [name, head] : adapters) tasks.push_back(name);
  return tasks;
}

const AdapterHead& ToyEncoder::head(const std::string& task) const {
  if (task == "pair") return pair_head;
  const auto it = adapters.find(task);
  if (it == adapters.end()) {
    std::string valid;
    for (const auto& name : valid_tasks()) valid += (valid.empty() ? "" : ", ") + name;
    throw DataError("unknown task '" + task + "' (valid tasks: " + valid + ")");
  }
  return it->second;
}

AdapterHead& ToyEncoder::mutable_head(const std::string& task) {
  return const_cast<AdapterHead&>(std::as_const(*this).head(task));
}

ItemEmbedding ToyEncoder::embed_raw(const SyntheticItem& item, const std::string& task,
                                    Role role) const {
  return encoder_forward(item.tokens, backbone, head(task), role).embedding;
}

EmbeddingRecord ToyEncoder::encode(const SyntheticItem& item, const std::string& task,
                                   Role role) const {
  const auto raw = embed_raw(item, task, role);
  std::vector<float> dense(raw.dense.size());
  for (std::size_t i = 0; i < dense.size(); ++i) dense[i] = float(raw.dense[i]);
  std::vector<float> multi(raw.multi.data().size());
  for (std::size_t i = 0; i < multi.size(); ++i) multi[i] = float(raw.multi.data()[i]);
  return make_record(item.id, role, item.modality, DenseVector(std::move(dense)),
                     MultiVector(raw.multi.rows(), raw.multi.cols(), std::move(multi)),
                     /*normalize_embeddings=*/true);
}

std::uint64_t checksum(const Matrix& m) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (double v : m.data()) fnv_mix(hash, v);
  return hash;
}

std::uint64_t checksum(const AdapterHead& head) {
  std::uint64_t hash = checksum(head.multi_head);
  for (double v : head.dense_scale) fnv_mix(hash, v);
  for (double v : head.role_offset_query) fnv_mix(hash, v);
  for (double v : head.role_offset_passage) fnv_mix(hash, v);
  return hash;
}

}  // namespace latesim
