#include "latesim/synthetic.hpp"

#include <cmath>

#include "latesim/rng.hpp"

namespace latesim {
namespace {

std::vector<double> random_unit(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  double sum = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    sum += x * x;
  }
  const double inv = 1.0 / std::sqrt(sum);
  for (auto& x : v) x *= inv;
  return v;
}

SyntheticItem make_item(Rng& rng, const SyntheticConfig& cfg, const std::vector<double>& proto,
                        const std::vector<double>& offset, int latent_class, Modality modality,
                        std::string id) {
  const std::size_t span = cfg.max_tokens - cfg.min_tokens + 1;
  const std::size_t tokens = cfg.min_tokens + rng.below(span);
  Matrix rows(tokens, cfg.feat_dim);
  for (std::size_t i = 0; i < tokens; ++i) {
    for (std::size_t x = 0; x < cfg.feat_dim; ++x) {
      double v = proto[x] + cfg.token_noise * rng.normal();
      if (modality == Modality::image) v += cfg.modality_offset * offset[x];
      rows.at(i, x) = v;
    }
  }
  return SyntheticItem{std::move(id), latent_class, modality, std::move(rows)};
}

}  // namespace

SyntheticConfig SyntheticConfig::from_json(const nlohmann::json& j) {
  SyntheticConfig cfg;
  for (const auto& [key, value] : j.items()) {
    if (key == "n_classes") {
      cfg.n_classes = value.get<std::size_t>();
    } else if (key == "items_per_class") {
      cfg.items_per_class = value.get<std::size_t>();
    } else if (key == "eval_items_per_class") {
      cfg.eval_items_per_class = value.get<std::size_t>();
    } else if (key == "feat_dim") {
      cfg.feat_dim = value.get<std::size_t>();
    } else if (key == "min_tokens") {
      cfg.min_tokens = value.get<std::size_t>();
    } else if (key == "max_tokens") {
      cfg.max_tokens = value.get<std::size_t>();
    } else if (key == "sibling_delta") {
      cfg.sibling_delta = value.get<double>();
    } else if (key == "modality_offset") {
      cfg.modality_offset = value.get<double>();
    } else if (key == "token_noise") {
      cfg.token_noise = value.get<double>();
    } else {
      throw DataError("unknown generator config key '" + key + "'");
    }
  }
  return cfg;
}

nlohmann::ordered_json SyntheticConfig::to_json() const {
  nlohmann::ordered_json j;
  j["n_classes"] = n_classes;
  j["items_per_class"] = items_per_class;
  j["eval_items_per_class"] = eval_items_per_class;
  j["feat_dim"] = feat_dim;
  j["min_tokens"] = min_tokens;
  j["max_tokens"] = max_tokens;
  j["sibling_delta"] = sibling_delta;
  j["modality_offset"] = modality_offset;
  j["token_noise"] = token_noise;
  return j;
}

std::vector<std::size_t> SyntheticDataset::class_members(const std::vector<SyntheticItem>& split,
                                                         int latent_class) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < split.size(); ++i) {
    if (split[i].latent_class == latent_class) out.push_back(i);
  }
  return out;
}

SyntheticDataset generate_synthetic(std::uint64_t seed, const SyntheticConfig& cfg) {
  if (cfg.n_classes < 2) throw DataError("n_classes must be >= 2");
  if (cfg.n_classes % 2 != 0) throw DataError("n_classes must be even (sibling pairing)");
  if (cfg.items_per_class < 2) throw DataError("items_per_class must be >= 2");
  if (cfg.eval_items_per_class < 1) throw DataError("eval_items_per_class must be >= 1");
  if (cfg.feat_dim < 2) throw DataError("feat_dim must be >= 2");
  if (cfg.min_tokens < 1 || cfg.max_tokens < cfg.min_tokens) {
    throw DataError("token range must satisfy 1 <= min_tokens <= max_tokens");
  }

  SyntheticDataset ds;
  ds.config = cfg;
  ds.seed = seed;
  Rng rng(seed);

  // Class prototypes: each sibling pair shares a center and splits by
  // +/- delta along a pair-specific direction.
  std::vector<std::vector<double>> protos(cfg.n_classes);
  for (std::size_t pair = 0; pair < cfg.n_classes / 2; ++pair) {
    const auto center = random_unit(rng, cfg.feat_dim);
    const auto delta = random_unit(rng, cfg.feat_dim);
    for (int sign = 0; sign < 2; ++sign) {
      auto proto = center;
      for (std::size_t x = 0; x < cfg.feat_dim; ++x) {
        proto[x] += (sign == 0 ? 1.0 : -1.0) * cfg.sibling_delta * delta[x];
      }
      protos[2 * pair + sign] = std::move(proto);
    }
  }
  const auto modality_direction = random_unit(rng, cfg.feat_dim);

  auto fill_split = [&](std::vector<SyntheticItem>& split, Modality modality, std::size_t count,
                        const std::string& tag) {
    for (std::size_t c = 0; c < cfg.n_classes; ++c) {
      for (std::size_t k = 0; k < count; ++k) {
        std::string id = tag + "-" + to_string(modality) + "-c" + std::to_string(c) + "-i" +
                         std::to_string(k);
        split.push_back(make_item(rng, cfg, protos[c], modality_direction, int(c), modality,
                                  std::move(id)));
      }
    }
  };
  fill_split(ds.train_text, Modality::text, cfg.items_per_class, "trn");
  fill_split(ds.train_image, Modality::image, cfg.items_per_class, "trn");
  fill_split(ds.eval_text, Modality::text, cfg.eval_items_per_class, "dev");
  fill_split(ds.eval_image, Modality::image, cfg.eval_items_per_class, "dev");
  return ds;
}

double mean_feature_cosine(const std::vector<SyntheticItem>& items_a,
                           const std::vector<SyntheticItem>& items_b,
                           const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  if (pairs.empty()) throw DataError("no pairs to average");
  auto pooled = [](const SyntheticItem& item) {
    std::vector<double> mean(item.tokens.cols(), 0.0);
    for (std::size_t i = 0; i < item.tokens.rows(); ++i) {
      for (std::size_t x = 0; x < item.tokens.cols(); ++x) mean[x] += item.tokens.at(i, x);
    }
    for (auto& v : mean) v /= double(item.tokens.rows());
    return mean;
  };
  double total = 0.0;
  for (const auto& [ia, ib] : pairs) {
    const auto a = pooled(items_a[ia]);
    const auto b = pooled(items_b[ib]);
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t x = 0; x < a.size(); ++x) {
      ab += a[x] * b[x];
      aa += a[x] * a[x];
      bb += b[x] * b[x];
    }
    total += ab / std::sqrt(aa * bb);
  }
  return total / double(pairs.size());
}

}  // namespace latesim
