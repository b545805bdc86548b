#include "latesim/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "latesim/diagnostics.hpp"
#include "latesim/harness.hpp"
#include "latesim/log.hpp"

namespace latesim {
namespace {

// Train-split indices by class, one table per modality.
struct ClassIndex {
  std::vector<std::vector<std::size_t>> text;
  std::vector<std::vector<std::size_t>> image;
};

ClassIndex build_class_index(const SyntheticDataset& ds) {
  ClassIndex index;
  index.text.resize(ds.config.n_classes);
  index.image.resize(ds.config.n_classes);
  for (std::size_t i = 0; i < ds.train_text.size(); ++i) {
    index.text[std::size_t(ds.train_text[i].latent_class)].push_back(i);
  }
  for (std::size_t i = 0; i < ds.train_image.size(); ++i) {
    index.image[std::size_t(ds.train_image[i].latent_class)].push_back(i);
  }
  return index;
}

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[rng.below(i)]);
  }
}

std::vector<std::size_t> sample_classes(std::size_t n_classes, std::size_t count, Rng& rng) {
  std::vector<std::size_t> classes(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) classes[c] = c;
  shuffle(classes, rng);
  classes.resize(count);
  return classes;
}

// Two distinct members of a class bucket.
std::pair<std::size_t, std::size_t> pick_two(const std::vector<std::size_t>& bucket, Rng& rng) {
  const std::size_t first = rng.below(bucket.size());
  std::size_t second = rng.below(bucket.size() - 1);
  if (second >= first) ++second;
  return {bucket[first], bucket[second]};
}

std::vector<std::size_t> pick_n(const std::vector<std::size_t>& bucket, std::size_t n, Rng& rng) {
  std::vector<std::size_t> pool = bucket;
  shuffle(pool, rng);
  if (n > pool.size()) throw DataError("class bucket smaller than requested sample");
  pool.resize(n);
  return pool;
}

void check_finite_terms(const std::map<std::string, double>& terms, double total,
                        std::size_t step) {
  for (const auto& [name, value] : terms) {
    if (!std::isfinite(value)) {
      throw NumericError("non-finite loss at step " + std::to_string(step) + " in term " + name);
    }
  }
  if (!std::isfinite(total)) {
    throw NumericError("non-finite loss at step " + std::to_string(step));
  }
}

nlohmann::ordered_json snapshot(const SyntheticConfig& gen, const LossConfig& loss,
                                const PhaseConfig& phase) {
  nlohmann::ordered_json j;
  j["generator"] = gen.to_json();
  j["loss"] = loss.to_json();
  j["phase"] = phase.to_json();
  return j;
}

// One trainable tower: backbone plus head. The two-phase pipeline uses the
// encoder's own storage; the gap experiment owns its towers.
struct ItemRef {
  const SyntheticItem* item;
  Role role;
};

struct BatchForwards {
  std::vector<EncoderForward> queries;
  std::vector<EncoderForward> passages;
};

}  // namespace

PhaseConfig PhaseConfig::from_json(const nlohmann::json& j) {
  PhaseConfig cfg;
  for (const auto& [key, value] : j.items()) {
    if (key == "steps") {
      cfg.steps = value.get<std::size_t>();
    } else if (key == "lr") {
      cfg.lr = value.get<double>();
    } else if (key == "batch_size") {
      cfg.batch_size = value.get<std::size_t>();
    } else if (key == "hard_negatives") {
      cfg.hard_negatives = value.get<std::size_t>();
    } else if (key == "scored_pairs") {
      cfg.scored_pairs = value.get<std::size_t>();
    } else {
      throw DataError("unknown phase config key '" + key + "'");
    }
  }
  if (cfg.lr <= 0.0) throw DataError("lr must be positive");
  if (cfg.batch_size == 0) throw DataError("batch_size must be >= 1");
  return cfg;
}

nlohmann::ordered_json PhaseConfig::to_json() const {
  nlohmann::ordered_json j;
  j["steps"] = steps;
  j["lr"] = lr;
  j["batch_size"] = batch_size;
  j["hard_negatives"] = hard_negatives;
  j["scored_pairs"] = scored_pairs;
  return j;
}

nlohmann::ordered_json TrainRunReport::to_json() const {
  nlohmann::ordered_json j;
  j["phase"] = phase;
  j["task"] = task;
  j["seed"] = seed;
  j["steps"] = steps;
  j["lr"] = lr;
  j["batch_size"] = batch_size;
  j["initial_loss"] = initial_loss;
  j["final_loss"] = final_loss;
  j["ndcg10_dense"] = ndcg10_dense;
  j["ndcg10_late"] = ndcg10_late;
  j["step_total"] = step_total;
  j["step_terms"] = step_terms;
  j["config"] = config_snapshot;
  return j;
}

HeldOutMetrics evaluate_held_out(const ToyEncoder& encoder, const std::string& task,
                                 const SyntheticDataset& dataset) {
  std::vector<EmbeddingRecord> docs;
  docs.reserve(dataset.eval_image.size());
  for (const auto& item : dataset.eval_image) {
    docs.push_back(encoder.encode(item, task, Role::passage));
  }
  std::vector<EmbeddingRecord> queries;
  queries.reserve(dataset.eval_text.size());
  for (const auto& item : dataset.eval_text) {
    queries.push_back(encoder.encode(item, task, Role::query));
  }
  Qrels qrels;
  for (const auto& q : dataset.eval_text) {
    for (const auto& d : dataset.eval_image) {
      if (q.latent_class == d.latent_class) qrels.judgments[q.id][d.id] = 1;
    }
  }
  const auto store = EmbeddingStore::from_records(std::move(docs));

  BenchmarkConfig config;
  config.metrics = {"ndcg@10"};
  config.k = 10;
  HeldOutMetrics metrics;
  config.mode = SearchMode::dense;
  metrics.ndcg10_dense = run_benchmark(store, queries, qrels, config).aggregate.at("ndcg@10");
  config.mode = SearchMode::late;
  metrics.ndcg10_late = run_benchmark(store, queries, qrels, config).aggregate.at("ndcg@10");
  return metrics;
}

TrainRunReport train_phase1(const SyntheticDataset& dataset, ToyEncoder& encoder,
                            const LossConfig& loss, const PhaseConfig& phase,
                            std::uint64_t seed) {
  loss.validate();
  if (phase.batch_size > dataset.config.n_classes) {
    throw DataError("batch_size must not exceed n_classes (one class per in-batch pair)");
  }
  if (dataset.config.items_per_class < 2) throw DataError("need >= 2 items per class");

  const auto index = build_class_index(dataset);
  Rng rng = Rng(seed).fork(1);

  TrainRunReport report;
  report.phase = "phase1";
  report.task = "pair";
  report.seed = seed;
  report.steps = phase.steps;
  report.lr = phase.lr;
  report.batch_size = phase.batch_size;
  report.config_snapshot = snapshot(dataset.config, loss, phase);

  const std::size_t eval_steps = std::max<std::size_t>(phase.steps, 1);
  for (std::size_t step = 0; step < eval_steps; ++step) {
    // Sample one text-text batch and one text-image batch of equal size.
    const auto classes = sample_classes(dataset.config.n_classes, phase.batch_size, rng);
    std::vector<ItemRef> txt_q, txt_p, mm_q, mm_p;
    for (const std::size_t c : classes) {
      const auto [qa, qb] = pick_two(index.text[c], rng);
      txt_q.push_back({&dataset.train_text[qa], Role::query});
      txt_p.push_back({&dataset.train_text[qb], Role::passage});
      const std::size_t tq = index.text[c][rng.below(index.text[c].size())];
      const std::size_t pi = index.image[c][rng.below(index.image[c].size())];
      mm_q.push_back({&dataset.train_text[tq], Role::query});
      mm_p.push_back({&dataset.train_image[pi], Role::passage});
    }

    auto forward_all = [&](const std::vector<ItemRef>& refs) {
      std::vector<EncoderForward> fwds;
      fwds.reserve(refs.size());
      for (const auto& ref : refs) {
        fwds.push_back(
            encoder_forward(ref.item->tokens, encoder.backbone, encoder.pair_head, ref.role));
      }
      return fwds;
    };
    const auto f_txt_q = forward_all(txt_q);
    const auto f_txt_p = forward_all(txt_p);
    const auto f_mm_q = forward_all(mm_q);
    const auto f_mm_p = forward_all(mm_p);

    PairBatch b_txt, b_multi;
    for (const auto& f : f_txt_q) b_txt.queries.push_back(f.embedding);
    for (const auto& f : f_txt_p) b_txt.passages.push_back(f.embedding);
    for (const auto& f : f_mm_q) b_multi.queries.push_back(f.embedding);
    for (const auto& f : f_mm_p) b_multi.passages.push_back(f.embedding);

    const auto result = joint_loss(b_txt, b_multi, loss);
    const std::map<std::string, double> terms = {
        {"nce_dense_txt", result.terms[0]}, {"nce_late_txt", result.terms[1]},
        {"kl_txt", result.terms[2]},        {"nce_dense_multi", result.terms[3]},
        {"nce_late_multi", result.terms[4]}, {"kl_multi", result.terms[5]},
    };
    check_finite_terms(terms, result.value, step);
    report.step_total.push_back(result.value);
    report.step_terms.push_back(terms);

    if (phase.steps == 0) break;  // echo the initial loss, change nothing

    TowerGrad acc = TowerGrad::zeros(encoder.config);
    auto backward_all = [&](const std::vector<ItemRef>& refs,
                            const std::vector<EncoderForward>& fwds,
                            const std::vector<ItemGrad>& grads) {
      for (std::size_t i = 0; i < refs.size(); ++i) {
        encoder_backward(refs[i].item->tokens, encoder.backbone, encoder.pair_head, refs[i].role,
                         fwds[i], grads[i], acc, /*train_backbone=*/false);
      }
    };
    backward_all(txt_q, f_txt_q, result.grad_txt.queries);
    backward_all(txt_p, f_txt_p, result.grad_txt.passages);
    backward_all(mm_q, f_mm_q, result.grad_multi.queries);
    backward_all(mm_p, f_mm_p, result.grad_multi.passages);

    acc.scale(1.0 / double(4 * phase.batch_size));  // mean-reduced update
    apply_update(encoder.backbone, encoder.pair_head, acc, phase.lr, /*update_backbone=*/false);
  }

  report.initial_loss = report.step_total.front();
  report.final_loss = report.step_total.back();
  const auto metrics = evaluate_held_out(encoder, "pair", dataset);
  report.ndcg10_dense = metrics.ndcg10_dense;
  report.ndcg10_late = metrics.ndcg10_late;
  log_info("phase1: loss " + std::to_string(report.initial_loss) + " -> " +
           std::to_string(report.final_loss));
  return report;
}

TrainRunReport train_phase2(ToyEncoder& encoder, const std::string& task,
                            const SyntheticDataset& dataset, const LossConfig& loss,
                            const PhaseConfig& phase, std::uint64_t seed) {
  loss.validate();
  if (task != "retrieval" && task != "text-matching" && task != "code") {
    throw DataError("unknown task '" + task +
                    "' (valid tasks: retrieval, text-matching, code)");
  }
  encoder.duplicate_adapters();
  AdapterHead& head = encoder.mutable_head(task);
  const auto index = build_class_index(dataset);

  if (phase.batch_size > dataset.config.n_classes) {
    throw DataError("batch_size must not exceed n_classes (one class per in-batch pair)");
  }
  const std::size_t m = phase.hard_negatives;
  if ((task == "retrieval" || task == "code") &&
      m > dataset.config.items_per_class) {
    throw DataError("hard_negatives exceeds sibling-class item count");
  }
  if (task == "text-matching") {
    if (phase.scored_pairs == 0) {
      throw DataError("text-matching requires at least one pair with a ground-truth score");
    }
    if (phase.scored_pairs > phase.batch_size) {
      throw DataError("scored_pairs must not exceed batch_size");
    }
  }

  Rng rng = Rng(seed).fork(2);

  TrainRunReport report;
  report.phase = "phase2";
  report.task = task;
  report.seed = seed;
  report.steps = phase.steps;
  report.lr = phase.lr;
  report.batch_size = phase.batch_size;
  report.config_snapshot = snapshot(dataset.config, loss, phase);

  const std::size_t eval_steps = std::max<std::size_t>(phase.steps, 1);
  for (std::size_t step = 0; step < eval_steps; ++step) {
    std::map<std::string, double> terms;
    double total = 0.0;

    // Forward caches and their gradient slots, accumulated after the loss.
    std::vector<ItemRef> refs;
    std::vector<EncoderForward> fwds;
    std::vector<const ItemGrad*> grads;
    auto add_item = [&](const SyntheticItem& item, Role role) {
      refs.push_back({&item, role});
      fwds.push_back(encoder_forward(item.tokens, encoder.backbone, head, role));
      return fwds.back().embedding;
    };

    if (task == "retrieval" || task == "code") {
      const auto classes = sample_classes(dataset.config.n_classes, phase.batch_size, rng);
      HardNegativeBatch b_txt, b_multi;
      std::vector<std::size_t> txt_slots, mm_slots;  // fwd indices in batch order
      for (const std::size_t c : classes) {
        const std::size_t sibling = std::size_t(dataset.sibling_of(int(c)));
        const auto [qa, qb] = pick_two(index.text[c], rng);
        txt_slots.push_back(fwds.size());
        b_txt.queries.push_back(add_item(dataset.train_text[qa], Role::query));
        b_txt.positives.push_back(add_item(dataset.train_text[qb], Role::passage));
        std::vector<ItemEmbedding> negs;
        for (const std::size_t ni : pick_n(index.text[sibling], m, rng)) {
          negs.push_back(add_item(dataset.train_text[ni], Role::passage));
        }
        b_txt.negatives.push_back(std::move(negs));

        if (task == "retrieval") {
          const std::size_t tq = index.text[c][rng.below(index.text[c].size())];
          const std::size_t pi = index.image[c][rng.below(index.image[c].size())];
          mm_slots.push_back(fwds.size());
          b_multi.queries.push_back(add_item(dataset.train_text[tq], Role::query));
          b_multi.positives.push_back(add_item(dataset.train_image[pi], Role::passage));
          std::vector<ItemEmbedding> mm_negs;
          for (const std::size_t ni : pick_n(index.image[sibling], m, rng)) {
            mm_negs.push_back(add_item(dataset.train_image[ni], Role::passage));
          }
          b_multi.negatives.push_back(std::move(mm_negs));
        }
      }

      const auto result = joint_loss_hard_negatives(b_txt, b_multi, loss);
      total = result.value;
      terms = {{"nce_dense_txt", result.terms[0]},   {"nce_late_txt", result.terms[1]},
               {"kl_txt", result.terms[2]},          {"nce_dense_multi", result.terms[3]},
               {"nce_late_multi", result.terms[4]},  {"kl_multi", result.terms[5]}};
      check_finite_terms(terms, total, step);
      report.step_total.push_back(total);
      report.step_terms.push_back(terms);
      if (phase.steps == 0) break;

      TowerGrad acc = TowerGrad::zeros(encoder.config);
      std::size_t fi = 0;
      auto backprop = [&](const ItemGrad& g) {
        encoder_backward(refs[fi].item->tokens, encoder.backbone, head, refs[fi].role, fwds[fi],
                         g, acc, /*train_backbone=*/false);
        ++fi;
      };
      for (std::size_t e = 0; e < b_txt.queries.size(); ++e) {
        backprop(result.grad_txt.queries[e]);
        backprop(result.grad_txt.positives[e]);
        for (const auto& g : result.grad_txt.negatives[e]) backprop(g);
        if (task == "retrieval") {
          backprop(result.grad_multi.queries[e]);
          backprop(result.grad_multi.positives[e]);
          for (const auto& g : result.grad_multi.negatives[e]) backprop(g);
        }
      }
      acc.scale(1.0 / double(fwds.size()));
      apply_update(encoder.backbone, head, acc, phase.lr, /*update_backbone=*/false);
    } else {
      // text-matching: scored pairs by class relation plus unscored
      // same-class pairs; both sides encoded symmetrically as passages.
      StsBatch batch;
      for (std::size_t p = 0; p < phase.batch_size; ++p) {
        const bool scored = p < phase.scored_pairs;
        const std::size_t c = rng.below(dataset.config.n_classes);
        StsPair pair;
        if (scored) {
          const std::size_t relation = rng.below(3);
          std::size_t other = c;
          double zeta = 0.9;
          if (relation == 1) {
            other = std::size_t(dataset.sibling_of(int(c)));
            zeta = 0.55;
          } else if (relation == 2) {
            other = rng.below(dataset.config.n_classes);
            zeta = (other == c) ? 0.9 : (other == std::size_t(dataset.sibling_of(int(c))) ? 0.55
                                                                                          : 0.15);
          }
          pair.ground_truth = zeta + 0.05 * rng.uniform();
          const std::size_t ia = index.text[c][rng.below(index.text[c].size())];
          const std::size_t ib = index.text[other][rng.below(index.text[other].size())];
          pair.a = add_item(dataset.train_text[ia], Role::passage);
          pair.b = add_item(dataset.train_text[ib], Role::passage);
        } else {
          const auto [ia, ib] = pick_two(index.text[c], rng);
          pair.a = add_item(dataset.train_text[ia], Role::passage);
          pair.b = add_item(dataset.train_text[ib], Role::passage);
        }
        batch.pairs.push_back(std::move(pair));
      }

      const auto result = text_matching_loss(batch, loss);
      total = result.value;
      terms = {{"dense", result.terms[0]}, {"late", result.terms[1]}, {"kl", result.terms[2]}};
      check_finite_terms(terms, total, step);
      report.step_total.push_back(total);
      report.step_terms.push_back(terms);
      if (phase.steps == 0) break;

      TowerGrad acc = TowerGrad::zeros(encoder.config);
      std::size_t fi = 0;
      for (std::size_t p = 0; p < batch.pairs.size(); ++p) {
        encoder_backward(refs[fi].item->tokens, encoder.backbone, head, refs[fi].role, fwds[fi],
                         result.grad_a[p], acc, false);
        ++fi;
        encoder_backward(refs[fi].item->tokens, encoder.backbone, head, refs[fi].role, fwds[fi],
                         result.grad_b[p], acc, false);
        ++fi;
      }
      acc.scale(1.0 / double(fwds.size()));
      apply_update(encoder.backbone, head, acc, phase.lr, /*update_backbone=*/false);
    }
  }

  report.initial_loss = report.step_total.front();
  report.final_loss = report.step_total.back();
  const auto metrics = evaluate_held_out(encoder, task, dataset);
  report.ndcg10_dense = metrics.ndcg10_dense;
  report.ndcg10_late = metrics.ndcg10_late;
  log_info("phase2/" + task + ": loss " + std::to_string(report.initial_loss) + " -> " +
           std::to_string(report.final_loss));
  return report;
}

// ---------------------------------------------------------------------------
// Modality-gap experiment
// ---------------------------------------------------------------------------

GapExperimentConfig GapExperimentConfig::from_json(const nlohmann::json& j) {
  GapExperimentConfig cfg;
  for (const auto& [key, value] : j.items()) {
    if (key == "generator") {
      cfg.generator = SyntheticConfig::from_json(value);
    } else if (key == "encoder") {
      cfg.encoder = ToyEncoderConfig::from_json(value);
    } else if (key == "loss") {
      cfg.loss = LossConfig::from_json(value);
    } else if (key == "training") {
      cfg.training = PhaseConfig::from_json(value);
    } else if (key == "bins") {
      cfg.bins = value.get<std::size_t>();
    } else {
      throw DataError("unknown gap experiment config key '" + key + "'");
    }
  }
  return cfg;
}

nlohmann::ordered_json GapExperimentConfig::to_json() const {
  nlohmann::ordered_json j;
  j["generator"] = generator.to_json();
  j["encoder"] = encoder.to_json();
  j["loss"] = loss.to_json();
  j["training"] = training.to_json();
  j["bins"] = bins;
  return j;
}

nlohmann::ordered_json GapExperimentReport::to_json() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["gap_shared"] = gap_shared;
  j["gap_two_tower"] = gap_two_tower;
  j["cross_modal_mean_shared"] = cross_modal_mean_shared;
  j["same_modal_mean_shared"] = same_modal_mean_shared;
  j["cross_modal_mean_two_tower"] = cross_modal_mean_two_tower;
  j["same_modal_mean_two_tower"] = same_modal_mean_two_tower;
  j["config"] = config_snapshot;
  return j;
}

namespace {

struct Tower {
  Matrix backbone;
  AdapterHead head;
};

// Both variants fit this shape; the shared model aliases one tower for both
// modalities.
struct GapModel {
  Tower text;
  Tower image;
  bool shared = false;

  Tower& tower_for(Modality m) { return (shared || m == Modality::text) ? text : image; }
  const Tower& tower_for(Modality m) const {
    return (shared || m == Modality::text) ? text : image;
  }
};

GapModel init_gap_model(const ToyEncoderConfig& config, std::uint64_t seed, bool shared) {
  GapModel model;
  model.shared = shared;
  Rng rng(seed);
  auto init_tower = [&](Tower& tower, std::uint64_t stream) {
    Rng t = rng.fork(stream);
    tower.backbone = Matrix(config.feat_dim, config.hidden_dim);
    const double scale = 1.0 / std::sqrt(double(config.feat_dim));
    for (auto& v : tower.backbone.data()) v = scale * t.normal();
    tower.head = AdapterHead::init(config, t);
  };
  init_tower(model.text, 11);
  if (!shared) init_tower(model.image, 22);
  return model;
}

ItemEmbedding gap_forward(const GapModel& model, const SyntheticItem& item, Role role,
                          EncoderForward& fwd_out) {
  const Tower& tower = model.tower_for(item.modality);
  fwd_out = encoder_forward(item.tokens, tower.backbone, tower.head, role);
  return fwd_out.embedding;
}

void train_gap_model(GapModel& model, const SyntheticDataset& dataset,
                     const GapExperimentConfig& cfg, std::uint64_t batch_seed) {
  const auto index = build_class_index(dataset);
  Rng rng = Rng(batch_seed).fork(3);  // identical batch stream for both variants
  const auto& phase = cfg.training;
  if (phase.batch_size > dataset.config.n_classes) {
    throw DataError("batch_size must not exceed n_classes (one class per in-batch pair)");
  }

  for (std::size_t step = 0; step < phase.steps; ++step) {
    const auto classes = sample_classes(dataset.config.n_classes, phase.batch_size, rng);
    std::vector<ItemRef> txt_q, txt_p, mm_q, mm_p;
    for (const std::size_t c : classes) {
      const auto [qa, qb] = pick_two(index.text[c], rng);
      txt_q.push_back({&dataset.train_text[qa], Role::query});
      txt_p.push_back({&dataset.train_text[qb], Role::passage});
      const std::size_t tq = index.text[c][rng.below(index.text[c].size())];
      const std::size_t pi = index.image[c][rng.below(index.image[c].size())];
      mm_q.push_back({&dataset.train_text[tq], Role::query});
      mm_p.push_back({&dataset.train_image[pi], Role::passage});
    }

    std::vector<EncoderForward> f_txt_q(txt_q.size()), f_txt_p(txt_p.size()),
        f_mm_q(mm_q.size()), f_mm_p(mm_p.size());
    PairBatch b_txt, b_multi;
    for (std::size_t i = 0; i < txt_q.size(); ++i) {
      b_txt.queries.push_back(gap_forward(model, *txt_q[i].item, txt_q[i].role, f_txt_q[i]));
      b_txt.passages.push_back(gap_forward(model, *txt_p[i].item, txt_p[i].role, f_txt_p[i]));
      b_multi.queries.push_back(gap_forward(model, *mm_q[i].item, mm_q[i].role, f_mm_q[i]));
      b_multi.passages.push_back(gap_forward(model, *mm_p[i].item, mm_p[i].role, f_mm_p[i]));
    }

    const auto result = joint_loss(b_txt, b_multi, cfg.loss);
    if (!std::isfinite(result.value)) {
      throw NumericError("non-finite loss at step " + std::to_string(step));
    }

    TowerGrad acc_text = TowerGrad::zeros(cfg.encoder);
    TowerGrad acc_image = TowerGrad::zeros(cfg.encoder);
    auto backward = [&](const ItemRef& ref, const EncoderForward& fwd, const ItemGrad& grad) {
      const Tower& tower = model.tower_for(ref.item->modality);
      TowerGrad& acc = (model.shared || ref.item->modality == Modality::text) ? acc_text
                                                                              : acc_image;
      encoder_backward(ref.item->tokens, tower.backbone, tower.head, ref.role, fwd, grad, acc,
                       /*train_backbone=*/true);
    };
    for (std::size_t i = 0; i < txt_q.size(); ++i) {
      backward(txt_q[i], f_txt_q[i], result.grad_txt.queries[i]);
      backward(txt_p[i], f_txt_p[i], result.grad_txt.passages[i]);
      backward(mm_q[i], f_mm_q[i], result.grad_multi.queries[i]);
      backward(mm_p[i], f_mm_p[i], result.grad_multi.passages[i]);
    }
    const double norm = 1.0 / double(4 * phase.batch_size);
    acc_text.scale(norm);
    apply_update(model.text.backbone, model.text.head, acc_text, phase.lr, true);
    if (!model.shared) {
      acc_image.scale(norm);
      apply_update(model.image.backbone, model.image.head, acc_image, phase.lr, true);
    }
  }
}

DenseVector gap_dense(const GapModel& model, const SyntheticItem& item) {
  EncoderForward fwd;
  const auto raw = gap_forward(model, item, Role::passage, fwd);
  std::vector<float> values(raw.dense.size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = float(raw.dense[i]);
  return normalize(DenseVector(std::move(values)));
}

ModalityGapResult measure_gap(const GapModel& model, const SyntheticDataset& dataset,
                              std::size_t bins) {
  PairSet cross, same;
  // Matched cross-modal pairs: eval text x eval image of the same class;
  // matched text-text pairs: distinct eval text items of the same class.
  const std::size_t per_class = dataset.config.eval_items_per_class;
  for (std::size_t c = 0; c < dataset.config.n_classes; ++c) {
    std::vector<const SyntheticItem*> texts, images;
    for (const auto& item : dataset.eval_text) {
      if (item.latent_class == int(c)) texts.push_back(&item);
    }
    for (const auto& item : dataset.eval_image) {
      if (item.latent_class == int(c)) images.push_back(&item);
    }
    for (std::size_t i = 0; i < per_class; ++i) {
      cross.push_back({gap_dense(model, *texts[i]), gap_dense(model, *images[i])});
      if (i + 1 < per_class) {
        same.push_back({gap_dense(model, *texts[i]), gap_dense(model, *texts[i + 1])});
      }
    }
  }
  return modality_gap(cross, same, bins);
}

}  // namespace

GapExperimentReport modality_gap_experiment(std::uint64_t seed,
                                            const GapExperimentConfig& config) {
  const auto dataset = generate_synthetic(seed, config.generator);

  GapModel shared = init_gap_model(config.encoder, seed ^ 0x5a5a5a5aULL, /*shared=*/true);
  GapModel towers = init_gap_model(config.encoder, seed ^ 0xa5a5a5a5ULL, /*shared=*/false);
  train_gap_model(shared, dataset, config, seed);
  train_gap_model(towers, dataset, config, seed);

  const auto gap_shared = measure_gap(shared, dataset, config.bins);
  const auto gap_towers = measure_gap(towers, dataset, config.bins);

  GapExperimentReport report;
  report.seed = seed;
  report.gap_shared = gap_shared.gap;
  report.gap_two_tower = gap_towers.gap;
  report.cross_modal_mean_shared = gap_shared.cross_modal.mean;
  report.same_modal_mean_shared = gap_shared.same_modal.mean;
  report.cross_modal_mean_two_tower = gap_towers.cross_modal.mean;
  report.same_modal_mean_two_tower = gap_towers.same_modal.mean;
  report.config_snapshot = config.to_json();
  log_info("gap experiment: shared " + std::to_string(report.gap_shared) + ", two-tower " +
           std::to_string(report.gap_two_tower));
  return report;
}

}  // namespace latesim
