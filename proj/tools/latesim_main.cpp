#include <omp.h>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "latesim/common.hpp"
#include "latesim/diagnostics.hpp"
#include "latesim/gradcheck.hpp"
#include "latesim/harness.hpp"
#include "latesim/kernels.hpp"
#include "latesim/log.hpp"
#include "latesim/losses.hpp"
#include "latesim/metrics.hpp"
#include "latesim/search.hpp"
#include "latesim/store.hpp"
#include "latesim/trainer.hpp"

namespace {

using namespace latesim;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

// Stores start with the LSIM magic; anything else is treated as JSONL.
std::vector<EmbeddingRecord> load_records(const std::filesystem::path& path,
                                          bool normalize_jsonl) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw DataError("cannot open: " + path.string());
  char magic[4] = {};
  probe.read(magic, 4);
  probe.close();
  if (probe.gcount() == 4 && std::memcmp(magic, kStoreMagic, 4) == 0) return read_store(path);
  return read_jsonl(path, normalize_jsonl);
}

void write_text(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + out_path);
  out << text;
  if (!out.good()) throw DataError("write failed: " + out_path);
}

void write_json(const nlohmann::ordered_json& j, const std::string& out_path) {
  write_text(j.dump(2) + "\n", out_path);
}

nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  return j;
}

struct StsRow {
  std::string id_a;
  std::string id_b;
  double ground_truth;
};

std::vector<StsRow> load_sts_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open pairs: " + path);
  std::vector<StsRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    StsRow row;
    std::string value;
    if (!std::getline(ss, row.id_a, '\t') || !std::getline(ss, row.id_b, '\t') ||
        !std::getline(ss, value, '\t')) {
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": expected id_a<TAB>id_b<TAB>value");
    }
    try {
      row.ground_truth = std::stod(value);
    } catch (const std::exception&) {
      throw DataError(path + ":" + std::to_string(line_no) + ": bad value '" + value + "'");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError("no pairs in " + path);
  return rows;
}

struct TaggedPair {
  std::string id_a;
  std::string id_b;
  std::string tag;
};

std::vector<TaggedPair> load_tagged_pairs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open pairs: " + path);
  std::vector<TaggedPair> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    TaggedPair row;
    if (!std::getline(ss, row.id_a, '\t') || !std::getline(ss, row.id_b, '\t') ||
        !std::getline(ss, row.tag, '\t')) {
      throw DataError(path + ":" + std::to_string(line_no) + ": expected id_a<TAB>id_b<TAB>tag");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError("no pairs in " + path);
  return rows;
}

const EmbeddingRecord& require_record(const EmbeddingStore& store, const std::string& id) {
  const auto* rec = store.find(id);
  if (!rec) throw DataError("id not found in embeddings: " + id);
  return *rec;
}

std::vector<std::string> split_csv(const std::string& value) {
  std::vector<std::string> out;
  std::istringstream ss(value);
  std::string field;
  while (std::getline(ss, field, ',')) {
    if (!field.empty()) out.push_back(field);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Subcommand bodies
// ---------------------------------------------------------------------------

int cmd_index(const std::string& input, const std::string& out) {
  auto records = read_jsonl(input, /*normalize_embeddings=*/true);
  const auto store = build_store(std::move(records), out);
  nlohmann::ordered_json j;
  j["path"] = out;
  j["records"] = store.size();
  j["dense_dim"] = store.dense_dim();
  j["multi_dim"] = store.multi_dim();
  std::cout << j.dump(2) << "\n";
  return kExitOk;
}

int cmd_search(const std::string& store_path, const std::string& queries_path,
               const std::string& mode, std::size_t k, std::size_t candidate_pool,
               std::optional<std::size_t> truncate_to, const std::string& run_name,
               const std::string& out) {
  const auto store = EmbeddingStore::open(store_path);
  const auto queries = load_records(queries_path, /*normalize_jsonl=*/true);
  std::vector<SearchRequest> requests;
  requests.reserve(queries.size());
  for (const auto& q : queries) {
    SearchRequest req;
    req.query = q;
    req.mode = search_mode_from_string(mode);
    req.k = k;
    req.candidate_pool = candidate_pool;
    req.truncate_to = truncate_to;
    requests.push_back(std::move(req));
  }
  const auto rankings = batch_search(store, requests);
  std::ostringstream trec;
  for (std::size_t i = 0; i < rankings.size(); ++i) {
    write_trec_run(trec, queries[i].id, rankings[i], run_name);
  }
  write_text(trec.str(), out);
  return kExitOk;
}

int cmd_eval(const std::string& store_path, const std::string& queries_path,
             const std::string& qrels_path, const std::string& mode, std::size_t k,
             std::size_t candidate_pool, std::optional<std::size_t> truncate_to,
             const std::string& metrics_csv, const std::string& splits_path,
             const std::string& run_file, const std::string& run_name, const std::string& out) {
  const auto store = EmbeddingStore::open(store_path);
  const auto queries = load_records(queries_path, /*normalize_jsonl=*/true);
  const auto qrels = Qrels::load_tsv(qrels_path);

  BenchmarkConfig config;
  config.metrics = split_csv(metrics_csv);
  config.mode = search_mode_from_string(mode);
  config.k = k;
  config.candidate_pool = candidate_pool;
  config.truncate_to = truncate_to;
  config.run_name = run_name;

  std::map<std::string, QuerySplit> splits;
  if (!splits_path.empty()) splits = load_splits_tsv(splits_path);

  std::optional<std::ofstream> trec_file;
  std::ostream* trec_out = nullptr;
  if (!run_file.empty()) {
    trec_file.emplace(run_file, std::ios::trunc);
    if (!*trec_file) throw DataError("cannot open for writing: " + run_file);
    trec_out = &*trec_file;
  }
  const auto report = run_benchmark(store, queries, qrels, config, splits, trec_out);
  write_json(report.to_json(), out);
  return kExitOk;
}

int cmd_sts_eval(const std::string& store_path, const std::string& pairs_path,
                 const std::string& mode, const std::string& out) {
  const auto records = load_records(store_path, /*normalize_jsonl=*/true);
  const auto store = EmbeddingStore::from_records(records);
  const auto rows = load_sts_tsv(pairs_path);

  std::vector<double> model_scores, ground_truth;
  for (const auto& row : rows) {
    const auto& a = require_record(store, row.id_a);
    const auto& b = require_record(store, row.id_b);
    double score = 0.0;
    if (mode == "dense") {
      score = cosine(a.dense, b.dense);
    } else if (mode == "late") {
      if (!a.multi || !b.multi) throw DataError("late mode requires multi-vectors on both sides");
      score = normalized_late_score(*a.multi, *b.multi);
    } else {
      throw DataError("unknown mode '" + mode + "' (expected dense or late)");
    }
    model_scores.push_back(score);
    ground_truth.push_back(row.ground_truth);
  }
  nlohmann::ordered_json j;
  j["pairs"] = rows.size();
  j["mode"] = mode;
  j["spearman"] = spearman(model_scores, ground_truth);
  write_json(j, out);
  return kExitOk;
}

int cmd_diagnose(const std::string& embeddings_path, const std::string& embeddings_b_path,
                 const std::string& pairs_path, const std::string& analysis, std::size_t bins,
                 const std::string& out) {
  auto records = read_jsonl(embeddings_path, /*normalize_embeddings=*/true);
  if (!embeddings_b_path.empty()) {
    auto more = read_jsonl(embeddings_b_path, /*normalize_embeddings=*/true);
    records.insert(records.end(), std::make_move_iterator(more.begin()),
                   std::make_move_iterator(more.end()));
  }
  const auto store = EmbeddingStore::from_records(std::move(records));
  const auto rows = load_tagged_pairs(pairs_path);

  auto pair_sets = [&](const std::string& tag_a, const std::string& tag_b) {
    PairSet set_a, set_b;
    for (const auto& row : rows) {
      const auto& a = require_record(store, row.id_a);
      const auto& b = require_record(store, row.id_b);
      if (row.tag == tag_a) {
        set_a.push_back({a.dense, b.dense});
      } else if (row.tag == tag_b) {
        set_b.push_back({a.dense, b.dense});
      } else {
        throw DataError("unknown pair tag '" + row.tag + "' (expected " + tag_a + " or " + tag_b +
                        ")");
      }
    }
    return std::make_pair(set_a, set_b);
  };

  nlohmann::ordered_json j;
  std::string csv;
  if (analysis == "gap") {
    const auto [cross, same] = pair_sets("image-text", "text-text");
    const auto result = modality_gap(cross, same, bins);
    j = result.to_json();
    std::ostringstream ss;
    write_histogram_csv(ss, result.cross_modal, result.same_modal);
    csv = ss.str();
  } else if (analysis == "cone") {
    const auto [pos, neg] = pair_sets("positive", "negative");
    const auto result = cone_effect(pos, neg, bins);
    j = result.to_json();
    std::ostringstream ss;
    write_histogram_csv(ss, result.positives, result.negatives);
    csv = ss.str();
  } else if (analysis == "alignment") {
    PairSet pairs;
    for (const auto& row : rows) {
      pairs.push_back({require_record(store, row.id_a).dense,
                       require_record(store, row.id_b).dense});
    }
    j["pairs"] = pairs.size();
    j["alignment_score"] = alignment_score(pairs);
  } else {
    throw DataError("unknown analysis '" + analysis + "' (expected gap, cone, or alignment)");
  }

  if (out.empty()) {
    std::cout << j.dump(2) << "\n";
    if (!csv.empty()) std::cout << csv;
  } else {
    write_json(j, out + ".json");
    if (!csv.empty()) write_text(csv, out + ".csv");
  }
  return kExitOk;
}

int cmd_train(const std::string& config_path, std::uint64_t seed, const std::string& out,
              const std::string& export_prefix) {
  SyntheticConfig generator;
  ToyEncoderConfig encoder_config;
  LossConfig loss;
  PhaseConfig phase1;
  std::vector<std::pair<std::string, PhaseConfig>> phase2;

  if (!config_path.empty()) {
    const auto j = load_json_file(config_path);
    for (const auto& [key, value] : j.items()) {
      if (key == "generator") {
        generator = SyntheticConfig::from_json(value);
      } else if (key == "encoder") {
        encoder_config = ToyEncoderConfig::from_json(value);
      } else if (key == "loss") {
        loss = LossConfig::from_json(value);
      } else if (key == "phase1") {
        phase1 = PhaseConfig::from_json(value);
      } else if (key == "phase2") {
        for (const auto& entry : value) {
          nlohmann::json phase_json = entry;
          std::string task = "retrieval";
          if (phase_json.contains("task")) {
            task = phase_json["task"].get<std::string>();
            phase_json.erase("task");
          }
          phase2.emplace_back(task, PhaseConfig::from_json(phase_json));
        }
      } else {
        throw DataError("unknown train config key '" + key + "'");
      }
    }
  }

  const auto dataset = generate_synthetic(seed, generator);
  ToyEncoder encoder = ToyEncoder::init(encoder_config, seed);

  nlohmann::ordered_json report;
  report["seed"] = seed;
  report["phase1"] = train_phase1(dataset, encoder, loss, phase1, seed).to_json();
  report["phase2"] = nlohmann::ordered_json::array();
  std::string last_task = "pair";
  for (const auto& [task, phase] : phase2) {
    report["phase2"].push_back(train_phase2(encoder, task, dataset, loss, phase, seed).to_json());
    last_task = task;
  }
  write_json(report, out);

  if (!export_prefix.empty()) {
    std::vector<EmbeddingRecord> passages, queries;
    for (const auto& item : dataset.eval_image) {
      passages.push_back(encoder.encode(item, last_task, Role::passage));
    }
    for (const auto& item : dataset.eval_text) {
      queries.push_back(encoder.encode(item, last_task, Role::query));
    }
    write_jsonl(export_prefix + ".passages.jsonl", passages);
    write_jsonl(export_prefix + ".queries.jsonl", queries);

    std::ofstream qrels(export_prefix + ".qrels.tsv", std::ios::trunc);
    if (!qrels) throw DataError("cannot open for writing: " + export_prefix + ".qrels.tsv");
    for (const auto& q : dataset.eval_text) {
      for (const auto& d : dataset.eval_image) {
        if (q.latent_class == d.latent_class) qrels << q.id << '\t' << d.id << "\t1\n";
      }
    }

    // Matched pairs for `diagnose --analysis gap`.
    std::ofstream pairs(export_prefix + ".pairs.tsv", std::ios::trunc);
    if (!pairs) throw DataError("cannot open for writing: " + export_prefix + ".pairs.tsv");
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
        pairs << texts[i]->id << '\t' << images[i]->id << "\timage-text\n";
        if (i + 1 < per_class) {
          pairs << texts[i]->id << '\t' << texts[i + 1]->id << "\ttext-text\n";
        }
      }
    }
  }
  return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed, std::size_t instances, const std::string& out) {
  const auto report = run_gradcheck(seed, instances);
  write_json(report.to_json(), out);
  if (!report.pass) {
    std::cerr << "gradcheck failed: max relative error above " << report.threshold << "\n";
    return kExitNumeric;
  }
  return kExitOk;
}

int cmd_gap_experiment(std::uint64_t seed, const std::string& config_path,
                       const std::string& out) {
  GapExperimentConfig config;
  if (!config_path.empty()) config = GapExperimentConfig::from_json(load_json_file(config_path));
  const auto report = modality_gap_experiment(seed, config);
  write_json(report.to_json(), out);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latesim: dual-mode (dense + late-interaction) embedding toolkit"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker thread count (results are independent of this)")
      ->capture_default_str();

  // index
  auto* index = app.add_subcommand("index", "Build a binary store from JSONL records");
  std::string index_input, index_out;
  index->add_option("--input", index_input, "JSONL records")->required();
  index->add_option("--out", index_out, "Output store path")->required();

  // search
  auto* search_cmd = app.add_subcommand("search", "Rank stored passages for each query");
  std::string s_store, s_queries, s_mode = "dense", s_run_name = "latesim", s_out;
  std::size_t s_k = 10, s_pool = 0;
  std::optional<std::size_t> s_trunc;
  search_cmd->add_option("--store", s_store, "Passage store")->required();
  search_cmd->add_option("--queries", s_queries, "Query store or JSONL")->required();
  search_cmd->add_option("--mode", s_mode, "dense | late | two-stage")->capture_default_str();
  search_cmd->add_option("--k", s_k, "Results per query")->capture_default_str();
  search_cmd->add_option("--candidate-pool", s_pool, "Two-stage recall depth (0 = 10*k)");
  search_cmd->add_option("--truncate-to", s_trunc, "Matryoshka truncation (dense mode)");
  search_cmd->add_option("--run-name", s_run_name, "TREC run tag")->capture_default_str();
  search_cmd->add_option("--out", s_out, "Output TREC run file (default stdout)");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Run retrieval benchmark against qrels");
  std::string e_store, e_queries, e_qrels, e_mode = "dense", e_metrics = "ndcg@10",
              e_splits, e_run_file, e_run_name = "latesim", e_out;
  std::size_t e_k = 10, e_pool = 0;
  std::optional<std::size_t> e_trunc;
  eval_cmd->add_option("--store", e_store, "Passage store")->required();
  eval_cmd->add_option("--queries", e_queries, "Query store or JSONL")->required();
  eval_cmd->add_option("--qrels", e_qrels, "Qrels TSV")->required();
  eval_cmd->add_option("--mode", e_mode, "dense | late | two-stage")->capture_default_str();
  eval_cmd->add_option("--k", e_k, "Retrieval depth")->capture_default_str();
  eval_cmd->add_option("--candidate-pool", e_pool, "Two-stage recall depth (0 = 10*k)");
  eval_cmd->add_option("--truncate-to", e_trunc, "Matryoshka truncation (dense mode)");
  eval_cmd->add_option("--metrics", e_metrics, "Comma list, e.g. ndcg@10,recall@5")
      ->capture_default_str();
  eval_cmd->add_option("--splits", e_splits, "query_id<TAB>task<TAB>language TSV");
  eval_cmd->add_option("--run-file", e_run_file, "Also write the TREC run here");
  eval_cmd->add_option("--run-name", e_run_name, "TREC run tag")->capture_default_str();
  eval_cmd->add_option("--out", e_out, "Report JSON (default stdout)");

  // sts-eval
  auto* sts_cmd = app.add_subcommand("sts-eval", "Spearman correlation on scored pairs");
  std::string st_store, st_pairs, st_mode = "dense", st_out;
  sts_cmd->add_option("--store", st_store, "Embeddings (store or JSONL)")->required();
  sts_cmd->add_option("--pairs", st_pairs, "id_a<TAB>id_b<TAB>score TSV")->required();
  sts_cmd->add_option("--mode", st_mode, "dense | late")->capture_default_str();
  sts_cmd->add_option("--out", st_out, "Report JSON (default stdout)");

  // diagnose
  auto* diag_cmd = app.add_subcommand("diagnose", "Embedding-space geometry analyses");
  std::string d_embeddings, d_embeddings_b, d_pairs, d_analysis = "gap", d_out;
  std::size_t d_bins = 50;
  diag_cmd->add_option("--embeddings", d_embeddings, "JSONL embeddings")->required();
  diag_cmd->add_option("--embeddings-b", d_embeddings_b, "Second JSONL embeddings file");
  diag_cmd->add_option("--pairs", d_pairs, "id_a<TAB>id_b<TAB>tag TSV")->required();
  diag_cmd->add_option("--analysis", d_analysis, "gap | cone | alignment")
      ->capture_default_str();
  diag_cmd->add_option("--bins", d_bins, "Histogram bins")->capture_default_str();
  diag_cmd->add_option("--out", d_out, "Output prefix (.json/.csv); default stdout");

  // train
  auto* train_cmd = app.add_subcommand("train", "Two-phase toy training run");
  std::string t_config, t_out, t_export;
  std::uint64_t t_seed = 0;
  train_cmd->add_option("--config", t_config, "Train config JSON");
  train_cmd->add_option("--seed", t_seed, "Random seed")->required();
  train_cmd->add_option("--out", t_out, "Report JSON (default stdout)");
  train_cmd->add_option("--export", t_export,
                        "Prefix for held-out artifacts (.queries.jsonl, .passages.jsonl, "
                        ".qrels.tsv, .pairs.tsv)");

  // gradcheck
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every loss");
  std::uint64_t g_seed = 0;
  std::size_t g_instances = 100;
  std::string g_out;
  grad_cmd->add_option("--seed", g_seed, "Random seed")->required();
  grad_cmd->add_option("--instances", g_instances, "Instances per loss")->capture_default_str();
  grad_cmd->add_option("--out", g_out, "Report JSON (default stdout)");

  // gap-experiment
  auto* gap_cmd = app.add_subcommand("gap-experiment",
                                     "Shared-encoder vs two-tower modality gap comparison");
  std::uint64_t x_seed = 0;
  std::string x_config, x_out;
  gap_cmd->add_option("--seed", x_seed, "Random seed")->required();
  gap_cmd->add_option("--config", x_config, "Experiment config JSON");
  gap_cmd->add_option("--out", x_out, "Report JSON (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  if (threads > 0) omp_set_num_threads(threads);

  try {
    if (*index) return cmd_index(index_input, index_out);
    if (*search_cmd) {
      return cmd_search(s_store, s_queries, s_mode, s_k, s_pool, s_trunc, s_run_name, s_out);
    }
    if (*eval_cmd) {
      return cmd_eval(e_store, e_queries, e_qrels, e_mode, e_k, e_pool, e_trunc, e_metrics,
                      e_splits, e_run_file, e_run_name, e_out);
    }
    if (*sts_cmd) return cmd_sts_eval(st_store, st_pairs, st_mode, st_out);
    if (*diag_cmd) {
      return cmd_diagnose(d_embeddings, d_embeddings_b, d_pairs, d_analysis, d_bins, d_out);
    }
    if (*train_cmd) return cmd_train(t_config, t_seed, t_out, t_export);
    if (*grad_cmd) return cmd_gradcheck(g_seed, g_instances, g_out);
    if (*gap_cmd) return cmd_gap_experiment(x_seed, x_config, x_out);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
