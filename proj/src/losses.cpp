#include "latesim/losses.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <utility>

#include "latesim/common.hpp"

namespace latesim {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void require(bool ok, const std::string& message) {
  if (!ok) throw DataError(message);
}

void require_tau(double tau) {
  if (!(tau > 0.0)) throw DataError("tau must be > 0");
}

void check_finite_grid(const Matrix& s) {
  for (double v : s.data()) {
    if (!std::isfinite(v)) throw NumericError("non-finite similarity entry");
  }
}

// ---------------------------------------------------------------------------
// Dense chain: raw vectors -> unit prefixes of length k -> cosine grid.
// ---------------------------------------------------------------------------

using VecRefs = std::vector<const std::vector<double>*>;
using VecGradRefs = std::vector<std::vector<double>*>;

struct DenseSide {
  std::size_t k = 0;
  std::vector<std::vector<double>> unit;  // per vector: unit prefix, length k
  std::vector<double> norm;               // prefix norms
};

DenseSide dense_forward(const VecRefs& raw, std::size_t k) {
  DenseSide side;
  side.k = k;
  side.unit.reserve(raw.size());
  side.norm.reserve(raw.size());
  for (const auto* v : raw) {
    require(k >= 1 && k <= v->size(), "truncation length " + std::to_string(k) +
                                          " exceeds vector dimension " +
                                          std::to_string(v->size()));
    double sum = 0.0;
    for (std::size_t x = 0; x < k; ++x) sum += (*v)[x] * (*v)[x];
    if (sum == 0.0) throw DataError("degenerate truncation");
    const double norm = std::sqrt(sum);
    std::vector<double> unit(k);
    for (std::size_t x = 0; x < k; ++x) unit[x] = (*v)[x] / norm;
    side.unit.push_back(std::move(unit));
    side.norm.push_back(norm);
  }
  return side;
}

SimilarityMatrix dense_grid(const DenseSide& a, const DenseSide& b) {
  SimilarityMatrix s(a.unit.size(), b.unit.size());
  for (std::size_t i = 0; i < a.unit.size(); ++i) {
    for (std::size_t j = 0; j < b.unit.size(); ++j) {
      double dot = 0.0;
      for (std::size_t x = 0; x < a.k; ++x) dot += a.unit[i][x] * b.unit[j][x];
      s.at(i, j) = dot;
    }
  }
  return s;
}

// d(u)/d(v) for u = v_prefix/||v_prefix||: g_raw += scale*(g - (g.u)u)/norm.
void unit_backward(std::span<const double> unit, double norm, std::span<const double> g_unit,
                   std::span<double> g_raw, double scale) {
  double g_dot_u = 0.0;
  for (std::size_t x = 0; x < unit.size(); ++x) g_dot_u += g_unit[x] * unit[x];
  for (std::size_t x = 0; x < unit.size(); ++x) {
    g_raw[x] += scale * (g_unit[x] - g_dot_u * unit[x]) / norm;
  }
}

void dense_backward(const DenseSide& a, const DenseSide& b, const Matrix& d_scores,
                    const VecGradRefs& g_a, const VecGradRefs& g_b, double scale) {
  const std::size_t k = a.k;
  std::vector<double> g_unit(k);
  for (std::size_t i = 0; i < a.unit.size(); ++i) {
    std::fill(g_unit.begin(), g_unit.end(), 0.0);
    for (std::size_t j = 0; j < b.unit.size(); ++j) {
      const double g = d_scores.at(i, j);
      if (g == 0.0) continue;
      for (std::size_t x = 0; x < k; ++x) g_unit[x] += g * b.unit[j][x];
    }
    unit_backward(a.unit[i], a.norm[i], g_unit, *g_a[i], scale);
  }
  for (std::size_t j = 0; j < b.unit.size(); ++j) {
    std::fill(g_unit.begin(), g_unit.end(), 0.0);
    for (std::size_t i = 0; i < a.unit.size(); ++i) {
      const double g = d_scores.at(i, j);
      if (g == 0.0) continue;
      for (std::size_t x = 0; x < k; ++x) g_unit[x] += g * a.unit[i][x];
    }
    unit_backward(b.unit[j], b.norm[j], g_unit, *g_b[j], scale);
  }
}

// ---------------------------------------------------------------------------
// Late chain: raw token rows -> unit rows -> normalized late-interaction grid
// with recorded argmax for the subgradient.
// ---------------------------------------------------------------------------

using MatRefs = std::vector<const Matrix*>;
using MatGradRefs = std::vector<Matrix*>;

struct LateSide {
  std::vector<Matrix> unit;                 // per item: t x d unit rows
  std::vector<std::vector<double>> norms;   // per item: row norms
};

LateSide late_forward(const MatRefs& raw) {
  LateSide side;
  side.unit.reserve(raw.size());
  side.norms.reserve(raw.size());
  for (const auto* m : raw) {
    require(m->rows() >= 1 && m->cols() >= 1, "multi-vector must have at least one token row");
    Matrix unit(m->rows(), m->cols());
    std::vector<double> norms(m->rows());
    for (std::size_t i = 0; i < m->rows(); ++i) {
      double sum = 0.0;
      for (std::size_t x = 0; x < m->cols(); ++x) sum += m->at(i, x) * m->at(i, x);
      if (sum == 0.0) throw DataError("degenerate embedding");
      norms[i] = std::sqrt(sum);
      for (std::size_t x = 0; x < m->cols(); ++x) unit.at(i, x) = m->at(i, x) / norms[i];
    }
    side.unit.push_back(std::move(unit));
    side.norms.push_back(std::move(norms));
  }
  return side;
}

struct LateGrid {
  SimilarityMatrix scores;                         // already divided by t_query
  std::vector<std::vector<std::uint32_t>> argmax;  // [a * nB + b][query row]
};

LateGrid late_grid(const LateSide& a, const LateSide& b) {
  LateGrid grid;
  const std::size_t na = a.unit.size();
  const std::size_t nb = b.unit.size();
  grid.scores = SimilarityMatrix(na, nb);
  grid.argmax.resize(na * nb);
  for (std::size_t qa = 0; qa < na; ++qa) {
    const Matrix& qm = a.unit[qa];
    for (std::size_t pb = 0; pb < nb; ++pb) {
      const Matrix& pm = b.unit[pb];
      require(qm.cols() == pm.cols(), "dimension mismatch: " + std::to_string(qm.cols()) +
                                          " vs " + std::to_string(pm.cols()));
      auto& amax = grid.argmax[qa * nb + pb];
      amax.resize(qm.rows());
      double total = 0.0;
      for (std::size_t i = 0; i < qm.rows(); ++i) {
        double best = kNegInf;
        std::uint32_t best_j = 0;
        for (std::size_t j = 0; j < pm.rows(); ++j) {
          double dot = 0.0;
          for (std::size_t x = 0; x < qm.cols(); ++x) dot += qm.at(i, x) * pm.at(j, x);
          if (dot > best) {
            best = dot;
            best_j = std::uint32_t(j);
          }
        }
        amax[i] = best_j;
        total += best;
      }
      grid.scores.at(qa, pb) = total / double(qm.rows());
    }
  }
  return grid;
}

void late_backward(const LateSide& a, const LateSide& b, const LateGrid& grid,
                   const Matrix& d_scores, const MatGradRefs& g_a, const MatGradRefs& g_b,
                   double scale) {
  const std::size_t na = a.unit.size();
  const std::size_t nb = b.unit.size();
  // Accumulate gradients on the unit rows first.
  std::vector<Matrix> gu_a, gu_b;
  gu_a.reserve(na);
  gu_b.reserve(nb);
  for (const auto& m : a.unit) gu_a.emplace_back(m.rows(), m.cols());
  for (const auto& m : b.unit) gu_b.emplace_back(m.rows(), m.cols());

  for (std::size_t qa = 0; qa < na; ++qa) {
    const Matrix& qm = a.unit[qa];
    for (std::size_t pb = 0; pb < nb; ++pb) {
      const double g = d_scores.at(qa, pb);
      if (g == 0.0) continue;
      const Matrix& pm = b.unit[pb];
      const auto& amax = grid.argmax[qa * nb + pb];
      const double per_row = g / double(qm.rows());
      for (std::size_t i = 0; i < qm.rows(); ++i) {
        const std::size_t j = amax[i];
        for (std::size_t x = 0; x < qm.cols(); ++x) {
          gu_a[qa].at(i, x) += per_row * pm.at(j, x);
          gu_b[pb].at(j, x) += per_row * qm.at(i, x);
        }
      }
    }
  }
  for (std::size_t qa = 0; qa < na; ++qa) {
    for (std::size_t i = 0; i < a.unit[qa].rows(); ++i) {
      unit_backward(a.unit[qa].row(i), a.norms[qa][i], gu_a[qa].row(i), g_a[qa]->row(i), scale);
    }
  }
  for (std::size_t pb = 0; pb < nb; ++pb) {
    for (std::size_t j = 0; j < b.unit[pb].rows(); ++j) {
      unit_backward(b.unit[pb].row(j), b.norms[pb][j], gu_b[pb].row(j), g_b[pb]->row(j), scale);
    }
  }
}

// ---------------------------------------------------------------------------
// Batch plumbing.
// ---------------------------------------------------------------------------

ItemGrad zero_like(const ItemEmbedding& item) {
  ItemGrad g;
  g.dense.assign(item.dense.size(), 0.0);
  g.multi = Matrix(item.multi.rows(), item.multi.cols());
  return g;
}

std::vector<ItemGrad> zeros_like(const std::vector<ItemEmbedding>& items) {
  std::vector<ItemGrad> grads;
  grads.reserve(items.size());
  for (const auto& item : items) grads.push_back(zero_like(item));
  return grads;
}

VecRefs dense_refs(const std::vector<ItemEmbedding>& items) {
  VecRefs refs;
  refs.reserve(items.size());
  for (const auto& item : items) refs.push_back(&item.dense);
  return refs;
}

VecGradRefs dense_grad_refs(std::vector<ItemGrad>& grads) {
  VecGradRefs refs;
  refs.reserve(grads.size());
  for (auto& g : grads) refs.push_back(&g.dense);
  return refs;
}

MatRefs multi_refs(const std::vector<ItemEmbedding>& items) {
  MatRefs refs;
  refs.reserve(items.size());
  for (const auto& item : items) refs.push_back(&item.multi);
  return refs;
}

MatGradRefs multi_grad_refs(std::vector<ItemGrad>& grads) {
  MatGradRefs refs;
  refs.reserve(grads.size());
  for (auto& g : grads) refs.push_back(&g.multi);
  return refs;
}

std::size_t common_dense_dim(const std::vector<const std::vector<ItemEmbedding>*>& sets) {
  std::size_t dim = 0;
  for (const auto* set : sets) {
    for (const auto& item : *set) {
      if (dim == 0) dim = item.dense.size();
      require(item.dense.size() == dim && dim > 0,
              "dimension mismatch: " + std::to_string(dim) + " vs " +
                  std::to_string(item.dense.size()));
    }
  }
  require(dim > 0, "batch has no dense embeddings");
  return dim;
}

// ---------------------------------------------------------------------------
// Row softmax utilities (max-subtracted).
// ---------------------------------------------------------------------------

struct RowSoftmax {
  std::vector<double> prob;
  std::vector<double> log_prob;
};

RowSoftmax row_softmax(std::span<const double> row, double tau) {
  double max_v = kNegInf;
  for (double v : row) {
    if (!std::isfinite(v)) throw NumericError("non-finite similarity entry");
    max_v = std::max(max_v, v);
  }
  double sum = 0.0;
  RowSoftmax out;
  out.prob.resize(row.size());
  out.log_prob.resize(row.size());
  for (std::size_t k = 0; k < row.size(); ++k) {
    out.prob[k] = std::exp((row[k] - max_v) / tau);
    sum += out.prob[k];
  }
  const double log_sum = std::log(sum);
  for (std::size_t k = 0; k < row.size(); ++k) {
    out.log_prob[k] = (row[k] - max_v) / tau - log_sum;
    out.prob[k] /= sum;
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// LossConfig
// ---------------------------------------------------------------------------

void LossConfig::validate(bool require_positive_weight) const {
  require_tau(tau);
  bool any_positive = false;
  for (double w : weights) {
    require(w >= 0.0, "loss weights must be non-negative");
    if (w > 0.0) any_positive = true;
  }
  require(any_positive || !require_positive_weight,
          "at least one of w1..w6 must be positive");
  for (double w : matryoshka_weights) require(w >= 0.0, "matryoshka weights must be non-negative");
  if (!matryoshka_weights.empty() && !truncation_dims.empty()) {
    require(matryoshka_weights.size() == truncation_dims.size(),
            "matryoshka_weights and truncation_dims must have equal length");
  }
}

TruncationSchedule LossConfig::schedule_for(std::size_t dense_dim) const {
  if (truncation_dims.empty()) {
    return TruncationSchedule::halving(dense_dim, std::min<std::size_t>(4, dense_dim));
  }
  return TruncationSchedule(truncation_dims, dense_dim);
}

std::vector<double> LossConfig::schedule_weights(std::size_t n_lengths) const {
  if (matryoshka_weights.empty()) return std::vector<double>(n_lengths, 1.0);
  require(matryoshka_weights.size() == n_lengths,
          "matryoshka_weights length " + std::to_string(matryoshka_weights.size()) +
              " does not match schedule length " + std::to_string(n_lengths));
  return matryoshka_weights;
}

LossConfig LossConfig::from_json(const nlohmann::json& j) {
  LossConfig config;
  for (const auto& [key, value] : j.items()) {
    if (key == "tau") {
      config.tau = value.get<double>();
    } else if (key == "weights") {
      const auto w = value.get<std::vector<double>>();
      require(w.size() == 6, "weights must have exactly 6 entries");
      std::copy(w.begin(), w.end(), config.weights.begin());
    } else if (key == "truncation_dims") {
      config.truncation_dims = value.get<std::vector<std::size_t>>();
    } else if (key == "matryoshka_weights") {
      config.matryoshka_weights = value.get<std::vector<double>>();
    } else {
      throw DataError("unknown loss config key '" + key + "'");
    }
  }
  config.validate();
  return config;
}

LossConfig LossConfig::from_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

nlohmann::ordered_json LossConfig::to_json() const {
  nlohmann::ordered_json j;
  j["tau"] = tau;
  j["weights"] = weights;
  j["truncation_dims"] = truncation_dims;
  j["matryoshka_weights"] = matryoshka_weights;
  return j;
}

// ---------------------------------------------------------------------------
// Score-space objectives
// ---------------------------------------------------------------------------

double log_softmax_row(const SimilarityMatrix& s, double tau, std::size_t i, std::size_t j) {
  require_tau(tau);
  require(i < s.rows() && j < s.cols(), "log_softmax_row index out of range");
  const auto sm = row_softmax(s.row(i), tau);
  return std::min(sm.log_prob[j], 0.0);
}

LossValueAndGrad info_nce(const SimilarityMatrix& s, double tau) {
  require_tau(tau);
  require(s.rows() > 0, "empty similarity matrix");
  require(s.rows() == s.cols(), "info_nce needs a square matrix, got " +
                                    std::to_string(s.rows()) + "x" + std::to_string(s.cols()));
  LossValueAndGrad out;
  out.grad = Matrix(s.rows(), s.cols());
  for (std::size_t i = 0; i < s.rows(); ++i) {
    const auto sm = row_softmax(s.row(i), tau);
    out.value -= sm.log_prob[i];
    for (std::size_t k = 0; k < s.cols(); ++k) {
      out.grad.at(i, k) = (sm.prob[k] - (k == i ? 1.0 : 0.0)) / tau;
    }
  }
  return out;
}

LossValueAndGrad kl_distillation(const SimilarityMatrix& s_dense, const SimilarityMatrix& s_late,
                                 double tau) {
  require_tau(tau);
  require(s_dense.rows() == s_late.rows() && s_dense.cols() == s_late.cols(),
          "shape mismatch: " + std::to_string(s_dense.rows()) + "x" +
              std::to_string(s_dense.cols()) + " vs " + std::to_string(s_late.rows()) + "x" +
              std::to_string(s_late.cols()));
  require(s_dense.rows() > 0, "empty similarity matrix");
  LossValueAndGrad out;
  out.grad = Matrix(s_dense.rows(), s_dense.cols());
  for (std::size_t i = 0; i < s_dense.rows(); ++i) {
    const auto p = row_softmax(s_dense.row(i), tau);
    const auto q = row_softmax(s_late.row(i), tau);
    double row_kl = 0.0;
    for (std::size_t j = 0; j < s_dense.cols(); ++j) {
      row_kl += p.prob[j] * (p.log_prob[j] - q.log_prob[j]);
    }
    out.value += row_kl;
    // Teacher (late side) fixed: gradient flows into s_dense only.
    for (std::size_t j = 0; j < s_dense.cols(); ++j) {
      out.grad.at(i, j) = p.prob[j] * (p.log_prob[j] - q.log_prob[j] - row_kl) / tau;
    }
  }
  return out;
}

LossValueAndGrad info_nce_hard_negatives_scores(const Matrix& scores, std::size_t m, double tau) {
  require_tau(tau);
  const std::size_t k = scores.rows();
  require(k > 0, "empty batch");
  require(scores.cols() == k * (1 + m),
          "score grid must be k x k*(1+m): got " + std::to_string(scores.rows()) + "x" +
              std::to_string(scores.cols()) + " with m=" + std::to_string(m));
  LossValueAndGrad out;
  out.grad = Matrix(scores.rows(), scores.cols());
  for (std::size_t r = 0; r < k; ++r) {
    const auto sm = row_softmax(scores.row(r), tau);
    out.value -= sm.log_prob[r];  // positive for row r sits in column r
    for (std::size_t c = 0; c < scores.cols(); ++c) {
      out.grad.at(r, c) = (sm.prob[c] - (c == r ? 1.0 : 0.0)) / tau;
    }
  }
  return out;
}

LossValueAndGrad cosent_scores(std::span<const double> sims, std::span<const double> zeta,
                               double tau) {
  require_tau(tau);
  require(sims.size() == zeta.size(), "sims/ground-truth length mismatch");
  require(!sims.empty(), "cosent needs at least one pair");
  for (double v : sims) {
    if (!std::isfinite(v)) throw NumericError("non-finite similarity entry");
  }
  for (double z : zeta) {
    if (!std::isfinite(z)) throw NumericError("non-finite ground truth");
  }
  const std::size_t n = sims.size();

  // Violation terms x = (s_j - s_i)/tau over ordered pairs zeta_i > zeta_j,
  // combined as ln(1 + sum e^x) via a max-shifted accumulation.
  struct Term {
    std::size_t i, j;
    double x;
  };
  std::vector<Term> terms;
  double max_x = 0.0;  // the implicit e^0 term
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (zeta[i] > zeta[j]) {
        const double x = (sims[j] - sims[i]) / tau;
        terms.push_back({i, j, x});
        max_x = std::max(max_x, x);
      }
    }
  }
  LossValueAndGrad out;
  out.grad = Matrix(1, n);
  if (terms.empty()) return out;  // all ground truths equal: ln(1) = 0

  double sum = std::exp(-max_x);  // the 1 inside the log
  for (const auto& t : terms) sum += std::exp(t.x - max_x);
  out.value = max_x + std::log(sum);
  for (const auto& t : terms) {
    const double w = std::exp(t.x - max_x) / sum;
    out.grad.at(0, t.j) += w / tau;
    out.grad.at(0, t.i) -= w / tau;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Embedding-space objectives
// ---------------------------------------------------------------------------

std::size_t HardNegativeBatch::negatives_per_entry() const {
  require(!queries.empty(), "empty batch");
  require(queries.size() == positives.size() && queries.size() == negatives.size(),
          "hard-negative batch sides must have equal size");
  const std::size_t m = negatives.front().size();
  for (const auto& negs : negatives) {
    require(negs.size() == m, "ragged hard-negative batch: expected " + std::to_string(m) +
                                  " negatives per entry, got " + std::to_string(negs.size()));
  }
  return m;
}

namespace {

// Right-hand side of the hard-negative score grid, in column order:
// positives first, then entry i's negatives at columns k + i*m .. k + i*m+m-1.
std::vector<const ItemEmbedding*> hard_negative_columns(const HardNegativeBatch& batch,
                                                        std::size_t m) {
  std::vector<const ItemEmbedding*> cols;
  const std::size_t k = batch.queries.size();
  cols.reserve(k * (1 + m));
  for (const auto& p : batch.positives) cols.push_back(&p);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < m; ++j) cols.push_back(&batch.negatives[i][j]);
  }
  return cols;
}

}  // namespace

HardNegativeLoss info_nce_hard_negatives(const HardNegativeBatch& batch, LossMode mode,
                                         double tau) {
  const std::size_t m = batch.negatives_per_entry();
  const std::size_t k = batch.queries.size();
  const auto columns = hard_negative_columns(batch, m);

  HardNegativeLoss out;
  out.grad.queries = zeros_like(batch.queries);
  out.grad.positives = zeros_like(batch.positives);
  out.grad.negatives.reserve(k);
  for (const auto& negs : batch.negatives) out.grad.negatives.push_back(zeros_like(negs));

  // Gradient references in column order, matching `columns`.
  if (mode == LossMode::dense) {
    VecRefs left = dense_refs(batch.queries);
    VecRefs right;
    right.reserve(columns.size());
    for (const auto* item : columns) right.push_back(&item->dense);
    const std::size_t dim = common_dense_dim({&batch.queries, &batch.positives});
    for (const auto* item : columns) {
      require(item->dense.size() == dim, "dimension mismatch in hard-negative batch");
    }
    const auto a = dense_forward(left, dim);
    const auto b = dense_forward(right, dim);
    const auto grid = dense_grid(a, b);
    auto core = info_nce_hard_negatives_scores(grid, m, tau);
    out.value = core.value;
    VecGradRefs g_left = dense_grad_refs(out.grad.queries);
    VecGradRefs g_right;
    g_right.reserve(columns.size());
    for (auto& g : out.grad.positives) g_right.push_back(&g.dense);
    for (auto& negs : out.grad.negatives) {
      for (auto& g : negs) g_right.push_back(&g.dense);
    }
    dense_backward(a, b, core.grad, g_left, g_right, 1.0);
    out.score_grad = std::move(core.grad);
  } else {
    MatRefs left = multi_refs(batch.queries);
    MatRefs right;
    right.reserve(columns.size());
    for (const auto* item : columns) right.push_back(&item->multi);
    const auto a = late_forward(left);
    const auto b = late_forward(right);
    const auto grid = late_grid(a, b);
    auto core = info_nce_hard_negatives_scores(grid.scores, m, tau);
    out.value = core.value;
    MatGradRefs g_left = multi_grad_refs(out.grad.queries);
    MatGradRefs g_right;
    g_right.reserve(columns.size());
    for (auto& g : out.grad.positives) g_right.push_back(&g.multi);
    for (auto& negs : out.grad.negatives) {
      for (auto& g : negs) g_right.push_back(&g.multi);
    }
    late_backward(a, b, grid, core.grad, g_left, g_right, 1.0);
    out.score_grad = std::move(core.grad);
  }
  return out;
}

CosentLoss cosent(std::span<const StsPair> pairs, LossMode mode, double tau) {
  require(!pairs.empty(), "cosent needs at least one pair");
  std::vector<double> zeta;
  zeta.reserve(pairs.size());
  for (const auto& p : pairs) {
    require(p.ground_truth.has_value(), "cosent pair is missing its ground truth");
    zeta.push_back(*p.ground_truth);
  }
  const std::size_t n = pairs.size();

  CosentLoss out;
  std::vector<ItemEmbedding> side_a, side_b;
  side_a.reserve(n);
  side_b.reserve(n);
  for (const auto& p : pairs) {
    side_a.push_back(p.a);
    side_b.push_back(p.b);
  }
  out.grad_a = zeros_like(side_a);
  out.grad_b = zeros_like(side_b);

  std::vector<double> sims(n);
  if (mode == LossMode::dense) {
    const std::size_t dim = common_dense_dim({&side_a, &side_b});
    const auto a = dense_forward(dense_refs(side_a), dim);
    const auto b = dense_forward(dense_refs(side_b), dim);
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t x = 0; x < dim; ++x) dot += a.unit[i][x] * b.unit[i][x];
      sims[i] = dot;
    }
    auto core = cosent_scores(sims, zeta, tau);
    out.value = core.value;
    // Scatter the per-pair gradients onto the diagonal of a pairwise grid.
    Matrix d_scores(n, n);
    for (std::size_t i = 0; i < n; ++i) d_scores.at(i, i) = core.grad.at(0, i);
    dense_backward(a, b, d_scores, dense_grad_refs(out.grad_a), dense_grad_refs(out.grad_b), 1.0);
    out.score_grad.assign(core.grad.data().begin(), core.grad.data().end());
  } else {
    const auto a = late_forward(multi_refs(side_a));
    const auto b = late_forward(multi_refs(side_b));
    const auto grid = late_grid(a, b);
    for (std::size_t i = 0; i < n; ++i) sims[i] = grid.scores.at(i, i);
    auto core = cosent_scores(sims, zeta, tau);
    out.value = core.value;
    Matrix d_scores(n, n);
    for (std::size_t i = 0; i < n; ++i) d_scores.at(i, i) = core.grad.at(0, i);
    late_backward(a, b, grid, d_scores, multi_grad_refs(out.grad_a), multi_grad_refs(out.grad_b),
                  1.0);
    out.score_grad.assign(core.grad.data().begin(), core.grad.data().end());
  }
  return out;
}

MatryoshkaSetsLoss matryoshka_over_sets(
    std::span<const std::vector<double>> left, std::span<const std::vector<double>> right,
    const std::function<LossValueAndGrad(const SimilarityMatrix&)>& base_loss,
    const LossConfig& config) {
  require(!left.empty() && !right.empty(), "empty batch");
  const std::size_t dim = left.front().size();
  for (const auto& v : left) {
    require(v.size() == dim && dim > 0, "dimension mismatch in matryoshka batch");
  }
  for (const auto& v : right) {
    require(v.size() == dim, "dimension mismatch in matryoshka batch");
  }
  const auto schedule = config.schedule_for(dim);
  const auto weights = config.schedule_weights(schedule.dims().size());

  MatryoshkaSetsLoss out;
  out.grad_left.assign(left.size(), std::vector<double>(dim, 0.0));
  out.grad_right.assign(right.size(), std::vector<double>(dim, 0.0));

  VecRefs left_refs, right_refs;
  for (const auto& v : left) left_refs.push_back(&v);
  for (const auto& v : right) right_refs.push_back(&v);
  VecGradRefs g_left, g_right;
  for (auto& v : out.grad_left) g_left.push_back(&v);
  for (auto& v : out.grad_right) g_right.push_back(&v);

  for (std::size_t s = 0; s < schedule.dims().size(); ++s) {
    const std::size_t k = schedule.dims()[s];
    const double w = weights[s];
    if (w == 0.0) continue;
    const auto a = dense_forward(left_refs, k);
    const auto b = dense_forward(right_refs, k);
    const auto grid = dense_grid(a, b);
    const auto term = base_loss(grid);
    out.value += w * term.value;
    dense_backward(a, b, term.grad, g_left, g_right, w);
  }
  return out;
}

namespace {

void check_pair_batch(const PairBatch& batch) {
  require(batch.queries.size() == batch.passages.size(),
          "pair batch sides must have equal size (" + std::to_string(batch.queries.size()) +
              " vs " + std::to_string(batch.passages.size()) + ")");
  require(!batch.queries.empty(), "empty batch");
}

}  // namespace

PairLoss matryoshka_info_nce(const PairBatch& batch, const LossConfig& config) {
  check_pair_batch(batch);
  std::vector<std::vector<double>> left, right;
  left.reserve(batch.queries.size());
  right.reserve(batch.passages.size());
  for (const auto& item : batch.queries) left.push_back(item.dense);
  for (const auto& item : batch.passages) right.push_back(item.dense);
  const double tau = config.tau;
  auto sets = matryoshka_over_sets(
      left, right, [tau](const SimilarityMatrix& s) { return info_nce(s, tau); }, config);

  PairLoss out;
  out.value = sets.value;
  out.grad.queries = zeros_like(batch.queries);
  out.grad.passages = zeros_like(batch.passages);
  for (std::size_t i = 0; i < batch.queries.size(); ++i) {
    out.grad.queries[i].dense = std::move(sets.grad_left[i]);
  }
  for (std::size_t j = 0; j < batch.passages.size(); ++j) {
    out.grad.passages[j].dense = std::move(sets.grad_right[j]);
  }
  return out;
}

namespace {

// Shared skeleton of the three joint-loss terms for one batch: the
// Matryoshka-wrapped dense contrastive term, the late contrastive term, and
// the dense->late distillation term. The contrastive core is parameterized so
// the pair and hard-negative variants reuse it.
struct BatchTerms {
  double nce_dense = 0.0;
  double nce_late = 0.0;
  double kl = 0.0;
};

BatchTerms joint_terms(const std::vector<ItemEmbedding>& left,
                       const std::vector<const ItemEmbedding*>& right,
                       const std::function<LossValueAndGrad(const SimilarityMatrix&)>& core,
                       const LossConfig& config, double w_dense, double w_late, double w_kl,
                       std::vector<ItemGrad>& g_left, const std::vector<ItemGrad*>& g_right) {
  BatchTerms terms;
  const double tau = config.tau;

  if (w_dense != 0.0) {
    std::vector<std::vector<double>> l, r;
    l.reserve(left.size());
    r.reserve(right.size());
    for (const auto& item : left) l.push_back(item.dense);
    for (const auto* item : right) r.push_back(item->dense);
    auto sets = matryoshka_over_sets(l, r, core, config);
    terms.nce_dense = sets.value;
    for (std::size_t i = 0; i < left.size(); ++i) {
      for (std::size_t x = 0; x < sets.grad_left[i].size(); ++x) {
        g_left[i].dense[x] += w_dense * sets.grad_left[i][x];
      }
    }
    for (std::size_t j = 0; j < right.size(); ++j) {
      for (std::size_t x = 0; x < sets.grad_right[j].size(); ++x) {
        g_right[j]->dense[x] += w_dense * sets.grad_right[j][x];
      }
    }
  }

  const bool needs_late = w_late != 0.0 || w_kl != 0.0;
  if (needs_late) {
    MatRefs l = {};
    for (const auto& item : left) l.push_back(&item.multi);
    MatRefs r;
    for (const auto* item : right) r.push_back(&item->multi);
    const auto a = late_forward(l);
    const auto b = late_forward(r);
    const auto grid = late_grid(a, b);

    MatGradRefs gl, gr;
    for (auto& g : g_left) gl.push_back(&g.multi);
    for (auto* g : g_right) gr.push_back(&g->multi);

    if (w_late != 0.0) {
      auto late_core = core(grid.scores);
      terms.nce_late = late_core.value;
      late_backward(a, b, grid, late_core.grad, gl, gr, w_late);
    }
    if (w_kl != 0.0) {
      // Full-dimension dense grid for the distillation student side.
      VecRefs ld, rd;
      for (const auto& item : left) ld.push_back(&item.dense);
      for (const auto* item : right) rd.push_back(&item->dense);
      const std::size_t dim = left.front().dense.size();
      const auto ad = dense_forward(ld, dim);
      const auto bd = dense_forward(rd, dim);
      const auto dense = dense_grid(ad, bd);
      auto kl = kl_distillation(dense, grid.scores, tau);
      terms.kl = kl.value;
      VecGradRefs gld, grd;
      for (auto& g : g_left) gld.push_back(&g.dense);
      for (auto* g : g_right) grd.push_back(&g->dense);
      dense_backward(ad, bd, kl.grad, gld, grd, w_kl);
      // Teacher frozen: no gradient into the late side.
    }
  }
  return terms;
}

std::vector<const ItemEmbedding*> as_ptrs(const std::vector<ItemEmbedding>& items) {
  std::vector<const ItemEmbedding*> out;
  out.reserve(items.size());
  for (const auto& item : items) out.push_back(&item);
  return out;
}

std::vector<ItemGrad*> as_ptrs(std::vector<ItemGrad>& items) {
  std::vector<ItemGrad*> out;
  out.reserve(items.size());
  for (auto& item : items) out.push_back(&item);
  return out;
}

}  // namespace

JointLoss joint_loss(const PairBatch& b_txt, const PairBatch& b_multi, const LossConfig& config) {
  config.validate(/*require_positive_weight=*/false);
  require(!b_txt.empty() || !b_multi.empty(), "both batches empty");

  JointLoss out;
  const double tau = config.tau;
  auto core = [tau](const SimilarityMatrix& s) { return info_nce(s, tau); };

  if (!b_txt.empty()) {
    check_pair_batch(b_txt);
    out.grad_txt.queries = zeros_like(b_txt.queries);
    out.grad_txt.passages = zeros_like(b_txt.passages);
    auto g_right = as_ptrs(out.grad_txt.passages);
    const auto terms =
        joint_terms(b_txt.queries, as_ptrs(b_txt.passages), core, config, config.weights[0],
                    config.weights[1], config.weights[2], out.grad_txt.queries, g_right);
    out.terms[0] = terms.nce_dense;
    out.terms[1] = terms.nce_late;
    out.terms[2] = terms.kl;
  }
  if (!b_multi.empty()) {
    check_pair_batch(b_multi);
    out.grad_multi.queries = zeros_like(b_multi.queries);
    out.grad_multi.passages = zeros_like(b_multi.passages);
    auto g_right = as_ptrs(out.grad_multi.passages);
    const auto terms =
        joint_terms(b_multi.queries, as_ptrs(b_multi.passages), core, config, config.weights[3],
                    config.weights[4], config.weights[5], out.grad_multi.queries, g_right);
    out.terms[3] = terms.nce_dense;
    out.terms[4] = terms.nce_late;
    out.terms[5] = terms.kl;
  }
  for (std::size_t t = 0; t < 6; ++t) out.value += config.weights[t] * out.terms[t];
  if (!std::isfinite(out.value)) throw NumericError("non-finite joint loss");
  return out;
}

JointHardNegativeLoss joint_loss_hard_negatives(const HardNegativeBatch& b_txt,
                                                const HardNegativeBatch& b_multi,
                                                const LossConfig& config) {
  config.validate(/*require_positive_weight=*/false);
  require(!b_txt.empty() || !b_multi.empty(), "both batches empty");

  JointHardNegativeLoss out;
  const double tau = config.tau;

  auto run_batch = [&](const HardNegativeBatch& batch, std::size_t term_base,
                       HardNegativeBatchGrad& grad) {
    const std::size_t m = batch.negatives_per_entry();
    auto core = [tau, m](const SimilarityMatrix& s) {
      return info_nce_hard_negatives_scores(s, m, tau);
    };
    grad.queries = zeros_like(batch.queries);
    grad.positives = zeros_like(batch.positives);
    for (const auto& negs : batch.negatives) grad.negatives.push_back(zeros_like(negs));

    const auto columns = hard_negative_columns(batch, m);
    std::vector<ItemGrad*> g_right;
    g_right.reserve(columns.size());
    for (auto& g : grad.positives) g_right.push_back(&g);
    for (auto& negs : grad.negatives) {
      for (auto& g : negs) g_right.push_back(&g);
    }
    const auto terms =
        joint_terms(batch.queries, columns, core, config, config.weights[term_base],
                    config.weights[term_base + 1], config.weights[term_base + 2], grad.queries,
                    g_right);
    out.terms[term_base] = terms.nce_dense;
    out.terms[term_base + 1] = terms.nce_late;
    out.terms[term_base + 2] = terms.kl;
  };

  if (!b_txt.empty()) run_batch(b_txt, 0, out.grad_txt);
  if (!b_multi.empty()) run_batch(b_multi, 3, out.grad_multi);
  for (std::size_t t = 0; t < 6; ++t) out.value += config.weights[t] * out.terms[t];
  if (!std::isfinite(out.value)) throw NumericError("non-finite joint loss");
  return out;
}

TextMatchingLoss text_matching_loss(const StsBatch& batch, const LossConfig& config) {
  config.validate(/*require_positive_weight=*/false);
  require(!batch.pairs.empty(), "empty batch");

  std::vector<std::size_t> scored, unscored;
  for (std::size_t i = 0; i < batch.pairs.size(); ++i) {
    (batch.pairs[i].ground_truth ? scored : unscored).push_back(i);
  }

  TextMatchingLoss out;
  out.grad_a = zeros_like([&] {
    std::vector<ItemEmbedding> items;
    for (const auto& p : batch.pairs) items.push_back(p.a);
    return items;
  }());
  out.grad_b = zeros_like([&] {
    std::vector<ItemEmbedding> items;
    for (const auto& p : batch.pairs) items.push_back(p.b);
    return items;
  }());

  const double tau = config.tau;
  const double w_dense = config.weights[0];
  const double w_late = config.weights[1];
  const double w_kl = config.weights[2];

  auto gather = [&](const std::vector<std::size_t>& idx, bool a_side) {
    std::vector<const ItemEmbedding*> items;
    items.reserve(idx.size());
    for (std::size_t i : idx) items.push_back(a_side ? &batch.pairs[i].a : &batch.pairs[i].b);
    return items;
  };

  // CoSENT over the scored pairs, both modes.
  if (!scored.empty()) {
    std::vector<double> zeta;
    zeta.reserve(scored.size());
    for (std::size_t i : scored) zeta.push_back(*batch.pairs[i].ground_truth);

    if (w_dense != 0.0) {
      std::vector<std::vector<double>> l, r;
      for (std::size_t i : scored) {
        l.push_back(batch.pairs[i].a.dense);
        r.push_back(batch.pairs[i].b.dense);
      }
      auto diag_cosent = [&zeta, tau](const SimilarityMatrix& s) {
        std::vector<double> sims(s.rows());
        for (std::size_t i = 0; i < s.rows(); ++i) sims[i] = s.at(i, i);
        auto core = cosent_scores(sims, zeta, tau);
        LossValueAndGrad lifted;
        lifted.value = core.value;
        lifted.grad = Matrix(s.rows(), s.cols());
        for (std::size_t i = 0; i < s.rows(); ++i) lifted.grad.at(i, i) = core.grad.at(0, i);
        return lifted;
      };
      auto sets = matryoshka_over_sets(l, r, diag_cosent, config);
      out.terms[0] += sets.value;
      for (std::size_t n = 0; n < scored.size(); ++n) {
        const std::size_t i = scored[n];
        for (std::size_t x = 0; x < sets.grad_left[n].size(); ++x) {
          out.grad_a[i].dense[x] += w_dense * sets.grad_left[n][x];
          out.grad_b[i].dense[x] += w_dense * sets.grad_right[n][x];
        }
      }
    }
    if (w_late != 0.0) {
      std::vector<StsPair> pairs;
      for (std::size_t i : scored) pairs.push_back(batch.pairs[i]);
      auto late = cosent(pairs, LossMode::late, tau);
      out.terms[1] += late.value;
      for (std::size_t n = 0; n < scored.size(); ++n) {
        const std::size_t i = scored[n];
        auto& ga = out.grad_a[i].multi;
        auto& gb = out.grad_b[i].multi;
        for (std::size_t x = 0; x < ga.data().size(); ++x) {
          ga.data()[x] += w_late * late.grad_a[n].multi.data()[x];
          gb.data()[x] += w_late * late.grad_b[n].multi.data()[x];
        }
      }
    }
  }

  // InfoNCE + distillation over the unscored pairs.
  if (!unscored.empty()) {
    std::vector<ItemEmbedding> left, right;
    for (std::size_t i : unscored) {
      left.push_back(batch.pairs[i].a);
      right.push_back(batch.pairs[i].b);
    }
    std::vector<ItemGrad> g_left = zeros_like(left);
    std::vector<ItemGrad> g_right = zeros_like(right);
    auto g_right_ptrs = as_ptrs(g_right);
    auto core = [tau](const SimilarityMatrix& s) { return info_nce(s, tau); };
    const auto terms = joint_terms(left, as_ptrs(std::as_const(right)), core, config, w_dense,
                                   w_late, w_kl, g_left, g_right_ptrs);
    out.terms[0] += terms.nce_dense;
    out.terms[1] += terms.nce_late;
    out.terms[2] += terms.kl;
    for (std::size_t n = 0; n < unscored.size(); ++n) {
      const std::size_t i = unscored[n];
      for (std::size_t x = 0; x < g_left[n].dense.size(); ++x) {
        out.grad_a[i].dense[x] += g_left[n].dense[x];
        out.grad_b[i].dense[x] += g_right[n].dense[x];
      }
      for (std::size_t x = 0; x < g_left[n].multi.data().size(); ++x) {
        out.grad_a[i].multi.data()[x] += g_left[n].multi.data()[x];
        out.grad_b[i].multi.data()[x] += g_right[n].multi.data()[x];
      }
    }
  }

  out.value = w_dense * out.terms[0] + w_late * out.terms[1] + w_kl * out.terms[2];
  if (!std::isfinite(out.value)) throw NumericError("non-finite text-matching loss");
  return out;
}

}  // namespace latesim
