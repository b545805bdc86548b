#include <doctest.h>

#include <cmath>

#include "latesim/gradcheck.hpp"
#include "latesim/losses.hpp"
#include "test_helpers.hpp"

using namespace latesim;
using namespace latesim::testing;

namespace {

Matrix grid(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(rows.size(), rows.begin()->size());
  std::size_t i = 0;
  for (const auto& row : rows) {
    std::size_t j = 0;
    for (const double v : row) m.at(i, j++) = v;
    ++i;
  }
  return m;
}

ItemEmbedding random_item(Rng& rng, std::size_t dense_dim, std::size_t tokens,
                          std::size_t multi_dim) {
  ItemEmbedding item;
  item.dense.resize(dense_dim);
  for (auto& v : item.dense) v = rng.normal();
  item.multi = Matrix(tokens, multi_dim);
  for (auto& v : item.multi.data()) v = rng.normal();
  return item;
}

}  // namespace

TEST_CASE("log_softmax_row examples") {
  CHECK(log_softmax_row(grid({{1.0, 0.0}}), 1.0, 0, 0) ==
        doctest::Approx(-0.31326).epsilon(1e-4));
  const auto uniform = grid({{0.7, 0.7, 0.7}});
  CHECK(log_softmax_row(uniform, 0.02, 0, 1) == doctest::Approx(-std::log(3.0)));
  // stability: huge scores must not overflow
  const double stable = log_softmax_row(grid({{1000.0, 0.0}}), 1.0, 0, 0);
  CHECK(std::isfinite(stable));
  CHECK(stable == doctest::Approx(0.0).epsilon(1e-6));
  CHECK_THROWS_AS(log_softmax_row(grid({{std::nan(""), 0.0}}), 1.0, 0, 0), NumericError);
}

TEST_CASE("info_nce examples") {
  const auto result = info_nce(grid({{1.0, 0.0}, {0.0, 1.0}}), 1.0);
  CHECK(result.value == doctest::Approx(0.62652).epsilon(1e-4));
  CHECK(result.value == doctest::Approx(2.0 * std::log(1.0 + std::exp(-1.0))));

  // perfectly separated limit
  const auto separated = info_nce(grid({{50.0, 0.0}, {0.0, 50.0}}), 0.02);
  CHECK(separated.value < 1e-9);
  CHECK(separated.value >= 0.0);

  CHECK_THROWS_AS(info_nce(grid({{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}}), 1.0), DataError);
  CHECK_THROWS_AS(info_nce(grid({{1.0, 0.0}, {0.0, 1.0}}), 0.0), DataError);
}

TEST_CASE("info_nce gradient matches finite differences on the worked example") {
  Matrix s = grid({{1.0, 0.0}, {0.0, 1.0}});
  const auto result = info_nce(s, 1.0);
  const double h = 1e-5;
  for (std::size_t idx = 0; idx < s.data().size(); ++idx) {
    const double saved = s.data()[idx];
    s.data()[idx] = saved + h;
    const double up = info_nce(s, 1.0).value;
    s.data()[idx] = saved - h;
    const double down = info_nce(s, 1.0).value;
    s.data()[idx] = saved;
    const double fd = (up - down) / (2.0 * h);
    CHECK(std::fabs(result.grad.data()[idx] - fd) /
              std::max({std::fabs(fd), std::fabs(result.grad.data()[idx]), 1e-3}) <
          1e-4);
  }
}

TEST_CASE("info_nce is invariant under row shifts and monotone in entries") {
  Rng rng(31);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = 2 + rng.below(4);
    Matrix s(n, n);
    for (auto& v : s.data()) v = 2.0 * rng.uniform() - 1.0;
    const double tau = 0.25;
    const auto base = info_nce(s, tau);

    Matrix shifted = s;
    const std::size_t row = rng.below(n);
    const double c = 3.0 * rng.uniform() - 1.5;
    for (std::size_t j = 0; j < n; ++j) shifted.at(row, j) += c;
    CHECK(info_nce(shifted, tau).value == doctest::Approx(base.value).epsilon(1e-9));

    // strictly decreasing in the diagonal, non-decreasing off it
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) {
          CHECK(base.grad.at(i, j) < 0.0);
        } else {
          CHECK(base.grad.at(i, j) >= 0.0);
        }
      }
    }
  }
}

TEST_CASE("hard-negative InfoNCE score examples") {
  // k=1, m=0: the denominator is the positive itself
  const auto lone = info_nce_hard_negatives_scores(grid({{0.83}}), 0, 1.0);
  CHECK(lone.value == doctest::Approx(0.0));

  // k=1, m=1, s(q,p)=1, s(q,n)=0
  const auto one_neg = info_nce_hard_negatives_scores(grid({{1.0, 0.0}}), 1, 1.0);
  CHECK(one_neg.value == doctest::Approx(0.31326).epsilon(1e-4));
}

TEST_CASE("hard-negative InfoNCE matches a term-by-term transcription of the formula") {
  Rng rng(37);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 1 + rng.below(3);
    const std::size_t m = rng.below(3);
    const double tau = 0.5 + rng.uniform();
    Matrix scores(k, k * (1 + m));
    for (auto& v : scores.data()) v = 2.0 * rng.uniform() - 1.0;

    // direct evaluation of the displayed formula, no max subtraction
    double expected = 0.0;
    for (std::size_t r = 0; r < k; ++r) {
      double denom = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        denom += std::exp(scores.at(r, i) / tau);
        for (std::size_t j = 0; j < m; ++j) {
          denom += std::exp(scores.at(r, k + i * m + j) / tau);
        }
      }
      expected += -std::log(std::exp(scores.at(r, r) / tau) / denom);
    }

    const auto result = info_nce_hard_negatives_scores(scores, m, tau);
    CHECK(result.value == doctest::Approx(expected).epsilon(1e-9));
  }
}

TEST_CASE("hard-negative InfoNCE with m=0 reduces to info_nce") {
  Rng rng(41);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t k = 2 + rng.below(4);
    Matrix s(k, k);
    for (auto& v : s.data()) v = 2.0 * rng.uniform() - 1.0;
    const double tau = 0.02 + rng.uniform();
    CHECK(info_nce_hard_negatives_scores(s, 0, tau).value ==
          doctest::Approx(info_nce(s, tau).value).epsilon(1e-12));
  }
}

TEST_CASE("hard-negative InfoNCE over embeddings, both modes") {
  Rng rng(43);
  for (const LossMode mode : {LossMode::dense, LossMode::late}) {
    HardNegativeBatch batch;
    for (int i = 0; i < 2; ++i) {
      batch.queries.push_back(random_item(rng, 6, 2, 5));
      batch.positives.push_back(random_item(rng, 6, 2, 5));
      batch.negatives.push_back({random_item(rng, 6, 2, 5)});
    }
    const auto result = info_nce_hard_negatives(batch, mode, 0.5);
    CHECK(std::isfinite(result.value));
    CHECK(result.value > 0.0);
    CHECK(result.score_grad.rows() == 2);
    CHECK(result.score_grad.cols() == 4);
  }

  Rng r2(44);
  HardNegativeBatch ragged;
  ragged.queries = {random_item(r2, 4, 1, 3), random_item(r2, 4, 1, 3)};
  ragged.positives = {random_item(r2, 4, 1, 3), random_item(r2, 4, 1, 3)};
  ragged.negatives = {{random_item(r2, 4, 1, 3)}, {}};
  CHECK_THROWS_AS(info_nce_hard_negatives(ragged, LossMode::dense, 1.0), DataError);

  CHECK_THROWS_AS(info_nce_hard_negatives(HardNegativeBatch{}, LossMode::dense, 1.0), DataError);
}

TEST_CASE("cosent score examples") {
  // single pair: no ordered pair, empty violation sum
  const double s1[] = {0.4};
  const double z1[] = {1.0};
  CHECK(cosent_scores(s1, z1, 1.0).value == doctest::Approx(0.0));

  // two pairs, ordering matched with margin 1
  const double s2[] = {1.0, 0.0};
  const double z2[] = {2.0, 1.0};
  CHECK(cosent_scores(s2, z2, 1.0).value == doctest::Approx(0.31326).epsilon(1e-4));

  // all ground truths equal: ln(1) = 0, not an error
  const double s3[] = {0.3, 0.9, -0.2};
  const double z3[] = {1.0, 1.0, 1.0};
  CHECK(cosent_scores(s3, z3, 1.0).value == doctest::Approx(0.0));
}

TEST_CASE("cosent is invariant under constant shifts of the model scores") {
  Rng rng(47);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = 2 + rng.below(4);
    std::vector<double> s(n), z(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = 2.0 * rng.uniform() - 1.0;
      z[i] = rng.uniform();
    }
    const double base = cosent_scores(s, z, 0.3).value;
    const double c = 2.0 * rng.uniform() - 1.0;
    for (auto& v : s) v += c;
    CHECK(cosent_scores(s, z, 0.3).value == doctest::Approx(base).epsilon(1e-9));
  }
}

TEST_CASE("cosent over embeddings: gradient on 4 random pairs vs finite differences") {
  Rng rng(53);
  std::vector<StsPair> pairs;
  for (int i = 0; i < 4; ++i) {
    StsPair pair;
    pair.a = random_item(rng, 6, 2, 4);
    pair.b = random_item(rng, 6, 2, 4);
    pair.ground_truth = double(i) + 0.3 * rng.uniform();
    pairs.push_back(std::move(pair));
  }
  const double tau = 0.5;
  const auto result = cosent(pairs, LossMode::dense, tau);
  const double h = 1e-5;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    for (std::size_t x = 0; x < pairs[p].a.dense.size(); ++x) {
      const double saved = pairs[p].a.dense[x];
      pairs[p].a.dense[x] = saved + h;
      const double up = cosent(pairs, LossMode::dense, tau).value;
      pairs[p].a.dense[x] = saved - h;
      const double down = cosent(pairs, LossMode::dense, tau).value;
      pairs[p].a.dense[x] = saved;
      const double fd = (up - down) / (2.0 * h);
      const double analytic = result.grad_a[p].dense[x];
      CHECK(std::fabs(analytic - fd) / std::max({std::fabs(fd), std::fabs(analytic), 1e-3}) <
            1e-4);
    }
  }
  CHECK_THROWS_AS(cosent({}, LossMode::dense, 1.0), DataError);
}

TEST_CASE("kl_distillation examples") {
  const auto same = kl_distillation(grid({{0.6, 0.1}, {0.2, 0.9}}),
                                    grid({{0.6, 0.1}, {0.2, 0.9}}), 0.5);
  CHECK(same.value == doctest::Approx(0.0));

  const auto example = kl_distillation(grid({{1.0, 0.0}}), grid({{0.0, 1.0}}), 1.0);
  CHECK(example.value == doctest::Approx(0.46212).epsilon(1e-4));

  CHECK_THROWS_AS(kl_distillation(grid({{1.0, 0.0}}), grid({{0.0}}), 1.0), DataError);
}

TEST_CASE("kl_distillation is non-negative on random inputs") {
  Rng rng(59);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t rows = 1 + rng.below(4);
    const std::size_t cols = 2 + rng.below(5);
    Matrix sd(rows, cols), sl(rows, cols);
    for (auto& v : sd.data()) v = 2.0 * rng.uniform() - 1.0;
    for (auto& v : sl.data()) v = 2.0 * rng.uniform() - 1.0;
    CHECK(kl_distillation(sd, sl, 0.1).value >= -1e-9);
  }
}

TEST_CASE("matryoshka wrap with a degenerate schedule equals the base loss") {
  Rng rng(61);
  PairBatch batch;
  for (int i = 0; i < 3; ++i) {
    batch.queries.push_back(random_item(rng, 8, 1, 2));
    batch.passages.push_back(random_item(rng, 8, 1, 2));
  }
  LossConfig config;
  config.tau = 0.5;
  config.truncation_dims = {8};

  const auto wrapped = matryoshka_info_nce(batch, config);

  // base loss on the full-dimension similarity grid
  std::vector<std::vector<double>> left, right;
  for (const auto& q : batch.queries) left.push_back(q.dense);
  for (const auto& p : batch.passages) right.push_back(p.dense);
  auto unit = [](std::vector<double> v) {
    double sum = 0.0;
    for (double x : v) sum += x * x;
    for (auto& x : v) x /= std::sqrt(sum);
    return v;
  };
  Matrix s(3, 3);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto a = unit(left[i]);
    for (std::size_t j = 0; j < 3; ++j) {
      const auto b = unit(right[j]);
      double dot = 0.0;
      for (std::size_t x = 0; x < a.size(); ++x) dot += a[x] * b[x];
      s.at(i, j) = dot;
    }
  }
  CHECK(wrapped.value == doctest::Approx(info_nce(s, config.tau).value).epsilon(1e-12));
}

TEST_CASE("matryoshka wrap doubles on a separation-preserving batch") {
  // Signal lives entirely in the first d/2 coordinates, so both truncations
  // see the same similarity grid and the two terms are equal.
  PairBatch batch;
  const std::size_t d = 8;
  for (int i = 0; i < 3; ++i) {
    ItemEmbedding item;
    item.dense.assign(d, 0.0);
    item.dense[std::size_t(i)] = 1.0;
    batch.queries.push_back(item);
    batch.passages.push_back(item);
  }
  LossConfig config;
  config.tau = 0.5;
  config.truncation_dims = {8, 4};
  config.matryoshka_weights = {1.0, 1.0};

  LossConfig full_only = config;
  full_only.truncation_dims = {8};
  full_only.matryoshka_weights = {1.0};

  const auto both = matryoshka_info_nce(batch, config);
  const auto base = matryoshka_info_nce(batch, full_only);
  CHECK(both.value == doctest::Approx(2.0 * base.value).epsilon(1e-9));
}

TEST_CASE("matryoshka wrap rejects oversized truncation dims") {
  Rng rng(63);
  PairBatch batch;
  batch.queries.push_back(random_item(rng, 4, 1, 2));
  batch.passages.push_back(random_item(rng, 4, 1, 2));
  LossConfig config;
  config.truncation_dims = {8, 4};
  CHECK_THROWS_AS(matryoshka_info_nce(batch, config), DataError);
}

TEST_CASE("joint loss term structure") {
  Rng rng(67);
  auto make_batch = [&](std::size_t n) {
    PairBatch b;
    for (std::size_t i = 0; i < n; ++i) {
      b.queries.push_back(random_item(rng, 8, 2, 5));
      b.passages.push_back(random_item(rng, 8, 2, 5));
    }
    return b;
  };
  const auto b_txt = make_batch(3);
  const auto b_multi = make_batch(3);

  LossConfig config;
  config.tau = 0.25;
  config.truncation_dims = {8};

  SUBCASE("all weights zero gives zero") {
    config.weights = {0, 0, 0, 0, 0, 0};
    CHECK(joint_loss(b_txt, b_multi, config).value == doctest::Approx(0.0));
  }

  SUBCASE("single-term reduction to dense InfoNCE") {
    config.weights = {1, 0, 0, 0, 0, 0};
    const auto single = joint_loss(b_txt, b_multi, config);
    const auto direct = matryoshka_info_nce(b_txt, config);
    CHECK(single.value == doctest::Approx(direct.value).epsilon(1e-12));
  }

  SUBCASE("joint equals the sum of six independently computed terms") {
    config.weights = {1, 1, 1, 1, 1, 1};
    const auto joint = joint_loss(b_txt, b_multi, config);
    double sum = 0.0;
    for (const double term : joint.terms) sum += term;
    CHECK(joint.value == doctest::Approx(sum).epsilon(1e-9));
    for (const double term : joint.terms) CHECK(std::isfinite(term));
    CHECK(joint.terms[2] >= -1e-9);  // KL terms stay non-negative
    CHECK(joint.terms[5] >= -1e-9);
  }

  SUBCASE("both batches empty is an error") {
    CHECK_THROWS_AS(joint_loss(PairBatch{}, PairBatch{}, config), DataError);
  }
}

TEST_CASE("loss config parsing") {
  const auto config = LossConfig::from_json(nlohmann::json::parse(
      R"({"tau": 0.02, "weights": [1,2,3,4,5,6], "truncation_dims": [16,8,4],
          "matryoshka_weights": [1.0, 0.5, 0.25]})"));
  CHECK(config.tau == 0.02);
  CHECK(config.weights[5] == 6.0);
  CHECK(config.truncation_dims.size() == 3);

  CHECK_THROWS_AS(LossConfig::from_json(nlohmann::json::parse(R"({"tau": -1})")), DataError);
  CHECK_THROWS_AS(LossConfig::from_json(nlohmann::json::parse(R"({"bogus": 1})")), DataError);
  CHECK_THROWS_AS(LossConfig::from_json(nlohmann::json::parse(R"({"weights": [1,1]})")),
                  DataError);
}

TEST_CASE("text-matching loss combines cosent and InfoNCE contributions") {
  Rng rng(71);
  StsBatch batch;
  for (int i = 0; i < 4; ++i) {
    StsPair pair;
    pair.a = random_item(rng, 8, 2, 5);
    pair.b = random_item(rng, 8, 2, 5);
    if (i < 2) pair.ground_truth = 0.2 + 0.3 * double(i);
    batch.pairs.push_back(std::move(pair));
  }
  LossConfig config;
  config.tau = 0.5;
  config.truncation_dims = {8};
  const auto mixed = text_matching_loss(batch, config);
  CHECK(std::isfinite(mixed.value));
  CHECK(mixed.terms[0] > 0.0);
  CHECK(mixed.terms[1] > 0.0);

  // scored-only and unscored-only batches both work
  StsBatch scored_only;
  scored_only.pairs = {batch.pairs[0], batch.pairs[1]};
  CHECK(std::isfinite(text_matching_loss(scored_only, config).value));
  StsBatch unscored_only;
  unscored_only.pairs = {batch.pairs[2], batch.pairs[3]};
  CHECK(std::isfinite(text_matching_loss(unscored_only, config).value));
  CHECK_THROWS_AS(text_matching_loss(StsBatch{}, config), DataError);
}

TEST_CASE("gradcheck passes for every loss") {
  const auto report = run_gradcheck(2024, 20);
  for (const auto& [name, err] : report.max_rel_error) {
    INFO(name << " max rel error " << err);
    CHECK(err < report.threshold);
  }
  CHECK(report.pass);
}
