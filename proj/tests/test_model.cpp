#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "decode/model.hpp"
#include "test_util.hpp"

using namespace decode;
using decode::testing::random_sequence;
using decode::testing::small_model;

TEST(Model, InitialStatesDependOnMarkOnly) {
  const auto m = small_model(3, 1);
  PlainOps ops = m.plain_ops();
  const int marks[3] = {1, 2, 1};
  const Matrix h = m.initial_states(ops, marks);
  EXPECT_EQ(h.row(0), h.row(2));
  EXPECT_NE(h.row(0), h.row(1));

  const auto one = small_model(1, 2);
  PlainOps o1 = one.plain_ops();
  const int zeros[2] = {0, 0};
  const Matrix h1 = one.initial_states(o1, zeros);
  EXPECT_EQ(h1.row(0), h1.row(1));
}

TEST(Model, GroundIntensityCombinators) {
  const double zero2[2] = {0.0, 0.0};
  EXPECT_NEAR(ground_intensity(Combinator::linear, zero2), 2 * std::log(2.0), 1e-12);
  const double cancel[2] = {5.0, -5.0};
  EXPECT_NEAR(ground_intensity(Combinator::nonlinear, cancel), std::log(2.0), 1e-12);
  const double tiny[1] = {-40.0};
  const double lam = ground_intensity(Combinator::linear, tiny);
  EXPECT_GT(lam, 0.0);
  EXPECT_NEAR(lam, 4.248354255291589e-18, 1e-30);
  EXPECT_EQ(ground_intensity(Combinator::linear, {}), 0.0);
  EXPECT_NEAR(ground_intensity(Combinator::nonlinear, {}), std::log(2.0), 1e-15);
}

TEST(Model, MarkProbability) {
  const Vector u = mark_probability(Matrix::Zero(2, 3), 3);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(u(k), 1.0 / 3.0, 1e-15);
  Matrix f(1, 3);
  f << std::log(1.0), std::log(2.0), std::log(3.0);
  f.array() -= 0.7;
  const Vector p = mark_probability(f, 3);
  EXPECT_NEAR(p(0), 1.0 / 6, 1e-12);
  EXPECT_NEAR(p(1), 2.0 / 6, 1e-12);
  EXPECT_NEAR(p(2), 3.0 / 6, 1e-12);
  EXPECT_NEAR(mark_probability(Matrix(0, 4), 4).sum(), 1.0, 1e-15);
}

TEST(Model, BlockPropagationMatchesPerEventSolves) {
  std::mt19937_64 rng(11);
  for (auto method : {ivp::Method::euler, ivp::Method::rk4}) {
    const auto m = small_model(3, 5);
    const auto seq = random_sequence(rng, 6, 3);
    const ivp::SolverConfig cfg{method, 4};
    const auto block = propagate(m, seq, seq.last_time() + 2.5, cfg);
    const auto each = propagate_each(m, seq, seq.last_time() + 2.5, cfg);
    ASSERT_EQ(block.size(), each.size());
    for (std::size_t i = 0; i < block.size(); ++i) {
      ASSERT_EQ(block[i].times.size(), each[i].times.size());
      for (std::size_t p = 0; p < block[i].times.size(); ++p) {
        EXPECT_NEAR(block[i].times[p], each[i].times[p], 1e-12);
      }
      EXPECT_LT((block[i].hidden - each[i].hidden).cwiseAbs().maxCoeff(), 1e-10);
      EXPECT_LT((block[i].mu - each[i].mu).cwiseAbs().maxCoeff(), 1e-10);
    }
  }
}

TEST(Model, SingleEventAndDuplicateEvents) {
  const auto m = small_model(2, 3);
  Sequence one{{{0.5, 1}}, 0.5};
  const ivp::SolverConfig cfg{ivp::Method::rk4, 8};
  const auto a = propagate(m, one, 3.0, cfg);
  const auto b = propagate_each(m, one, 3.0, cfg);
  EXPECT_LT((a[0].hidden - b[0].hidden).cwiseAbs().maxCoeff(), 1e-12);

  Sequence s1{{{0.5, 1}, {1.0, 0}}, 1.0};
  const auto r1 = propagate(m, s1, 2.0, cfg);
  const auto r2 = propagate(m, s1, 2.0, cfg);
  EXPECT_EQ(r1[0].hidden, r2[0].hidden);
  EXPECT_EQ(r1[1].mu, r2[1].mu);
}

TEST(Model, InfluenceExport) {
  auto m = small_model(2, 4);
  decode::testing::zero_network(m, m.intensity_net());
  Sequence s{{{1.0, 0}, {2.0, 1}}, 2.0};
  const std::vector<double> grid{0.5, 1.0, 1.5, 2.5, 3.0};
  const auto rows = influence_export(m, s, 7, grid, {ivp::Method::rk4, 8});
  EXPECT_EQ(rows.size(), 4u + 2u);
  for (const auto& r : rows) {
    EXPECT_EQ(r.mu, 0.0);
    EXPECT_EQ(r.seq_id, 7);
  }
  const std::vector<double> early{0.1, 0.9};
  EXPECT_TRUE(influence_export(m, s, 0, early, {}).empty());

  std::ostringstream csv;
  write_trajectory_csv(csv, rows, 2);
  EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')), "seq_id,event_idx,mark,t,mu,fhat_0,fhat_1");
}

TEST(Model, CheckpointRoundTrip) {
  const auto m = small_model(3, 9, Combinator::nonlinear);
  const auto path = std::filesystem::temp_directory_path() / "decode_model_ckpt.json";
  m.save(path);
  const auto back = DecOdeModel::load(path);
  std::filesystem::remove(path);
  EXPECT_EQ(back.combinator(), Combinator::nonlinear);
  ASSERT_EQ(back.parameters().size(), m.parameters().size());
  for (std::size_t s = 0; s < m.parameters().size(); ++s) {
    EXPECT_EQ(back.parameters()[s].value, m.parameters()[s].value);
  }
}
