#include <gtest/gtest.h>

#include <cmath>

#include "dbsfm/autodiff.hpp"
#include "dbsfm/error.hpp"
#include "test_util.hpp"

using namespace dbsfm;

TEST(GradCheck, ReconstructionLossMatchesFiniteDifferences) {
  const auto pr = testutil::toy_recon_problem(5);
  const ParamStore params = testutil::randomized_params(pr.cfg, 17);
  ParamStore grads;
  pr.loss(params, &grads);
  const auto res = testutil::finite_difference_check(
      params, grads, [&](const ParamStore& p) { return pr.loss(p); });
  EXPECT_GT(res.checked, 100u);
  EXPECT_LT(res.max_rel_error, 1e-5) << "worst tensor " << res.worst_tensor;
}

TEST(GradCheck, RegressionLossMatchesFiniteDifferences) {
  auto cfg = testutil::toy_config();
  cfg.seq_positions = 4;
  const ParamStore params = testutil::randomized_params(cfg, 23);
  Rng rng(2);
  std::normal_distribution<double> nd;
  Matrix x(6, 3), y(6, 1);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = nd(rng);
  for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = nd(rng);
  auto loss = [&](const ParamStore& p, ParamStore* g) {
    ad::Tape tape;
    auto latent = encode(tape, p, cfg, x);
    auto pred = regress(tape, p, cfg, latent, "dyskinesia");
    auto l = ad::squared_error(tape, pred, y, 6.0);
    const double v = tape.value(l)(0, 0);
    if (g) {
      tape.backward(l);
      *g = tape.gradients(p);
    }
    return v;
  };
  ParamStore grads;
  loss(params, &grads);
  const auto res = testutil::finite_difference_check(params, grads, [&](const ParamStore& p) { return loss(p, nullptr); });
  EXPECT_LT(res.max_rel_error, 1e-5) << "worst tensor " << res.worst_tensor;
  // recon and the other symptom's head are not on this path
  EXPECT_TRUE(grads.at("recon.w").as_matrix().isZero(0.0));
  EXPECT_TRUE(grads.at("head.bradykinesia.w1").as_matrix().isZero(0.0));
}

TEST(Autodiff, ZeroResidualGivesZeroGradient) {
  auto pr = testutil::toy_recon_problem(8);
  const ParamStore params = testutil::randomized_params(pr.cfg, 3);
  // make the targets equal the model's own prediction
  ad::Tape tape;
  auto pred = reconstruct(tape, params, pr.cfg, encode(tape, params, pr.cfg, pr.inputs));
  pr.targets = tape.value(pred);
  ParamStore grads;
  EXPECT_EQ(pr.loss(params, &grads), 0.0);
  for (const auto& n : grads.names())
    for (double g : grads.at(n).values) EXPECT_EQ(g, 0.0) << n;
}

TEST(Autodiff, ScalingTheLossScalesGradients) {
  const auto pr = testutil::toy_recon_problem(9);
  auto doubled = pr;
  doubled.weights *= 2.0;
  const ParamStore params = testutil::randomized_params(pr.cfg, 4);
  ParamStore g1, g2;
  const double l1 = pr.loss(params, &g1);
  const double l2 = doubled.loss(params, &g2);
  EXPECT_NEAR(l2, 2.0 * l1, 1e-12);
  for (const auto& n : g1.names())
    for (std::size_t i = 0; i < g1.at(n).values.size(); ++i)
      EXPECT_NEAR(g2.at(n).values[i], 2.0 * g1.at(n).values[i], 1e-12);
}

TEST(Autodiff, TapeMisuse) {
  ad::Tape empty;
  EXPECT_THROW(empty.backward(ad::Var{}), StateError);

  ad::Tape t;
  auto a = t.constant(Matrix::Ones(1, 1));
  auto s = ad::scale(t, a, 2.0);
  t.backward(s);
  EXPECT_THROW(t.backward(s), StateError);

  ad::Tape t2;
  auto m = t2.constant(Matrix::Ones(2, 2));
  EXPECT_THROW(t2.backward(m), ValidationError);
}

TEST(Autodiff, ElementaryGradients) {
  ParamStore s;
  s.add("a", {2, 2}).values = {1, -2, 3, 0.5};
  ad::Tape t;
  auto a = t.param(s, "a");
  auto r = ad::relu(t, a);
  auto y = ad::squared_error(t, r, Matrix::Zero(2, 2), 1.0);  // sum relu(a)^2
  EXPECT_DOUBLE_EQ(t.value(y)(0, 0), 1 + 9 + 0.25);
  t.backward(y);
  const auto g = t.gradients(s);
  EXPECT_EQ(g.at("a").values, (std::vector<double>{2, 0, 6, 1}));
}

TEST(Softmax, RowsSumToOneAndAreShiftInvariant) {
  Matrix logits(3, 4);
  logits << 1, 2, 3, 4, -1000, 0, 1000, 2, 0, 0, 0, 0;
  const Matrix p = ad::softmax_rows(logits);
  for (Eigen::Index r = 0; r < 3; ++r) {
    EXPECT_NEAR(p.row(r).sum(), 1.0, 1e-12);
    EXPECT_TRUE((p.row(r).array() >= 0.0).all());
  }
  EXPECT_NEAR(p(2, 0), 0.25, 1e-15);
  const Matrix shifted = ad::softmax_rows((logits.array() + 7.0).matrix());
  EXPECT_TRUE(p.isApprox(shifted, 1e-12));
  EXPECT_NEAR(p(1, 2), 1.0, 1e-12);
}

TEST(LayerNorm, ZeroMeanUnitVariance) {
  Rng rng(6);
  std::normal_distribution<double> nd(3.0, 5.0);
  Matrix x(5, 16);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = nd(rng);
  const Matrix y = ad::normalize_rows(x, 1e-5);
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    const double m = y.row(r).mean();
    const double v = (y.row(r).array() - m).square().mean();
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, 1.0, 1e-5);
  }
}
