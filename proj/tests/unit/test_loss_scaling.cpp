#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dbsfm/error.hpp"
#include "dbsfm/loss_scaling.hpp"
#include "dbsfm/rng.hpp"

using namespace dbsfm;

namespace {

double population_std_log10(const std::vector<double>& f) {
  double m = 0.0;
  for (double v : f) m += std::log10(v);
  m /= f.size();
  double s = 0.0;
  for (double v : f) s += (std::log10(v) - m) * (std::log10(v) - m);
  return std::sqrt(s / f.size());
}

}  // namespace

TEST(MeanLogProfile, Examples) {
  Matrix one(1, 3);
  one << 1, 2, 3;
  EXPECT_EQ(mean_log_profile(one).p, (std::vector<double>{1, 2, 3}));

  Matrix two(2, 2);
  two << 0, 0, 2, 4;
  EXPECT_EQ(mean_log_profile(two).p, (std::vector<double>{1, 2}));

  EXPECT_THROW(mean_log_profile(Matrix(0, 3)), ValidationError);
}

TEST(MeanLogProfile, MonteCarloRecoversPowerLaw) {
  const auto f = frequency_grid(1, 124);
  Rng rng(11);
  std::normal_distribution<double> eps(0.0, 0.01);
  Matrix P(1000, static_cast<Eigen::Index>(f.size()));
  for (Eigen::Index i = 0; i < P.rows(); ++i)
    for (Eigen::Index j = 0; j < P.cols(); ++j) P(i, j) = 3.0 - std::log10(f[static_cast<std::size_t>(j)]) + eps(rng);
  const auto p = mean_log_profile(P).p;
  for (std::size_t j = 0; j < f.size(); ++j) EXPECT_NEAR(p[j], 3.0 - std::log10(f[j]), 0.01);
}

TEST(ScalingVector, Examples) {
  const std::vector<double> f{1, 10, 100};
  const auto k0 = scaling_vector(MeanLogProfile{{0, 0, 0}}, f);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(k0.k[i], static_cast<double>(i), 1e-15);
  EXPECT_EQ(k0.hour_weight, 0.0);

  const auto k1 = scaling_vector(MeanLogProfile{{3, 2, 1}}, f);
  EXPECT_NEAR(k1.k[0], 2.0, 1e-15);
  EXPECT_NEAR(k1.k[1], 3.0, 1e-15);
  EXPECT_NEAR(k1.k[2], 4.0, 1e-15);
}

TEST(ScalingVector, StrictlyIncreasing) {
  const auto f = frequency_grid(1, 124);
  double c = 0.0;
  for (double v : f) c -= std::log10(v);
  c /= f.size();
  const auto k = scaling_vector(MeanLogProfile{std::vector<double>(f.size(), c)}, f).k;
  for (std::size_t i = 1; i < k.size(); ++i) EXPECT_GT(k[i], k[i - 1]);
  for (std::size_t i = 0; i < k.size(); ++i) EXPECT_NEAR(k[i], std::log10(f[i]) + c, 1e-12);
}

TEST(ScalingVector, RejectsSubUnityFrequency) {
  EXPECT_THROW(scaling_vector(MeanLogProfile{{0, 0}}, std::vector<double>{0.5, 1.0}), DomainError);
  EXPECT_THROW(alignment_residual(MeanLogProfile{{0, 0}}, std::vector<double>{0.0, 1.0}), DomainError);
}

TEST(ScalingVector, ExtendedAppendsHourWeight) {
  const auto k = scaling_vector(MeanLogProfile{{0, 0}}, std::vector<double>{1, 10}, 0.25);
  EXPECT_EQ(k.extended(), (std::vector<double>{0.0, 1.0, 0.25}));
}

TEST(AlignmentResidual, Examples) {
  const auto f = frequency_grid(1, 124);
  std::vector<double> exact(f.size()), beta2(f.size()), flat(f.size(), 1.5);
  for (std::size_t i = 0; i < f.size(); ++i) {
    exact[i] = 5.0 - std::log10(f[i]);
    beta2[i] = 5.0 - 2.0 * std::log10(f[i]);
  }
  EXPECT_LT(alignment_residual(MeanLogProfile{exact}, f), 1e-9);
  const double oracle = population_std_log10(f);
  EXPECT_NEAR(alignment_residual(MeanLogProfile{beta2}, f), oracle, 1e-12);
  EXPECT_NEAR(alignment_residual(MeanLogProfile{flat}, f), oracle, 1e-12);
  EXPECT_NEAR(oracle, 0.40547, 1e-4);
}

TEST(ScaledMaskedMae, ZeroResidual) {
  Matrix t = Matrix::Random(4, 5);
  const std::vector<double> w(5, 1.0);
  const std::vector<std::size_t> mask{0, 2};
  EXPECT_EQ(scaled_masked_mae(t, t, w, mask), 0.0);
}

TEST(ScaledMaskedMae, HandExample) {
  Matrix target(1, 125), pred(1, 125);
  for (int j = 0; j < 125; ++j) target(0, j) = pred(0, j) = j + 1;
  std::vector<double> w(125, 0.0);
  w[3] = 1.0;
  w[7] = 2.0;
  pred(0, 3) -= 1.0;
  pred(0, 7) -= 2.0;
  const std::vector<std::size_t> mask{0};
  EXPECT_NEAR(scaled_masked_mae(target, pred, w, mask), 0.04, 1e-15);
}

TEST(ScaledMaskedMae, UnitWeightsEqualPlainMae) {
  Rng rng(3);
  std::normal_distribution<double> nd;
  Matrix t(6, 125), p(6, 125);
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    t.data()[i] = nd(rng);
    p.data()[i] = nd(rng);
  }
  const std::vector<std::size_t> mask{1, 4, 5};
  double plain = 0.0;
  for (auto r : mask)
    for (int j = 0; j < 125; ++j) plain += std::abs(t(static_cast<Eigen::Index>(r), j) - p(static_cast<Eigen::Index>(r), j));
  plain /= 3 * 125;
  ScalingVector k{frequency_grid(1, 124), std::vector<double>(124, 1.0), 1.0};
  EXPECT_NEAR(scaled_masked_mae(t, p, k, mask), plain, 1e-12);
}

TEST(ScaledMaskedMae, HomogeneityAndUnmaskedIgnored) {
  Matrix t = Matrix::Zero(3, 4), p(3, 4);
  p << 1, -2, 3, -4, 100, 100, 100, 100, 0.5, 0.5, 0.5, 0.5;
  const std::vector<double> w{1, 2, 3, 4};
  const std::vector<std::size_t> mask{0, 2};
  const double base = scaled_masked_mae(t, p, w, mask);
  Matrix p3 = -3.0 * p;
  EXPECT_NEAR(scaled_masked_mae(t, p3, w, mask), 3.0 * base, 1e-12);
  Matrix p_changed = p;
  p_changed.row(1).setConstant(-7.0);
  EXPECT_EQ(scaled_masked_mae(t, p_changed, w, mask), base);
}

TEST(ScaledMaskedMae, UnitErrorAtSingleBinIsLinearInK) {
  const auto f = frequency_grid(1, 124);
  const auto k = scaling_vector(MeanLogProfile{std::vector<double>(124, 0.7)}, f, 0.0);
  Matrix t = Matrix::Zero(2, 125);
  const std::vector<std::size_t> mask{0, 1};
  for (std::size_t bin : {0u, 19u, 99u}) {
    Matrix p = t;
    p(0, static_cast<Eigen::Index>(bin)) = 1.0;
    EXPECT_NEAR(scaled_masked_mae(t, p, k, mask), k.k[bin] / 250.0, 1e-15);
  }
}

TEST(ScaledMaskedMae, Errors) {
  Matrix t = Matrix::Zero(2, 3);
  const std::vector<double> w(3, 1.0);
  EXPECT_THROW(scaled_masked_mae(t, t, w, std::vector<std::size_t>{}), ValidationError);
  EXPECT_THROW(scaled_masked_mae(t, Matrix::Zero(2, 4), w, std::vector<std::size_t>{0}), ValidationError);
  EXPECT_THROW(scaled_masked_mae(t, t, std::vector<double>(2, 1.0), std::vector<std::size_t>{0}), ValidationError);
}

TEST(SynthLogPsd, Examples) {
  AperiodicModel flat{0.0, 2.5, {}};
  for (double v : synth_log_psd(flat, std::vector<double>{1, 5, 50})) EXPECT_EQ(v, 2.5);

  AperiodicModel pl{1.0, 0.0, {}};
  const auto v = synth_log_psd(pl, std::vector<double>{1, 10, 100});
  EXPECT_NEAR(v[0], 0.0, 1e-15);
  EXPECT_NEAR(v[1], -1.0, 1e-15);
  EXPECT_NEAR(v[2], -2.0, 1e-15);

  AperiodicModel peak{1.0, 0.0, {{20.0, 0.5, 2.0}}};
  EXPECT_NEAR(synth_log_psd(peak, std::vector<double>{20})[0], -std::log10(20.0) + 0.5, 1e-15);
  EXPECT_NEAR(synth_log_psd(peak, std::vector<double>{20})[0], -0.801, 1e-3);
}

TEST(FrequencyGrid, IntegerBins) {
  const auto f = frequency_grid(1, 124);
  ASSERT_EQ(f.size(), 124u);
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_EQ(f[i], static_cast<double>(i + 1));
}
