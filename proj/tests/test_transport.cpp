#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "wnp/transport.hpp"

using namespace wnp;
using oracle::uniform;

TEST(Wasserstein1d, SinglePair) {
  EXPECT_EQ(wasserstein_1d_pow(Tensor::vector({0}), Tensor::vector({1}), 1.0).item(), 1.0);
}

TEST(Wasserstein1d, TwoPointsMatchBruteForce) {
  const double w = wasserstein_1d_pow(Tensor::vector({0, 2}), Tensor::vector({3, 1}), 2.0).item();
  EXPECT_EQ(w, 1.0);
  EXPECT_EQ(w, oracle::brute_force_ot({0, 2}, {3, 1}, 2.0));
}

TEST(Wasserstein1d, IdenticalSamplesGiveZero) {
  std::mt19937_64 rng(1);
  const Tensor a = uniform({9}, rng);
  for (double p : {1.0, 2.0, 3.7}) EXPECT_EQ(wasserstein_1d_pow(a, a, p).item(), 0.0);
}

TEST(Wasserstein1d, Errors) {
  EXPECT_THROW(wasserstein_1d_pow(Tensor::vector({1, 2}), Tensor::vector({1}), 2.0), ContractError);
  EXPECT_THROW(wasserstein_1d_pow(Tensor::zeros({0}), Tensor::zeros({0}), 2.0), ContractError);
  EXPECT_THROW(wasserstein_1d_pow(Tensor::vector({1}), Tensor::vector({1}), 0.5), ContractError);
}

TEST(Wasserstein1d, MatchesBruteForceForSmallSamples) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> len(1, 7);
  std::uniform_real_distribution<double> pow_dist(1.0, 4.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = len(rng);
    const double p = pow_dist(rng);
    const Tensor a = uniform({m}, rng, -3, 3), b = uniform({m}, rng, -3, 3);
    EXPECT_NEAR(wasserstein_1d_pow(a, b, p).item(),
                oracle::brute_force_ot(oracle::to_vec(a), oracle::to_vec(b), p), 1e-12);
  }
}

TEST(Wasserstein1d, Symmetric) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor a = uniform({11}, rng), b = uniform({11}, rng);
    EXPECT_EQ(wasserstein_1d_pow(a, b, 2.0).item(), wasserstein_1d_pow(b, a, 2.0).item());
  }
}

TEST(Wasserstein1d, TranslationGivesOffset) {
  std::mt19937_64 rng(4);
  const Tensor a = uniform({25}, rng);
  for (double c : {-1.5, 0.25, 3.0}) {
    EXPECT_NEAR(wasserstein_1d_pow(a, shift(a, c), 1.0).item(), std::abs(c), 1e-12);
  }
}

TEST(Projections, RowsAreUnitNorm) {
  const auto proj = sample_projections(200, 5, 9);
  for (std::size_t i = 0; i < proj.count(); ++i) {
    double n2 = 0.0;
    for (std::size_t j = 0; j < 5; ++j) n2 += proj.directions.at(i, j) * proj.directions.at(i, j);
    EXPECT_NEAR(std::sqrt(n2), 1.0, 1e-12);
  }
}

TEST(Projections, OneDimensionalDirectionsAreSigns) {
  const auto proj = sample_projections(50, 1, 3);
  for (double v : proj.directions.values()) EXPECT_EQ(std::abs(v), 1.0);
}

TEST(Projections, DeterministicPerSeed) {
  EXPECT_EQ(oracle::to_vec(sample_projections(10, 3, 42).directions),
            oracle::to_vec(sample_projections(10, 3, 42).directions));
  EXPECT_NE(oracle::to_vec(sample_projections(10, 3, 42).directions),
            oracle::to_vec(sample_projections(10, 3, 43).directions));
}

TEST(Projections, ZeroDimensionIsAnError) {
  EXPECT_THROW(sample_projections(3, 0, 1), ContractError);
}

TEST(Projections, SecondMomentMatchesSphereSymmetry) {
  // E[theta_1^2] = 1/d for the uniform sphere.
  const auto proj = sample_projections(20000, 4, 5);
  double m = 0.0;
  for (std::size_t i = 0; i < proj.count(); ++i) m += proj.directions.at(i, 0) * proj.directions.at(i, 0);
  EXPECT_NEAR(m / 20000.0, 0.25, 0.01);
}

TEST(EmpiricalDistribution, RejectsEmptyOrNonFinite) {
  EXPECT_THROW(EmpiricalDistribution(Tensor::zeros({0, 2})), ContractError);
  EXPECT_THROW(EmpiricalDistribution(Tensor::matrix(1, 1, {std::nan("")})), ContractError);
}

TEST(SlicedWasserstein, IdenticalCloudsGiveExactlyZero) {
  std::mt19937_64 rng(6);
  const Tensor x = uniform({30, 3}, rng);
  EXPECT_EQ(sliced_wasserstein_pow(x, x, sample_projections(40, 3, 1), 2.0).item(), 0.0);
}

TEST(SlicedWasserstein, OneDimensionEqualsDirectComputation) {
  std::mt19937_64 rng(7);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor a = uniform({15, 1}, rng), b = uniform({15, 1}, rng);
    for (double p : {1.0, 2.0, 3.0}) {
      EXPECT_NEAR(sliced_wasserstein_pow(a, b, sample_projections(5, 1, seed), p).item(),
                  wasserstein_1d_pow(a, b, p).item(), 1e-10);
    }
  }
}

TEST(SlicedWasserstein, PointMassCalibration) {
  const std::size_t m = 10;
  for (double c : {0.5, 1.0, 3.0}) {
    std::vector<double> xs(2 * m, 0.0), ys(2 * m, 0.0);
    for (std::size_t i = 0; i < m; ++i) ys[2 * i] = c;
    const double est = sliced_wasserstein_pow(Tensor::matrix(m, 2, xs), Tensor::matrix(m, 2, ys),
                                              sample_projections(1000, 2, 11), 2.0)
                           .item();
    EXPECT_NEAR(est, c * c / 2.0, 0.1 * c * c / 2.0);
  }
}

TEST(SlicedWasserstein, ShapeMismatchIsAContractError) {
  EXPECT_THROW(sliced_wasserstein_pow(Tensor::zeros({3, 2}), Tensor::zeros({4, 2}),
                                      sample_projections(2, 2, 0), 2.0),
               ContractError);
  EXPECT_THROW(sliced_wasserstein_pow(Tensor::zeros({3, 2}), Tensor::zeros({3, 3}),
                                      sample_projections(2, 2, 0), 2.0),
               ContractError);
  EXPECT_THROW(sliced_wasserstein_pow(Tensor::zeros({3, 2}), Tensor::zeros({3, 2}),
                                      sample_projections(2, 3, 0), 2.0),
               ContractError);
}

TEST(SlicedWasserstein, NonDecreasingUnderSeparation) {
  std::mt19937_64 rng(8);
  const std::size_t m = 40;
  const Tensor x = uniform({m, 2}, rng);
  const Tensor base = uniform({m, 2}, rng);
  const auto proj = sample_projections(2000, 2, 13);
  auto at_offset = [&](double c) {
    std::vector<double> y(oracle::to_vec(base));
    for (std::size_t i = 0; i < m; ++i) y[2 * i] += c;
    return sliced_wasserstein_pow(x, Tensor::matrix(m, 2, y), proj, 2.0).item();
  };
  // Per-direction variance bounds the Monte-Carlo standard error.
  auto std_err = [&](double c) {
    std::vector<double> y(oracle::to_vec(base));
    for (std::size_t i = 0; i < m; ++i) y[2 * i] += c;
    const Tensor yt = Tensor::matrix(m, 2, y);
    double s = 0, s2 = 0;
    for (std::size_t k = 0; k < 2000; ++k) {
      ProjectionSet one{Tensor::matrix(1, 2, {proj.directions.at(k, 0), proj.directions.at(k, 1)}), 0};
      const double v = sliced_wasserstein_pow(x, yt, one, 2.0).item();
      s += v;
      s2 += v * v;
    }
    const double mean = s / 2000.0;
    return std::sqrt(std::max(s2 / 2000.0 - mean * mean, 0.0) / 2000.0);
  };
  double prev = at_offset(0.0);
  for (double c = 0.25; c <= 3.0; c += 0.25) {
    const double cur = at_offset(c);
    EXPECT_GE(cur, prev - 2.0 * std_err(c)) << "offset " << c;
    prev = cur;
  }
}

TEST(SlicedWasserstein, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  const Tensor y = uniform({12, 3}, rng);
  const auto proj = sample_projections(20, 3, 17);
  for (double p : {1.5, 2.0, 3.0}) {
    const double gap = oracle::gradient_gap(
        [&](const std::vector<Tensor>& in) { return sliced_wasserstein_pow(in[0], y, proj, p); },
        {uniform({12, 3}, rng)});
    EXPECT_LE(gap, 1e-4) << "p=" << p;
  }
}

TEST(SlicedWasserstein, GradientFlowsToBothArguments) {
  std::mt19937_64 rng(10);
  const auto proj = sample_projections(10, 2, 3);
  const double gap = oracle::gradient_gap(
      [&](const std::vector<Tensor>& in) { return sliced_wasserstein_pow(in[0], in[1], proj, 2.0); },
      {uniform({8, 2}, rng), uniform({8, 2}, rng)});
  EXPECT_LE(gap, 1e-4);
}

TEST(SlicedReport, Examples) {
  std::mt19937_64 rng(11);
  const Tensor x = uniform({20, 2}, rng), y = uniform({20, 2}, rng);
  EXPECT_EQ(sliced_wasserstein_report(x, x, 30, 2.0, 1), 0.0);
  const double pow_value = sliced_wasserstein_pow(x, y, sample_projections(30, 2, 5), 2.0).item();
  EXPECT_NEAR(sliced_wasserstein_report(x, y, 30, 2.0, 5), std::sqrt(pow_value), 1e-15);
  // Point masses two apart in 1D: pow value 4, report 2.
  EXPECT_NEAR(sliced_wasserstein_report(Tensor::matrix(3, 1, {0, 0, 0}), Tensor::matrix(3, 1, {2, 2, 2}),
                                        4, 2.0, 1),
              2.0, 1e-15);
  for (std::uint64_t s = 0; s < 20; ++s) {
    EXPECT_GE(sliced_wasserstein_report(uniform({5, 3}, rng), uniform({5, 3}, rng), 3, 1.5, s), 0.0);
  }
}
