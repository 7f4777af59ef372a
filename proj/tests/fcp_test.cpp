// Copyright 2026 The m2bm Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "m2bm/fcp.hpp"
#include "m2bm/scene.hpp"
#include "test_util.hpp"

namespace {

using namespace m2bm;
using m2bm::testing::BroadbandSpec;
using m2bm::testing::SmallStft;

Spectrogram FromBin(const std::vector<Complex>& v) {
  Spectrogram s(v.size(), 1);
  for (std::size_t t = 0; t < v.size(); ++t) s(t, 0) = v[t];
  return s;
}

std::vector<Complex> RandomSeries(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Complex> v(n);
  for (auto& c : v) c = {normal(rng), normal(rng)};
  return v;
}

std::vector<Complex> Bin(const Spectrogram& s, std::size_t f) {
  const auto b = s.bin(f);
  return {b.begin(), b.end()};
}

double MaxPower(const Spectrogram& s) {
  double m = 0.0;
  for (const auto& v : s.values()) m = std::max(m, std::norm(v));
  return m;
}

TEST(Stack, PastAndFutureFramesWithZeroPadding) {
  const std::vector<Complex> s = {{1, 0}, {2, 0}, {3, 0}, {4, 0}};
  fcp::FcpConfig cfg;
  cfg.past_taps = 2;
  cfg.future_taps = 1;
  const auto st = fcp::Stack(FromBin(s), cfg);
  // Row t = [s(t-1), s(t), s(t+1)].
  const double expect[4][3] = {{0, 1, 2}, {1, 2, 3}, {2, 3, 4}, {3, 4, 0}};
  for (int t = 0; t < 4; ++t) {
    for (int n = 0; n < 3; ++n) EXPECT_EQ(st.at(t, 0)[n], Complex(expect[t][n], 0)) << t << "," << n;
  }
}

TEST(Weight, FloorPlusInstantaneousPower) {
  // max |Y|^2 = 4, xi = 1e-2: a unit-magnitude cell gets 0.04 + 1 = 1.04.
  const auto w = fcp::FcpWeight(FromBin({{2, 0}, {0, 1}, {0, 0}}), 1e-2);
  EXPECT_DOUBLE_EQ(w(0, 0), 4.04);
  EXPECT_DOUBLE_EQ(w(1, 0), 1.04);
  EXPECT_DOUBLE_EQ(w(2, 0), 0.04);
  EXPECT_THROW(fcp::FcpWeight(FromBin({{0, 0}, {0, 0}}), 1e-2), Error);
}

TEST(Solve, SelfPredictionIsUnitFilter) {
  std::mt19937_64 rng(3);
  const auto s = FromBin(RandomSeries(rng, 50));
  fcp::FcpConfig cfg;
  cfg.past_taps = 1;
  cfg.future_taps = 0;
  const auto h = fcp::FcpSolve(s, s, cfg);
  EXPECT_NEAR(std::abs(h.coeffs[0][0] - 1.0), 0.0, 1e-8);
  EXPECT_LE(h.weighted_objective[0], 1e-12);
}

TEST(Solve, RecoversKnownNarrowbandFilters) {
  // Noiseless narrowband scene with 3-tap generating filters, solved with a
  // wider (I, J) window: the embedded generator is the exact solution.
  const auto nb = scene::SynthNarrowbandScene(BroadbandSpec(3, 8, 0, 0.2), 3, SmallStft());
  fcp::FcpConfig cfg;
  cfg.past_taps = 4;
  cfg.future_taps = 1;
  for (int p = 1; p < 3; ++p) {
    const auto h = fcp::FcpSolve(nb.bundle.y[p], nb.bundle.x[0], cfg);
    const auto truth = fcp::EmbedFilter(nb.target_filters[p], cfg);
    double worst = 0.0;
    for (std::size_t f = 0; f < h.bins(); ++f) {
      for (int n = 0; n < cfg.Taps(); ++n) {
        worst = std::max(worst, std::abs(h.coeffs[f][n] - truth.coeffs[f][n]));
      }
    }
    EXPECT_LE(worst, 1e-6) << "mic " << p;
  }
}

TEST(Solve, MatchesQrWeightedLeastSquares) {
  std::mt19937_64 rng(11);
  fcp::FcpConfig cfg;
  cfg.past_taps = 3;
  cfg.future_taps = 1;
  cfg.diag_load = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto y = RandomSeries(rng, 30), s = RandomSeries(rng, 30);
    const auto ys = FromBin(y);
    const auto h = fcp::FcpSolve(ys, FromBin(s), cfg);
    const auto oracle = m2bm::testing::WlsOracle(
        y, s, m2bm::testing::WeightsOf(y, cfg.weight_floor, MaxPower(ys)), 3, 1);
    for (int n = 0; n < 4; ++n) EXPECT_NEAR(std::abs(h.coeffs[0][n] - oracle[n]), 0.0, 1e-10);
  }
}

TEST(Solve, GridSearchAgreesOnTinyInstances) {
  std::mt19937_64 rng(5);
  for (auto [past, future] : {std::pair{1, 0}, {2, 0}, {1, 1}}) {
    for (int trial = 0; trial < 3; ++trial) {
      const auto s = RandomSeries(rng, 4);
      const auto noise = RandomSeries(rng, 4);
      std::vector<Complex> h_true = {{0.6, -0.4}, {-0.3, 0.5}};
      h_true.resize(past + future);
      std::vector<Complex> y(4);
      for (int t = 0; t < 4; ++t) {
        const auto z = m2bm::testing::StackRow(s, t, past, past + future);
        for (int n = 0; n < past + future; ++n) y[t] += std::conj(h_true[n]) * z(n);
        y[t] += 0.1 * noise[t];
      }
      fcp::FcpConfig cfg;
      cfg.past_taps = past;
      cfg.future_taps = future;
      const auto ys = FromBin(y);
      const auto h = fcp::FcpSolve(ys, FromBin(s), cfg);
      const auto lambda = m2bm::testing::WeightsOf(y, cfg.weight_floor, MaxPower(ys));
      const auto [grid, step] = m2bm::testing::GridSearchOracle(y, s, lambda, past, future);
      for (int n = 0; n < past + future; ++n) {
        EXPECT_LE(std::abs(h.coeffs[0][n].real() - grid[n].real()), step);
        EXPECT_LE(std::abs(h.coeffs[0][n].imag() - grid[n].imag()), step);
      }
      EXPECT_LE(h.weighted_objective[0],
                m2bm::testing::WeightedResidual(y, s, lambda, grid, past) + 1e-12);
    }
  }
}

TEST(Solve, PerturbationNeverImprovesTheObjective) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> normal(0.0, 1.0);
  fcp::FcpConfig cfg;
  cfg.past_taps = 3;
  cfg.future_taps = 1;
  cfg.diag_load = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto y = RandomSeries(rng, 25), s = RandomSeries(rng, 25);
    const auto ys = FromBin(y);
    const auto lambda = fcp::FcpWeight(ys, cfg.weight_floor);
    const fcp::BinFit fit(y, s, lambda.bin(0), cfg);
    const auto h = fit.Filter();
    const double base = fcp::BinObjective(y, s, lambda.bin(0), h, cfg.past_taps);
    EXPECT_NEAR(base, fit.WeightedObjective(), 1e-10 * (1.0 + base));
    for (int k = 0; k < 10; ++k) {
      auto hp = h;
      for (auto& c : hp) c += 1e-3 * Complex(normal(rng), normal(rng));
      EXPECT_GE(fcp::BinObjective(y, s, lambda.bin(0), hp, cfg.past_taps), base);
    }
  }
}

TEST(Solve, ScaleEquivariance) {
  std::mt19937_64 rng(23);
  const auto y = FromBin(RandomSeries(rng, 40));
  const auto s = FromBin(RandomSeries(rng, 40));
  fcp::FcpConfig cfg;
  cfg.past_taps = 2;
  cfg.future_taps = 1;
  const auto h = fcp::FcpSolve(y, s, cfg);
  const Complex alpha(1.5, -0.7), beta(-0.3, 2.0);
  // Scaling the estimate by alpha scales h by 1 / conj(alpha); scaling the
  // target (and hence the weights uniformly) scales h by conj(beta).
  const auto ha = fcp::FcpSolve(y, alpha * s, cfg);
  const auto hb = fcp::FcpSolve(beta * y, s, cfg);
  for (int n = 0; n < 3; ++n) {
    EXPECT_NEAR(std::abs(ha.coeffs[0][n] - h.coeffs[0][n] / std::conj(alpha)), 0.0, 1e-10);
    EXPECT_NEAR(std::abs(hb.coeffs[0][n] - h.coeffs[0][n] * std::conj(beta)), 0.0, 1e-10);
  }
}

TEST(Solve, SilentEstimateBinGivesZeroFilter) {
  std::mt19937_64 rng(2);
  Spectrogram y(10, 2), s(10, 2);
  for (int t = 0; t < 10; ++t) {
    y(t, 0) = y(t, 1) = {1.0 + t, 0.5};
    s(t, 1) = {0.3 * t, 1.0};
  }
  const auto h = fcp::FcpSolve(y, s, fcp::FcpConfig{});
  for (const auto& c : h.coeffs[0]) EXPECT_EQ(c, Complex{});
  EXPECT_GT(std::abs(h.coeffs[1][19]), 0.0);
}

TEST(Apply, ReproducesTheFitPrediction) {
  std::mt19937_64 rng(29);
  Spectrogram y(30, 3), s(30, 3);
  for (std::size_t f = 0; f < 3; ++f) {
    const auto a = RandomSeries(rng, 30), b = RandomSeries(rng, 30);
    for (int t = 0; t < 30; ++t) {
      y(t, f) = a[t];
      s(t, f) = b[t];
    }
  }
  fcp::FcpConfig cfg;
  cfg.past_taps = 3;
  cfg.future_taps = 1;
  const auto h = fcp::FcpSolve(y, s, cfg);
  const auto pred = fcp::ApplyFilter(h, fcp::Stack(s, cfg));
  const auto lambda = fcp::FcpWeight(y, cfg.weight_floor);
  for (std::size_t f = 0; f < 3; ++f) {
    const fcp::BinFit fit(y.bin(f), s.bin(f), lambda.bin(f), cfg);
    const auto p = fit.Predict();
    double unweighted = 0.0;
    for (int t = 0; t < 30; ++t) {
      EXPECT_NEAR(std::abs(pred(t, f) - p(t)), 0.0, 1e-12);
      unweighted += std::norm(y(t, f) - p(t));
    }
    EXPECT_NEAR(h.unweighted_objective[f], unweighted, 1e-10 * unweighted);
  }
  EXPECT_EQ(Bin(pred, 0).size(), 30u);
}

TEST(Solve, Errors) {
  fcp::FcpConfig cfg;
  EXPECT_THROW(fcp::FcpSolve(Spectrogram(4, 2), Spectrogram(5, 2), cfg), Error);
  Spectrogram y(4, 1), s(4, 1);
  y(0, 0) = 1.0;
  s(1, 0) = std::nan("");
  EXPECT_THROW(fcp::FcpSolve(y, s, cfg), NumericalError);
  cfg.past_taps = 0;
  EXPECT_THROW(cfg.Validate(), Error);
  cfg = {};
  cfg.weight_floor = 0.0;
  EXPECT_THROW(cfg.Validate(), Error);
}

}  // namespace
