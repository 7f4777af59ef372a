// Copyright 2026 The m2bm Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "m2bm/beamform.hpp"
#include "test_util.hpp"

namespace {

using namespace m2bm;
using beamform::CMatrix;
using beamform::CVector;
using m2bm::testing::RandomComplexVector;
using m2bm::testing::RandomHermitianPsd;

// Plain power iteration, independent of the library's eigensolver.
std::pair<CVector, double> PowerIteration(const CMatrix& a, std::mt19937_64& rng) {
  CVector v = RandomComplexVector(rng, a.rows()).normalized();
  for (int i = 0; i < 5000; ++i) v = (a * v).normalized();
  return {v, v.dot(a * v).real()};
}

double OutputPower(const CMatrix& phi, const CVector& w) { return w.dot(phi * w).real(); }

TEST(Covariance, OuterProductSum) {
  MultichannelSpectrogram y(2, 1, 1);
  y[0](0, 0) = {1, 0};
  y[1](0, 0) = {0, 1};
  const auto cov = beamform::EstimateCovariance(y);
  CMatrix expect(2, 2);
  expect << Complex(1, 0), Complex(0, -1), Complex(0, 1), Complex(1, 0);
  EXPECT_LE((cov.per_bin[0] - expect).norm(), 1e-15);
  EXPECT_THROW(beamform::EstimateCovariance(MultichannelSpectrogram(1, 2, 2)), Error);
}

TEST(Eigen, MatchesPowerIteration) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const CMatrix phi = RandomHermitianPsd(rng, 4);
    const auto eig = beamform::PrincipalEigenvector(phi);
    const auto [v, value] = PowerIteration(phi, rng);
    EXPECT_NEAR(eig.value, value, 1e-10 * value);
    EXPECT_NEAR(std::abs(eig.vector.dot(v)), 1.0, 1e-8);
    EXPECT_FALSE(eig.ill_defined);
  }
}

TEST(Eigen, FlagsDegenerateTopEigenvalue) {
  EXPECT_TRUE(beamform::PrincipalEigenvector(CMatrix::Identity(3, 3)).ill_defined);
  EXPECT_TRUE(beamform::PrincipalEigenvector(CMatrix::Zero(3, 3)).ill_defined);
  CMatrix bad = CMatrix::Identity(2, 2);
  bad(0, 1) = 1.0;
  EXPECT_THROW(beamform::PrincipalEigenvector(bad), Error);
}

TEST(Rtf, NormalizesToReferenceAndIgnoresScale) {
  std::mt19937_64 rng(2);
  const CVector r = RandomComplexVector(rng, 4);
  const CVector c = beamform::Rtf(r, 2);
  EXPECT_EQ(c(2), Complex(1.0, 0.0));
  for (int p = 0; p < 4; ++p) EXPECT_NEAR(std::abs(c(p) - r(p) / r(2)), 0.0, 1e-14);
  const CVector c2 = beamform::Rtf(Complex(-0.3, 2.1) * r, 2);
  EXPECT_LE((c2 - c).norm(), 1e-12);

  CVector tiny = r;
  tiny(2) = 1e-12;
  EXPECT_THROW(beamform::Rtf(tiny, 2), NumericalError);
  EXPECT_THROW(beamform::Rtf(r, 4), Error);
}

TEST(Mvdr, IdentityNoiseGivesMatchedFilter) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const CVector c = RandomComplexVector(rng, 4);
    const CVector w = beamform::MvdrVector(CMatrix::Identity(4, 4), c);
    const CVector expect = c / c.squaredNorm();
    EXPECT_LE((w - expect).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Mvdr, DiagonalNoiseClosedForm) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.1, 3.0);
  const CVector c = RandomComplexVector(rng, 3);
  Eigen::VectorXd d(3);
  for (int p = 0; p < 3; ++p) d(p) = u(rng);
  const CVector w = beamform::MvdrVector(d.cast<Complex>().asDiagonal(), c, 0.0);
  double norm = 0.0;
  for (int p = 0; p < 3; ++p) norm += std::norm(c(p)) / d(p);
  for (int p = 0; p < 3; ++p) EXPECT_NEAR(std::abs(w(p) - c(p) / d(p) / norm), 0.0, 1e-12);
}

TEST(Mvdr, DistortionlessAndOptimalOnRandomInstances) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const int P = 2 + trial % 5;
    const CMatrix phi = RandomHermitianPsd(rng, P);
    const CVector c = beamform::Rtf(RandomComplexVector(rng, P), 0);
    const CVector w = beamform::MvdrVector(phi, c, 0.0);
    EXPECT_NEAR(std::abs(w.dot(c) - 1.0), 0.0, 1e-8);
    const double base = OutputPower(phi, w);
    for (int k = 0; k < 10; ++k) {
      // Feasible direction: u orthogonal to c keeps w^H c = 1.
      CVector u = RandomComplexVector(rng, P);
      u -= c * (c.dot(u) / c.squaredNorm());
      const double eps = std::pow(10.0, -1.0 - k % 4);
      EXPECT_GE(OutputPower(phi, w + eps * u), base * (1.0 - 1e-12));
    }
  }
}

TEST(Mvdr, RankDeficientNoiseIsHandledByLoading) {
  std::mt19937_64 rng(6);
  const CMatrix phi = RandomHermitianPsd(rng, 4, 1);
  const CVector c = beamform::Rtf(RandomComplexVector(rng, 4), 1);
  const CVector w = beamform::MvdrVector(phi, c);
  EXPECT_TRUE(w.allFinite());
  EXPECT_NEAR(std::abs(w.dot(c) - 1.0), 0.0, 1e-8);
  EXPECT_THROW(beamform::MvdrVector(CMatrix::Zero(4, 4), c), NumericalError);
  EXPECT_THROW(beamform::MvdrVector(phi, CVector::Ones(3)), Error);
}

scene::SceneBundle SmallScene(std::uint64_t seed) {
  return scene::Simulate(m2bm::testing::BroadbandSpec(4, seed, 2, 0.25), m2bm::testing::SmallStft());
}

TEST(DeriveBf, OracleResultIsDistortionlessAndDeterministic) {
  const auto b = SmallScene(7);
  const std::vector<int> mics = {0, 1, 2, 3};
  const auto enh = beamform::OracleEnhancer(b.x, b.v);
  const auto r1 = beamform::DeriveBfMixture(b.y, enh, mics, 0);
  const auto r2 = beamform::DeriveBfMixture(b.y, enh, mics, 0);
  EXPECT_EQ(r1.y_bf.values()[17], r2.y_bf.values()[17]);
  EXPECT_EQ(m2bm::testing::RelDiff(r1.y_bf, r2.y_bf), 0.0);
  for (double r : r1.distortionless_residual) EXPECT_LE(r, 1e-8);
  EXPECT_EQ(r1.rtf_fallbacks, 0);
}

TEST(DeriveBf, SubsetChecksAndReferenceMapping) {
  const auto b = SmallScene(8);
  const auto enh = beamform::OracleEnhancer(b.x, b.v);
  EXPECT_THROW(beamform::DeriveBfMixture(b.y, enh, std::vector<int>{2}, 2), Error);
  EXPECT_THROW(beamform::DeriveBfMixture(b.y, enh, std::vector<int>{0, 1}, 2), Error);
  EXPECT_THROW(beamform::DeriveBfMixture(b.y, enh, std::vector<int>{0, 0, 1}, 0), Error);
  EXPECT_THROW(beamform::DeriveBfMixture(b.y, enh, std::vector<int>{0, 5}, 0), Error);
  const auto r = beamform::DeriveBfMixture(b.y, enh, std::vector<int>{3, 1}, 1);
  EXPECT_EQ(r.weights.ref_mic, 1);
  EXPECT_EQ(r.mics, (std::vector<int>{3, 1}));
}

TEST(DeriveBf, SilentTargetBinsFallBackToTheReference) {
  auto b = SmallScene(9);
  for (std::size_t p = 0; p < 4; ++p) {
    for (auto& v : b.x[p].bin(3)) v = {};
  }
  const auto r = beamform::DeriveBfMixture(b.y, beamform::OracleEnhancer(b.x, b.v),
                                           std::vector<int>{0, 1, 2, 3}, 2);
  EXPECT_TRUE(r.fallback[3]);
  EXPECT_EQ(r.rtf_fallbacks, 1);
  for (std::size_t t = 0; t < b.y.frames(); ++t) EXPECT_EQ(r.y_bf(t, 3), b.y[2](t, 3));
}

TEST(DeriveBf, OracleBeamformerBeatsEveryMicrophone) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto b = scene::Simulate(m2bm::testing::SnrPropertySpec(seed));
    const auto o = m2bm::testing::OracleBeamformSnr(b);
    EXPECT_GE(o.beamformed_db, o.best_mic_db) << "seed " << seed;
  }
}

}  // namespace
