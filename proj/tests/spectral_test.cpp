// Copyright 2026 The m2bm Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "m2bm/spectral.hpp"
#include "m2bm/wav.hpp"

namespace {

using m2bm::Complex;
using m2bm::Spectrogram;
using m2bm::StftConfig;
using namespace m2bm::spectral;

std::vector<double> Noise(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> x(n);
  for (auto& v : x) v = normal(rng);
  return x;
}

double MaxAbs(const std::vector<double>& x) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::abs(v));
  return m;
}

TEST(Stft, ShapeFollowsPaddingAndFftSize) {
  StftConfig cfg;
  const auto s = StftChannel(Noise(16000, 1), cfg);
  // (16000 + 2 * 384 - 512) / 128 + 1 = 128.9 -> 130 frames after ceil
  EXPECT_EQ(s.frames(), 1 + (16000 + 2 * 384 - 512 + 127) / 128);
  EXPECT_EQ(s.bins(), 257u);
  cfg.fft_size = 1024;
  EXPECT_EQ(StftChannel(Noise(1000, 1), cfg).bins(), 513u);
}

TEST(Stft, ZeroSignalGivesZeroSpectrogram) {
  const auto s = StftChannel(std::vector<double>(4000, 0.0), StftConfig{});
  EXPECT_EQ(s.SumMagnitude(), 0.0);
}

TEST(Stft, RoundTripWhiteNoise) {
  StftConfig cfg;
  const auto x = Noise(16000, 7);
  const auto y = IstftChannel(StftChannel(x, cfg), cfg, x.size());
  std::vector<double> d(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) d[i] = y[i] - x[i];
  EXPECT_LE(MaxAbs(d) / MaxAbs(x), 1e-6);
}

TEST(Stft, RoundTripOtherGeometries) {
  for (auto [win, hop, nfft] : {std::tuple{128, 32, 0}, {256, 128, 0}, {64, 16, 128}}) {
    StftConfig cfg;
    cfg.win_len = win;
    cfg.hop = hop;
    cfg.fft_size = nfft;
    const auto x = Noise(3001, 3);
    const auto y = IstftChannel(StftChannel(x, cfg), cfg, x.size());
    std::vector<double> d(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) d[i] = y[i] - x[i];
    EXPECT_LE(MaxAbs(d) / MaxAbs(x), 1e-6) << win << "/" << hop;
  }
}

TEST(Stft, MultichannelRoundTripAndRaggedInput) {
  StftConfig cfg;
  std::vector<std::vector<double>> x = {Noise(5000, 1), Noise(5000, 2), Noise(5000, 3)};
  const auto spec = Stft(x, cfg);
  ASSERT_EQ(spec.num_channels(), 3u);
  const auto y = Istft(spec, cfg, 5000);
  for (int p = 0; p < 3; ++p) {
    for (std::size_t i = 0; i < 5000; ++i) ASSERT_NEAR(y[p][i], x[p][i], 1e-9);
  }
  x[1].pop_back();
  EXPECT_THROW(Stft(x, cfg), m2bm::Error);
}

TEST(Stft, Linearity) {
  StftConfig cfg;
  const auto a = Noise(4000, 11), b = Noise(4000, 12);
  const double alpha = 0.7, beta = -2.3;
  std::vector<double> c(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) c[i] = alpha * a[i] + beta * b[i];
  const auto sa = StftChannel(a, cfg), sb = StftChannel(b, cfg), sc = StftChannel(c, cfg);
  const Spectrogram combo = Complex(alpha) * sa + Complex(beta) * sb;
  const double scale = sc.Energy();
  EXPECT_LE((sc - combo).Energy() / scale, 1e-20);

  const auto ya = IstftChannel(sa, cfg, a.size());
  const auto yb = IstftChannel(sb, cfg, a.size());
  const auto ycombo = IstftChannel(combo, cfg, a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_NEAR(ycombo[i], alpha * ya[i] + beta * yb[i], 1e-10 * MaxAbs(c));
  }
}

TEST(Stft, SinusoidAtBinCenterPeaksAtThatBin) {
  StftConfig cfg;
  const int k = 37;
  std::vector<double> x(16000);
  for (std::size_t n = 0; n < x.size(); ++n) {
    x[n] = std::cos(2.0 * std::numbers::pi * k * static_cast<double>(n) / cfg.FftSize());
  }
  const auto s = StftChannel(x, cfg);
  // Interior frames: fully inside the signal.
  const std::size_t first = cfg.Padding() / cfg.hop;
  const std::size_t last = s.frames() - first - 1;
  for (std::size_t t = first; t < last; ++t) {
    std::size_t best = 0;
    for (std::size_t f = 1; f < s.bins(); ++f) {
      if (std::abs(s(t, f)) > std::abs(s(t, best))) best = f;
    }
    ASSERT_EQ(best, static_cast<std::size_t>(k)) << "frame " << t;
  }
}

TEST(Istft, SingleAtomIsWindowedSinusoidBurst) {
  StftConfig cfg;
  cfg.win_len = 64;
  cfg.hop = 16;
  const std::size_t frames = 20, t0 = 9, k = 5;
  Spectrogram s(frames, cfg.NumBins());
  const Complex a(0.8, -0.3);
  s(t0, k) = a;
  const std::size_t len = ReconstructableLength(frames, cfg);
  const auto y = IstftChannel(s, cfg, len);

  // Closed form: frame t0 holds the inverse one-sided DFT of a single bin,
  // 2 Re(a e^{i 2 pi k n / N}) / N, windowed and overlap-add normalized.
  const int N = cfg.FftSize(), win = cfg.win_len, hop = cfg.hop, pad = cfg.Padding();
  for (std::size_t i = 0; i < len; ++i) {
    const long n_abs = static_cast<long>(i) + pad;
    const long n = n_abs - static_cast<long>(t0) * hop;
    double expect = 0.0;
    if (n >= 0 && n < win) {
      const double w = std::sqrt(0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / win));
      const double atom =
          2.0 * std::real(a * std::polar(1.0, 2.0 * std::numbers::pi * k * n / N)) / N;
      double norm = 0.0;
      for (long t = 0; t < static_cast<long>(frames); ++t) {
        const long m = n_abs - t * hop;
        if (m >= 0 && m < win) norm += 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * m / win);
      }
      expect = atom * w / norm;
    }
    ASSERT_NEAR(y[i], expect, 1e-12) << i;
  }
}

TEST(Istft, RejectsOverlongOutputAndForeignConfig) {
  StftConfig cfg;
  const auto s = StftChannel(Noise(2000, 1), cfg);
  EXPECT_THROW(IstftChannel(s, cfg, ReconstructableLength(s.frames(), cfg) + 1), m2bm::Error);
  EXPECT_NO_THROW(IstftChannel(s, cfg, ReconstructableLength(s.frames(), cfg)));
  StftConfig other = cfg;
  other.hop = 64;
  std::vector<std::vector<double>> x = {Noise(2000, 1)};
  EXPECT_THROW(Istft(Stft(x, cfg), other, 2000), m2bm::Error);
}

TEST(Stft, EnergyRatioIsWindowConstant) {
  // With sqrt-Hann at 75 % overlap the squared windows sum to win/(2 hop),
  // so two-sided spectral energy = N * win / (2 hop) * time energy.
  StftConfig cfg;
  const double expect = cfg.FftSize() * cfg.win_len / (2.0 * cfg.hop);
  std::vector<double> ratios;
  for (unsigned seed = 0; seed < 8; ++seed) {
    const auto x = Noise(8000, 100 + seed);
    double ex = 0.0;
    for (double v : x) ex += v * v;
    ratios.push_back(TwoSidedEnergy(StftChannel(x, cfg)) / ex);
  }
  double mean = 0.0;
  for (double r : ratios) mean += r / ratios.size();
  double var = 0.0;
  for (double r : ratios) var += (r / mean - 1.0) * (r / mean - 1.0) / ratios.size();
  EXPECT_LE(var, 1e-10);
  EXPECT_NEAR(mean / expect, 1.0, 1e-10);
}

TEST(Stft, ConfigValidation) {
  StftConfig cfg;
  cfg.hop = 100;
  EXPECT_THROW(cfg.Validate(), m2bm::Error);
  cfg = {};
  cfg.fft_size = 256;
  EXPECT_THROW(cfg.Validate(), m2bm::Error);
  EXPECT_THROW(ParseWindow("hamming"), m2bm::Error);
  EXPECT_THROW(StftChannel(std::vector<double>(10, 1.0), StftConfig{}), m2bm::Error);
}

TEST(Wav, Float32RoundTripIsExactForFloatValues) {
  m2bm::wav::Audio a{16000, {{0.5, -0.25, 0.125}, {1.0, 0.0, -1.0}}};
  const auto b = m2bm::wav::Decode(m2bm::wav::Encode(a, m2bm::wav::SampleFormat::kFloat32));
  EXPECT_EQ(b.sample_rate, 16000);
  EXPECT_EQ(b.channels, a.channels);
}

TEST(Wav, Pcm16RoundTripWithinQuantization) {
  m2bm::wav::Audio a{16000, {{0.3, -0.7, 0.999}}};
  const auto b = m2bm::wav::Decode(m2bm::wav::Encode(a, m2bm::wav::SampleFormat::kPcm16));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(b.channels[0][i], a.channels[0][i], 1.0 / 32767);
}

TEST(Wav, RejectsGarbage) {
  EXPECT_THROW(m2bm::wav::Decode("RIFF1234WAVEjunk"), m2bm::Error);
  EXPECT_THROW(m2bm::wav::Decode(""), m2bm::Error);
}

}  // namespace
