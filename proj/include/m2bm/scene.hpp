// Copyright 2026 The m2bm Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Synthetic multichannel scenes with known target and noise spatial images.
//
// Two generators are provided. Simulate() convolves dry sources with short
// per-microphone FIRs in the time domain. SynthNarrowbandScene() builds the
// non-reference channels directly in the STFT domain by applying known
// per-frequency cross-frame filters to the reference channel, so the
// relative-filter model used by the mixture-constraint losses holds exactly.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "m2bm/error.hpp"
#include "m2bm/fcp.hpp"
#include "m2bm/spectral.hpp"
#include "m2bm/wav.hpp"

namespace m2bm::scene {

using Signal = std::vector<double>;
using Fir = std::vector<double>;
using FirSet = std::vector<Fir>;  // one FIR per microphone

inline constexpr std::size_t kMaxFirTaps = 64;

struct SourceDescriptor {
  enum class Kind { kNoise, kTones, kWav };
  Kind kind = Kind::kNoise;
  std::uint64_t seed = 0;  // mixed with the scene seed
  double color = 0.0;      // noise: one-pole coefficient in [0, 1), 0 = white
  double f0 = 0.0;         // tones: fundamental in Hz, 0 = drawn from the seed
  std::string path;        // wav: file path, first channel is used

  static SourceDescriptor Of(Kind kind, std::uint64_t seed = 0) {
    SourceDescriptor d;
    d.kind = kind;
    d.seed = seed;
    return d;
  }
};

struct SceneSpec {
  int num_mics = 2;
  int sample_rate = 16000;
  double duration_s = 1.0;
  FirSet target_firs;
  std::vector<FirSet> noise_firs;  // per noise source
  SourceDescriptor target_source = SourceDescriptor::Of(SourceDescriptor::Kind::kTones);
  std::vector<SourceDescriptor> noise_sources;
  std::optional<double> snr_db;  // unset disables noise scaling
  int ref_mic = 0;
  std::uint64_t seed = 0;

  std::size_t NumSamples() const {
    return static_cast<std::size_t>(std::llround(duration_s * sample_rate));
  }

  void Validate() const {
    if (num_mics < 2) throw Error("scene: num_mics must be >= 2");
    if (ref_mic < 0 || ref_mic >= num_mics) throw Error("scene: ref_mic out of range");
    if (sample_rate <= 0 || !(duration_s > 0.0)) throw Error("scene: bad sample_rate/duration");
    auto check_set = [&](const FirSet& set, const std::string& what) {
      if (set.size() != static_cast<std::size_t>(num_mics)) {
        throw Error("scene: " + what + " needs one FIR per microphone");
      }
      for (const auto& fir : set) {
        if (fir.empty()) throw Error("scene: " + what + " has an empty FIR");
        if (fir.size() > kMaxFirTaps) throw Error("scene: " + what + " FIR longer than 64 taps");
      }
    };
    check_set(target_firs, "target_firs");
    if (noise_firs.size() != noise_sources.size()) {
      throw Error("scene: noise_firs and noise_sources differ in length");
    }
    for (std::size_t j = 0; j < noise_firs.size(); ++j) {
      check_set(noise_firs[j], "noise_firs[" + std::to_string(j) + "]");
    }
    if (snr_db && !std::isfinite(*snr_db)) throw Error("scene: snr_db must be finite");
  }
};

struct SceneBundle {
  int ref_mic = 0;
  int sample_rate = 16000;
  std::vector<Signal> y_time, x_time, v_time;  // [mic][sample]
  MultichannelSpectrogram y, x, v;

  std::size_t num_samples() const { return y_time.empty() ? 0 : y_time.front().size(); }
};

// splitmix64 finalizer, used to derive independent stream seeds.
inline std::uint64_t MixSeed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline double Energy(const Signal& s) {
  double e = 0.0;
  for (double v : s) e += v * v;
  return e;
}

inline void NormalizeRms(Signal& s) {
  const double e = Energy(s);
  if (e <= 0.0) return;
  const double g = 1.0 / std::sqrt(e / static_cast<double>(s.size()));
  for (double& v : s) v *= g;
}

// Dry source waveform of `n` samples.
inline Signal DrySignal(const SourceDescriptor& desc, std::uint64_t scene_seed, int sample_rate,
                        std::size_t n) {
  std::mt19937_64 rng(MixSeed(scene_seed, desc.seed));
  Signal s(n, 0.0);
  switch (desc.kind) {
    case SourceDescriptor::Kind::kNoise: {
      if (desc.color < 0.0 || desc.color >= 1.0) throw Error("scene: noise color must be in [0, 1)");
      std::normal_distribution<double> normal(0.0, 1.0);
      double prev = 0.0;
      for (auto& v : s) {
        prev = normal(rng) + desc.color * prev;
        v = prev;
      }
      NormalizeRms(s);
      break;
    }
    case SourceDescriptor::Kind::kTones: {
      // Harmonic complex under a slow syllable-rate envelope.
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      const double f0 = desc.f0 > 0.0 ? desc.f0 : 100.0 + 120.0 * unit(rng);
      const double rate = 2.5 + 2.0 * unit(rng);
      const double env_phase = 2.0 * std::numbers::pi * unit(rng);
      const double nyq_cap = std::min(4000.0, 0.45 * sample_rate);
      std::vector<double> phases;
      for (int k = 1; k * f0 < nyq_cap; ++k) phases.push_back(2.0 * std::numbers::pi * unit(rng));
      for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sample_rate;
        double v = 0.0;
        for (std::size_t k = 0; k < phases.size(); ++k) {
          const double h = static_cast<double>(k + 1);
          v += std::sin(2.0 * std::numbers::pi * h * f0 * t + phases[k]) / h;
        }
        const double env = 0.5 * (1.0 + std::sin(2.0 * std::numbers::pi * rate * t + env_phase));
        s[i] = v * (0.1 + 0.9 * env);
      }
      NormalizeRms(s);
      break;
    }
    case SourceDescriptor::Kind::kWav: {
      const auto audio = wav::Read(desc.path);
      if (audio.sample_rate != sample_rate) {
        throw Error("scene: '" + desc.path + "' has sample rate " +
                    std::to_string(audio.sample_rate) + ", expected " + std::to_string(sample_rate));
      }
      if (audio.channels.empty()) throw Error("scene: '" + desc.path + "' has no channels");
      const auto& src = audio.channels.front();
      for (std::size_t i = 0; i < n && i < src.size(); ++i) s[i] = src[i];
      break;
    }
  }
  return s;
}

// Linear convolution truncated to the input length.
inline Signal Convolve(const Signal& x, const Fir& h) {
  Signal y(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    double acc = 0.0;
    const std::size_t kmax = std::min(h.size(), i + 1);
    for (std::size_t k = 0; k < kmax; ++k) acc += h[k] * x[i - k];
    y[i] = acc;
  }
  return y;
}

// A direct path at a random small delay followed by a short decaying tail,
// one FIR per microphone.
inline FirSet RandomFirSet(std::uint64_t seed, int num_mics, std::size_t taps,
                           int max_delay = 6, double tail_gain = 0.25) {
  if (taps == 0 || taps > kMaxFirTaps) throw Error("scene: random FIR taps must be in [1, 64]");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  FirSet set(num_mics, Fir(taps, 0.0));
  const int delay_cap = std::min<int>(max_delay, static_cast<int>(taps) - 1);
  for (auto& fir : set) {
    const int delay = static_cast<int>(unit(rng) * (delay_cap + 1)) % (delay_cap + 1);
    fir[delay] = 0.6 + 0.4 * unit(rng);
    const double tau = 2.0 + 6.0 * unit(rng);
    for (std::size_t k = delay + 1; k < taps; ++k) {
      fir[k] = tail_gain * normal(rng) * std::exp(-static_cast<double>(k - delay) / tau);
    }
  }
  return set;
}

// Keeps only the strongest tap of each FIR.
inline FirSet DirectPathOnly(FirSet set) {
  for (auto& fir : set) {
    std::size_t peak = 0;
    for (std::size_t k = 1; k < fir.size(); ++k) {
      if (std::abs(fir[k]) > std::abs(fir[peak])) peak = k;
    }
    const double g = fir.empty() ? 0.0 : fir[peak];
    std::fill(fir.begin(), fir.end(), 0.0);
    if (!fir.empty()) fir[peak] = g;
  }
  return set;
}

inline FirSet IdentityFirSet(int num_mics) { return FirSet(num_mics, Fir{1.0}); }

inline SceneBundle FinishBundle(SceneBundle bundle, const StftConfig& stft) {
  bundle.y = spectral::Stft(bundle.y_time, stft);
  bundle.x = spectral::Stft(bundle.x_time, stft);
  bundle.v = spectral::Stft(bundle.v_time, stft);
  return bundle;
}

inline SceneBundle Simulate(const SceneSpec& spec, const StftConfig& stft = {}) {
  spec.Validate();
  if (stft.sample_rate != spec.sample_rate) throw Error("scene: stft and scene sample rates differ");
  const std::size_t n = spec.NumSamples();
  const int P = spec.num_mics;
  const std::size_t q = spec.ref_mic;

  const Signal dry_target = DrySignal(spec.target_source, spec.seed, spec.sample_rate, n);
  if (Energy(dry_target) <= 0.0) throw Error("scene: dry target is silent");

  SceneBundle b;
  b.ref_mic = spec.ref_mic;
  b.sample_rate = spec.sample_rate;
  b.x_time.resize(P);
  b.v_time.assign(P, Signal(n, 0.0));
  for (int p = 0; p < P; ++p) b.x_time[p] = Convolve(dry_target, spec.target_firs[p]);
  if (Energy(b.x_time[q]) <= 0.0) throw Error("scene: target image at the reference mic is silent");

  for (std::size_t j = 0; j < spec.noise_sources.size(); ++j) {
    const Signal dry = DrySignal(spec.noise_sources[j], spec.seed, spec.sample_rate, n);
    for (int p = 0; p < P; ++p) {
      const Signal img = Convolve(dry, spec.noise_firs[j][p]);
      for (std::size_t i = 0; i < n; ++i) b.v_time[p][i] += img[i];
    }
  }
  if (spec.snr_db) {
    if (spec.noise_sources.empty()) throw Error("scene: snr_db set but there are no noise sources");
    const double ev = Energy(b.v_time[q]);
    if (ev <= 0.0) throw Error("scene: noise is silent at the reference mic, snr unachievable");
    const double gain = std::sqrt(Energy(b.x_time[q]) / (ev * std::pow(10.0, *spec.snr_db / 10.0)));
    for (auto& ch : b.v_time) {
      for (double& v : ch) v *= gain;
    }
  }
  b.y_time.resize(P);
  for (int p = 0; p < P; ++p) {
    b.y_time[p].resize(n);
    for (std::size_t i = 0; i < n; ++i) b.y_time[p][i] = b.x_time[p][i] + b.v_time[p][i];
  }
  return FinishBundle(std::move(b), stft);
}

enum class NarrowbandLayout {
  kOverlapping,  // target and noise share every bin
  kDisjoint,     // each bin carries only its dominant source
};

struct NarrowbandScene {
  SceneBundle bundle;
  int taps = 0;
  // Known generating filters per microphone, with `taps` past taps and no
  // future taps; the reference microphone gets the identity filter.
  std::vector<fcp::FcpFilter> target_filters;
  std::vector<fcp::FcpFilter> noise_filters;
};

inline fcp::FcpFilter RandomBinFilters(std::mt19937_64& rng, std::size_t bins, int taps) {
  std::normal_distribution<double> normal(0.0, 1.0);
  fcp::FcpFilter h;
  h.past_taps = taps;
  h.future_taps = 0;
  h.coeffs.assign(bins, std::vector<Complex>(taps));
  for (auto& c : h.coeffs) {
    for (int n = 0; n < taps; ++n) {
      // Heaviest weight on the current frame, decaying into the past.
      const double scale = std::pow(0.5, taps - 1 - n);
      c[n] = scale * Complex(normal(rng), normal(rng)) / std::numbers::sqrt2;
    }
  }
  return h;
}

inline fcp::FcpFilter IdentityBinFilters(std::size_t bins, int taps) {
  fcp::FcpFilter h;
  h.past_taps = taps;
  h.future_taps = 0;
  h.coeffs.assign(bins, std::vector<Complex>(taps));
  for (auto& c : h.coeffs) c[taps - 1] = 1.0;
  return h;
}

inline NarrowbandScene SynthNarrowbandScene(const SceneSpec& spec, int taps_per_freq,
                                            const StftConfig& stft = {},
                                            NarrowbandLayout layout = NarrowbandLayout::kOverlapping) {
  if (taps_per_freq < 1) throw Error("narrowband scene: taps_per_freq must be >= 1");
  // Reference-channel images come from the time-domain generator.
  const SceneBundle td = Simulate(spec, stft);
  const std::size_t q = spec.ref_mic;
  Spectrogram xq = td.x[q];
  Spectrogram vq = td.v[q];
  if (layout == NarrowbandLayout::kDisjoint) {
    for (std::size_t f = 0; f < xq.bins(); ++f) {
      double ex = 0.0, ev = 0.0;
      for (const auto& c : xq.bin(f)) ex += std::norm(c);
      for (const auto& c : vq.bin(f)) ev += std::norm(c);
      auto silence = ex >= ev ? vq.bin(f) : xq.bin(f);
      std::fill(silence.begin(), silence.end(), Complex{});
    }
  }

  NarrowbandScene out;
  out.taps = taps_per_freq;
  std::mt19937_64 rng(MixSeed(spec.seed, 0x6e62ULL));
  fcp::FcpConfig stack_cfg;
  stack_cfg.past_taps = taps_per_freq;
  stack_cfg.future_taps = 0;
  const auto xs = fcp::Stack(xq, stack_cfg);
  const auto vs = fcp::Stack(vq, stack_cfg);

  const int P = spec.num_mics;
  std::vector<Spectrogram> xc(P), vc(P), yc(P);
  for (int p = 0; p < P; ++p) {
    if (static_cast<std::size_t>(p) == q) {
      out.target_filters.push_back(IdentityBinFilters(xq.bins(), taps_per_freq));
      out.noise_filters.push_back(IdentityBinFilters(xq.bins(), taps_per_freq));
      xc[p] = xq;
      vc[p] = vq;
    } else {
      out.target_filters.push_back(RandomBinFilters(rng, xq.bins(), taps_per_freq));
      out.noise_filters.push_back(RandomBinFilters(rng, xq.bins(), taps_per_freq));
      xc[p] = fcp::ApplyFilter(out.target_filters.back(), xs);
      vc[p] = fcp::ApplyFilter(out.noise_filters.back(), vs);
    }
    yc[p] = xc[p] + vc[p];
  }

  SceneBundle& b = out.bundle;
  b.ref_mic = spec.ref_mic;
  b.sample_rate = spec.sample_rate;
  b.x = MultichannelSpectrogram(std::move(xc), stft);
  b.v = MultichannelSpectrogram(std::move(vc), stft);
  b.y = MultichannelSpectrogram(std::move(yc), stft);
  const std::size_t n = td.num_samples();
  b.x_time = spectral::Istft(b.x, stft, n);
  b.v_time = spectral::Istft(b.v, stft, n);
  b.y_time.resize(P);
  for (int p = 0; p < P; ++p) {
    b.y_time[p].resize(n);
    for (std::size_t i = 0; i < n; ++i) b.y_time[p][i] = b.x_time[p][i] + b.v_time[p][i];
  }
  return out;
}

}  // namespace m2bm::scene
