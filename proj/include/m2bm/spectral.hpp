// Copyright 2026 The m2bm Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// STFT analysis/synthesis and the complex spectrogram containers.

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "m2bm/error.hpp"

namespace m2bm {

using Complex = std::complex<double>;

namespace spectral {

enum class Window { kSqrtHann };

struct StftConfig {
  int sample_rate = 16000;
  int win_len = 512;  // 32 ms
  int hop = 128;      // 8 ms
  Window window = Window::kSqrtHann;
  int fft_size = 0;   // 0 means win_len

  int FftSize() const { return fft_size > 0 ? fft_size : win_len; }
  int NumBins() const { return FftSize() / 2 + 1; }
  // Zero padding applied on both ends before framing.
  int Padding() const { return win_len - hop; }

  void Validate() const {
    if (sample_rate <= 0) throw Error("stft: sample_rate must be positive");
    if (win_len <= 0 || hop <= 0) throw Error("stft: win_len and hop must be positive");
    if (win_len % hop != 0) throw Error("stft: hop must divide win_len");
    if (FftSize() < win_len) throw Error("stft: fft_size must be >= win_len");
    if (FftSize() % 2 != 0) throw Error("stft: fft_size must be even");
    if (window != Window::kSqrtHann) throw Error("stft: unsupported window");
  }

  bool operator==(const StftConfig& o) const {
    return sample_rate == o.sample_rate && win_len == o.win_len && hop == o.hop &&
           window == o.window && FftSize() == o.FftSize();
  }
};

inline std::string WindowName(Window w) {
  switch (w) {
    case Window::kSqrtHann:
      return "sqrt-hann";
  }
  return "unknown";
}

inline Window ParseWindow(const std::string& name) {
  if (name == "sqrt-hann" || name == "sqrthann") return Window::kSqrtHann;
  throw Error("stft: unsupported window '" + name + "'");
}

// Periodic square-root Hann window.
inline std::vector<double> MakeWindow(const StftConfig& cfg) {
  std::vector<double> w(cfg.win_len);
  for (int n = 0; n < cfg.win_len; ++n) {
    double hann = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / cfg.win_len);
    w[n] = std::sqrt(hann);
  }
  return w;
}

// Single-channel complex spectrogram, T frames by F one-sided bins.
// Storage is bin-major so the time series of each bin is contiguous.
class Spectrogram {
 public:
  Spectrogram() = default;
  Spectrogram(std::size_t frames, std::size_t bins)
      : frames_(frames), bins_(bins), data_(frames * bins) {}

  std::size_t frames() const { return frames_; }
  std::size_t bins() const { return bins_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  Complex& operator()(std::size_t t, std::size_t f) { return data_[f * frames_ + t]; }
  const Complex& operator()(std::size_t t, std::size_t f) const { return data_[f * frames_ + t]; }

  std::span<Complex> bin(std::size_t f) { return {data_.data() + f * frames_, frames_}; }
  std::span<const Complex> bin(std::size_t f) const { return {data_.data() + f * frames_, frames_}; }

  std::span<Complex> values() { return data_; }
  std::span<const Complex> values() const { return data_; }

  bool SameShape(const Spectrogram& o) const { return frames_ == o.frames_ && bins_ == o.bins_; }

  Spectrogram& operator+=(const Spectrogram& o) {
    RequireSameShape(o, "spectrogram +=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Spectrogram& operator-=(const Spectrogram& o) {
    RequireSameShape(o, "spectrogram -=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Spectrogram& operator*=(Complex a) {
    for (auto& v : data_) v *= a;
    return *this;
  }
  friend Spectrogram operator+(Spectrogram a, const Spectrogram& b) { return a += b; }
  friend Spectrogram operator-(Spectrogram a, const Spectrogram& b) { return a -= b; }
  friend Spectrogram operator*(Complex a, Spectrogram b) { return b *= a; }

  void RequireSameShape(const Spectrogram& o, const char* what) const {
    if (!SameShape(o)) {
      throw Error(std::string(what) + ": shape mismatch (" + std::to_string(frames_) + "x" +
                  std::to_string(bins_) + " vs " + std::to_string(o.frames_) + "x" +
                  std::to_string(o.bins_) + ")");
    }
  }

  bool AllFinite() const {
    return std::all_of(data_.begin(), data_.end(), [](const Complex& v) {
      return std::isfinite(v.real()) && std::isfinite(v.imag());
    });
  }

  double SumMagnitude() const {
    double s = 0.0;
    for (const auto& v : data_) s += std::abs(v);
    return s;
  }

  double Energy() const {
    double s = 0.0;
    for (const auto& v : data_) s += std::norm(v);
    return s;
  }

 private:
  std::size_t frames_ = 0;
  std::size_t bins_ = 0;
  std::vector<Complex> data_;
};

// P channels sharing one (T, F) geometry.
class MultichannelSpectrogram {
 public:
  MultichannelSpectrogram() = default;
  MultichannelSpectrogram(std::size_t channels, std::size_t frames, std::size_t bins,
                          StftConfig config = {})
      : channels_(channels, Spectrogram(frames, bins)), config_(config) {}
  MultichannelSpectrogram(std::vector<Spectrogram> channels, StftConfig config)
      : channels_(std::move(channels)), config_(config) {
    for (const auto& c : channels_) {
      if (!c.SameShape(channels_.front())) throw Error("spectrogram: channels differ in shape");
    }
  }

  std::size_t num_channels() const { return channels_.size(); }
  std::size_t frames() const { return channels_.empty() ? 0 : channels_.front().frames(); }
  std::size_t bins() const { return channels_.empty() ? 0 : channels_.front().bins(); }
  const StftConfig& config() const { return config_; }

  Spectrogram& operator[](std::size_t p) { return channels_[p]; }
  const Spectrogram& operator[](std::size_t p) const { return channels_[p]; }
  Spectrogram& at(std::size_t p) {
    if (p >= channels_.size()) throw Error("spectrogram: channel index out of range");
    return channels_[p];
  }
  const Spectrogram& at(std::size_t p) const {
    if (p >= channels_.size()) throw Error("spectrogram: channel index out of range");
    return channels_[p];
  }

  std::vector<Spectrogram>& channels() { return channels_; }
  const std::vector<Spectrogram>& channels() const { return channels_; }

  MultichannelSpectrogram Select(std::span<const int> indices) const {
    std::vector<Spectrogram> out;
    out.reserve(indices.size());
    for (int p : indices) {
      if (p < 0) throw Error("spectrogram: negative channel index");
      out.push_back(at(static_cast<std::size_t>(p)));
    }
    return MultichannelSpectrogram(std::move(out), config_);
  }

 private:
  std::vector<Spectrogram> channels_;
  StftConfig config_;
};

inline std::size_t NumFrames(std::size_t num_samples, const StftConfig& cfg) {
  const std::size_t padded = num_samples + 2 * static_cast<std::size_t>(cfg.Padding());
  const std::size_t hop = cfg.hop;
  const std::size_t win = cfg.win_len;
  if (padded <= win) return 1;
  return 1 + (padded - win + hop - 1) / hop;
}

// Longest signal that istft can return for a spectrogram of `frames` frames.
inline std::size_t ReconstructableLength(std::size_t frames, const StftConfig& cfg) {
  return frames * cfg.hop + cfg.hop - cfg.win_len;
}

// One-channel analysis. Pads win_len - hop zeros on both ends so every
// sample of the signal sits under a full set of overlapping windows.
inline Spectrogram StftChannel(std::span<const double> signal, const StftConfig& cfg) {
  cfg.Validate();
  if (signal.size() < static_cast<std::size_t>(cfg.hop)) {
    throw Error("stft: signal shorter than one hop");
  }
  const std::size_t pad = cfg.Padding();
  const std::size_t frames = NumFrames(signal.size(), cfg);
  const std::size_t nfft = cfg.FftSize();
  const std::size_t bins = cfg.NumBins();
  const auto window = MakeWindow(cfg);

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> frame(nfft);
  std::vector<Complex> spectrum;
  Spectrogram out(frames, bins);
  for (std::size_t t = 0; t < frames; ++t) {
    std::fill(frame.begin(), frame.end(), 0.0);
    for (std::size_t n = 0; n < static_cast<std::size_t>(cfg.win_len); ++n) {
      const std::ptrdiff_t idx = static_cast<std::ptrdiff_t>(t * cfg.hop + n) -
                                 static_cast<std::ptrdiff_t>(pad);
      if (idx >= 0 && idx < static_cast<std::ptrdiff_t>(signal.size())) {
        frame[n] = signal[idx] * window[n];
      }
    }
    fft.fwd(spectrum, frame);
    for (std::size_t f = 0; f < bins; ++f) out(t, f) = spectrum[f];
  }
  return out;
}

// One-channel synthesis: weighted overlap-add with the same window,
// normalized by the summed squared window.
inline std::vector<double> IstftChannel(const Spectrogram& spec, const StftConfig& cfg,
                                        std::size_t out_len) {
  cfg.Validate();
  if (spec.bins() != static_cast<std::size_t>(cfg.NumBins())) {
    throw Error("istft: bin count does not match config");
  }
  if (spec.frames() == 0) throw Error("istft: empty spectrogram");
  if (out_len > ReconstructableLength(spec.frames(), cfg)) {
    throw Error("istft: out_len " + std::to_string(out_len) + " exceeds reconstructable length " +
                std::to_string(ReconstructableLength(spec.frames(), cfg)));
  }
  const std::size_t pad = cfg.Padding();
  const std::size_t nfft = cfg.FftSize();
  const std::size_t win = cfg.win_len;
  const auto window = MakeWindow(cfg);
  const std::size_t total = (spec.frames() - 1) * cfg.hop + win;

  std::vector<double> acc(total, 0.0);
  std::vector<double> norm(total, 0.0);
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<Complex> spectrum(spec.bins());
  std::vector<double> frame;
  for (std::size_t t = 0; t < spec.frames(); ++t) {
    for (std::size_t f = 0; f < spec.bins(); ++f) spectrum[f] = spec(t, f);
    fft.inv(frame, spectrum, nfft);
    for (std::size_t n = 0; n < win; ++n) {
      acc[t * cfg.hop + n] += frame[n] * window[n];
      norm[t * cfg.hop + n] += window[n] * window[n];
    }
  }
  std::vector<double> out(out_len);
  for (std::size_t n = 0; n < out_len; ++n) out[n] = acc[n + pad] / norm[n + pad];
  return out;
}

inline MultichannelSpectrogram Stft(std::span<const std::vector<double>> signal,
                                    const StftConfig& cfg) {
  if (signal.empty()) throw Error("stft: no channels");
  for (const auto& ch : signal) {
    if (ch.size() != signal.front().size()) throw Error("stft: ragged channel lengths");
  }
  std::vector<Spectrogram> channels;
  channels.reserve(signal.size());
  for (const auto& ch : signal) channels.push_back(StftChannel(ch, cfg));
  return MultichannelSpectrogram(std::move(channels), cfg);
}

inline std::vector<std::vector<double>> Istft(const MultichannelSpectrogram& spec,
                                              const StftConfig& cfg, std::size_t out_len) {
  if (!(spec.config() == cfg)) throw Error("istft: spectrogram built with a different config");
  std::vector<std::vector<double>> out;
  out.reserve(spec.num_channels());
  for (const auto& ch : spec.channels()) out.push_back(IstftChannel(ch, cfg, out_len));
  return out;
}

// Two-sided spectral energy of a one-sided spectrogram: interior bins
// count twice, DC and Nyquist once.
inline double TwoSidedEnergy(const Spectrogram& spec) {
  double e = 0.0;
  const std::size_t last = spec.bins() - 1;
  for (std::size_t f = 0; f < spec.bins(); ++f) {
    const double w = (f == 0 || f == last) ? 1.0 : 2.0;
    for (const auto& v : spec.bin(f)) e += w * std::norm(v);
  }
  return e;
}

}  // namespace spectral

using spectral::MultichannelSpectrogram;
using spectral::Spectrogram;
using spectral::StftConfig;

}  // namespace m2bm
