// Copyright 2026 The m2bm Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// A small two-head enhancement model. Each head maps the real/imaginary
// parts of the input mixture channels over a short causal frame context to
// the real/imaginary parts of its estimate, with one set of 2x2 real weights
// per (band group, head, input channel, context frame) and a per-group bias.

#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "m2bm/error.hpp"
#include "m2bm/losses.hpp"
#include "m2bm/spectral.hpp"

namespace m2bm::model {

inline constexpr std::size_t kMaxParams = 4096;

struct ModelShape {
  std::vector<int> input_channels{0};  // mixture channels fed to the model
  int ref_mic = 0;                     // channel the estimates refer to
  int context = 2;                     // frames t, t-1, ..., t-context+1
  int groups = 8;                      // frequency band groups

  std::size_t NumWeights() const {
    return static_cast<std::size_t>(groups) * 2 * input_channels.size() * context * 4;
  }
  std::size_t NumParams() const { return NumWeights() + static_cast<std::size_t>(groups) * 2 * 2; }

  void Validate() const {
    if (input_channels.empty()) throw Error("model: no input channels");
    if (context < 1 || groups < 1) throw Error("model: context and groups must be >= 1");
    for (int c : input_channels) {
      if (c < 0) throw Error("model: negative input channel");
    }
    if (ref_mic < 0) throw Error("model: negative ref_mic");
    if (NumParams() > kMaxParams) {
      throw Error("model: " + std::to_string(NumParams()) + " parameters exceed the 4096 limit");
    }
  }
};

struct Estimates {
  Spectrogram x;  // target at the reference microphone
  Spectrogram v;  // non-target at the reference microphone
};

enum class Init { kRandom, kIdentity, kZero };

class ToyModel {
 public:
  ToyModel() = default;
  explicit ToyModel(ModelShape shape) : shape_(std::move(shape)) {
    shape_.Validate();
    params_.assign(shape_.NumParams(), 0.0);
  }
  ToyModel(ModelShape shape, std::vector<double> params) : shape_(std::move(shape)) {
    shape_.Validate();
    if (params.size() != shape_.NumParams()) {
      throw Error("model: expected " + std::to_string(shape_.NumParams()) + " parameters, got " +
                  std::to_string(params.size()));
    }
    params_ = std::move(params);
  }

  const ModelShape& shape() const { return shape_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  std::size_t WeightIndex(int group, int head, int ch, int k) const {
    const std::size_t C = shape_.input_channels.size();
    return ((((static_cast<std::size_t>(group) * 2 + head) * C + ch) * shape_.context + k)) * 4;
  }
  std::size_t BiasIndex(int group, int head) const {
    return shape_.NumWeights() + (static_cast<std::size_t>(group) * 2 + head) * 2;
  }

  static int GroupOf(std::size_t f, std::size_t bins, int groups) {
    return static_cast<int>(f * static_cast<std::size_t>(groups) / bins);
  }

  void Initialize(Init init, std::uint64_t seed, double scale = 0.1) {
    std::fill(params_.begin(), params_.end(), 0.0);
    if (init == Init::kRandom) {
      std::mt19937_64 rng(seed);
      std::normal_distribution<double> normal(0.0, scale);
      for (std::size_t i = 0; i < shape_.NumWeights(); ++i) params_[i] = normal(rng);
    } else if (init == Init::kIdentity) {
      const auto& in = shape_.input_channels;
      const auto it = std::find(in.begin(), in.end(), shape_.ref_mic);
      if (it == in.end()) throw Error("model: identity init needs ref_mic among the inputs");
      const int ch = static_cast<int>(it - in.begin());
      for (int g = 0; g < shape_.groups; ++g) {
        const std::size_t i = WeightIndex(g, 0, ch, 0);
        params_[i] = 1.0;      // Re <- Re
        params_[i + 3] = 1.0;  // Im <- Im
      }
    }
  }

  void CheckInput(const MultichannelSpectrogram& y) const {
    for (int c : shape_.input_channels) {
      if (static_cast<std::size_t>(c) >= y.num_channels()) {
        throw Error("model: input channel " + std::to_string(c) + " not present in a " +
                    std::to_string(y.num_channels()) + "-channel mixture");
      }
    }
    if (y.bins() == 0 || y.frames() == 0) throw Error("model: empty mixture");
  }

  Estimates Forward(const MultichannelSpectrogram& y) const {
    CheckInput(y);
    const std::size_t T = y.frames(), F = y.bins();
    const int C = static_cast<int>(shape_.input_channels.size());
    const int K = shape_.context;
    Estimates out{Spectrogram(T, F), Spectrogram(T, F)};
    for (std::size_t f = 0; f < F; ++f) {
      const int g = GroupOf(f, F, shape_.groups);
      for (int head = 0; head < 2; ++head) {
        Spectrogram& dst = head == 0 ? out.x : out.v;
        const std::size_t bi = BiasIndex(g, head);
        for (std::size_t t = 0; t < T; ++t) {
          double re = params_[bi], im = params_[bi + 1];
          for (int ch = 0; ch < C; ++ch) {
            const Spectrogram& src = y[shape_.input_channels[ch]];
            for (int k = 0; k < K && static_cast<std::size_t>(k) <= t; ++k) {
              const Complex s = src(t - k, f);
              const double* w = &params_[WeightIndex(g, head, ch, k)];
              re += w[0] * s.real() + w[1] * s.imag();
              im += w[2] * s.real() + w[3] * s.imag();
            }
          }
          dst(t, f) = {re, im};
        }
      }
    }
    return out;
  }

  // Accumulates dL/dparams given dL/d(estimates).
  void Backward(const MultichannelSpectrogram& y, const losses::EstimateGradient& grad,
                std::span<double> param_grad) const {
    CheckInput(y);
    if (param_grad.size() != params_.size()) throw Error("model: gradient size mismatch");
    const std::size_t T = y.frames(), F = y.bins();
    const int C = static_cast<int>(shape_.input_channels.size());
    const int K = shape_.context;
    for (std::size_t f = 0; f < F; ++f) {
      const int g = GroupOf(f, F, shape_.groups);
      for (int head = 0; head < 2; ++head) {
        const Spectrogram& up = head == 0 ? grad.x : grad.v;
        const std::size_t bi = BiasIndex(g, head);
        for (std::size_t t = 0; t < T; ++t) {
          const Complex d = up(t, f);
          if (d == Complex{}) continue;
          param_grad[bi] += d.real();
          param_grad[bi + 1] += d.imag();
          for (int ch = 0; ch < C; ++ch) {
            const Spectrogram& src = y[shape_.input_channels[ch]];
            for (int k = 0; k < K && static_cast<std::size_t>(k) <= t; ++k) {
              const Complex s = src(t - k, f);
              double* w = &param_grad[WeightIndex(g, head, ch, k)];
              w[0] += d.real() * s.real();
              w[1] += d.real() * s.imag();
              w[2] += d.imag() * s.real();
              w[3] += d.imag() * s.imag();
            }
          }
        }
      }
    }
  }

 private:
  ModelShape shape_;
  std::vector<double> params_;
};

}  // namespace m2bm::model
