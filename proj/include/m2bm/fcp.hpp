// Copyright 2026 The m2bm Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Forward convolutive prediction (FCP): per-frequency weighted least-squares
// estimation of a short cross-frame filter that predicts one spectrogram
// from another.
//
// Layout conventions. For an estimate S and taps (I past incl. current, J
// future), the stacked vector at (t, f) is
//   s(t, f) = [S(t-I+1, f), ..., S(t, f), ..., S(t+J, f)]   (zeros outside [0, T))
// and a filter h predicts  y(t, f) = h(f)^H s(t, f).
// Internally each bin is solved for g = conj(h), so that with Z[t, n] = s(t)[n]
// the prediction is simply y = Z g.

#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "m2bm/error.hpp"
#include "m2bm/spectral.hpp"

namespace m2bm::fcp {

struct FcpConfig {
  int past_taps = 20;       // I, includes the current frame
  int future_taps = 1;      // J
  double weight_floor = 1e-2;  // xi
  double diag_load = 1e-10;    // epsilon, relative to mean diagonal

  int Taps() const { return past_taps + future_taps; }

  void Validate() const {
    if (past_taps < 1) throw Error("fcp: past_taps must be >= 1");
    if (future_taps < 0) throw Error("fcp: future_taps must be >= 0");
    if (!(weight_floor > 0.0)) throw Error("fcp: weight_floor must be > 0");
    if (!(diag_load >= 0.0)) throw Error("fcp: diag_load must be >= 0");
  }
};

// Materialized stacked frames, one length-(I+J) vector per (t, f).
class StackedFrames {
 public:
  StackedFrames(std::size_t frames, std::size_t bins, int past, int future)
      : frames_(frames), bins_(bins), past_(past), future_(future),
        data_(frames * bins * static_cast<std::size_t>(past + future)) {}

  std::size_t frames() const { return frames_; }
  std::size_t bins() const { return bins_; }
  int past_taps() const { return past_; }
  int future_taps() const { return future_; }
  int taps() const { return past_ + future_; }

  std::span<Complex> at(std::size_t t, std::size_t f) {
    return {data_.data() + (f * frames_ + t) * taps(), static_cast<std::size_t>(taps())};
  }
  std::span<const Complex> at(std::size_t t, std::size_t f) const {
    return {data_.data() + (f * frames_ + t) * taps(), static_cast<std::size_t>(taps())};
  }

 private:
  std::size_t frames_, bins_;
  int past_, future_;
  std::vector<Complex> data_;
};

inline StackedFrames Stack(const Spectrogram& estimate, const FcpConfig& cfg) {
  cfg.Validate();
  if (estimate.frames() == 0) throw Error("fcp stack: estimate has no frames");
  StackedFrames out(estimate.frames(), estimate.bins(), cfg.past_taps, cfg.future_taps);
  const auto T = static_cast<std::ptrdiff_t>(estimate.frames());
  for (std::size_t f = 0; f < estimate.bins(); ++f) {
    for (std::ptrdiff_t t = 0; t < T; ++t) {
      auto v = out.at(t, f);
      for (int n = 0; n < cfg.Taps(); ++n) {
        const std::ptrdiff_t src = t - cfg.past_taps + 1 + n;
        v[n] = (src >= 0 && src < T) ? estimate(src, f) : Complex{};
      }
    }
  }
  return out;
}

// Weights lambda(t, f) = xi * max |target|^2 + |target(t, f)|^2, with the max
// taken over the whole spectrogram.
class Weights {
 public:
  Weights() = default;
  Weights(std::size_t frames, std::size_t bins) : frames_(frames), values_(frames * bins) {}
  double operator()(std::size_t t, std::size_t f) const { return values_[f * frames_ + t]; }
  double& operator()(std::size_t t, std::size_t f) { return values_[f * frames_ + t]; }
  std::span<const double> bin(std::size_t f) const { return {values_.data() + f * frames_, frames_}; }

 private:
  std::size_t frames_ = 0;
  std::vector<double> values_;
};

inline Weights FcpWeight(const Spectrogram& target, double xi) {
  if (!(xi > 0.0)) throw Error("fcp weight: xi must be > 0");
  double max_power = 0.0;
  for (const auto& v : target.values()) max_power = std::max(max_power, std::norm(v));
  if (!(max_power > 0.0)) throw Error("fcp weight: target spectrogram is identically zero");
  Weights w(target.frames(), target.bins());
  const double floor = xi * max_power;
  for (std::size_t f = 0; f < target.bins(); ++f) {
    for (std::size_t t = 0; t < target.frames(); ++t) w(t, f) = floor + std::norm(target(t, f));
  }
  return w;
}

// Per-frequency filters h(f) of length I+J, plus the weighted and unweighted
// residual energies at the solution.
struct FcpFilter {
  int past_taps = 0;
  int future_taps = 0;
  std::vector<std::vector<Complex>> coeffs;  // [f][n]
  std::vector<double> weighted_objective;    // sum_t |y - h^H s|^2 / lambda
  std::vector<double> unweighted_objective;  // sum_t |y - h^H s|^2

  int taps() const { return past_taps + future_taps; }
  std::size_t bins() const { return coeffs.size(); }
};

// Weighted least-squares fit for a single frequency bin, kept around so the
// loss can be differentiated through the closed-form solution.
class BinFit {
 public:
  BinFit(std::span<const Complex> target, std::span<const Complex> estimate,
         std::span<const double> lambda, const FcpConfig& cfg)
      : past_(cfg.past_taps), eps_(cfg.diag_load) {
    const auto T = static_cast<Eigen::Index>(target.size());
    const Eigen::Index N = cfg.Taps();
    if (estimate.size() != target.size() || lambda.size() != target.size()) {
      throw Error("fcp: bin length mismatch");
    }
    y_.resize(T);
    d_.resize(T);
    z_ = Eigen::MatrixXcd::Zero(T, N);
    for (Eigen::Index t = 0; t < T; ++t) {
      y_(t) = target[t];
      d_(t) = 1.0 / lambda[t];
      for (Eigen::Index n = 0; n < N; ++n) {
        const Eigen::Index src = t - past_ + 1 + n;
        if (src >= 0 && src < T) z_(t, n) = estimate[src];
      }
    }
    const Eigen::MatrixXcd dz = d_.asDiagonal() * z_;
    Eigen::MatrixXcd gram = z_.adjoint() * dz;
    const double trace = gram.diagonal().real().sum();
    g_ = Eigen::VectorXcd::Zero(N);
    if (!(trace > 0.0)) {
      silent_ = true;
      return;
    }
    mu_ = eps_ * trace / static_cast<double>(N);
    gram.diagonal().array() += mu_;
    solver_.compute(gram);
    g_ = solver_.solve(dz.adjoint() * y_);
    if (solver_.info() != Eigen::Success || !g_.allFinite()) {
      throw NumericalError("fcp: weighted normal equations could not be solved");
    }
  }

  bool silent() const { return silent_; }

  // Filter h = conj(g) in the spectrogram's stacking order.
  std::vector<Complex> Filter() const {
    std::vector<Complex> h(g_.size());
    for (Eigen::Index n = 0; n < g_.size(); ++n) h[n] = std::conj(g_(n));
    return h;
  }

  Eigen::VectorXcd Predict() const { return z_ * g_; }

  double WeightedObjective() const {
    return (d_.array() * (y_ - z_ * g_).array().abs2()).sum();
  }
  double UnweightedObjective() const { return (y_ - z_ * g_).squaredNorm(); }

  // Given dL/d(prediction) as a complex number per frame (dL/dRe + i dL/dIm),
  // accumulates dL/d(estimate) into `estimate_grad`. With `through_solve`
  // the filter is treated as a function of the estimate; otherwise it is held
  // fixed.
  void Backward(std::span<const Complex> pred_grad, std::span<Complex> estimate_grad,
                bool through_solve) const {
    const Eigen::Index T = z_.rows();
    const Eigen::Index N = z_.cols();
    if (silent_) return;
    Eigen::VectorXcd gy(T);
    for (Eigen::Index t = 0; t < T; ++t) gy(t) = pred_grad[t];

    // dL = Re sum conj(G[t,n]) dZ[t,n]
    Eigen::MatrixXcd gz = gy * g_.adjoint();
    if (through_solve) {
      const Eigen::VectorXcd u = solver_.solve(z_.adjoint() * gy);
      const Eigen::VectorXcd de = d_.asDiagonal() * (y_ - z_ * g_);
      const Eigen::VectorXcd dzu = d_.asDiagonal() * (z_ * u);
      gz.noalias() += de * u.adjoint();
      gz.noalias() -= dzu * g_.adjoint();
      if (eps_ > 0.0) {
        const double c = 2.0 * eps_ / static_cast<double>(N) * u.dot(g_).real();
        gz.noalias() -= c * (d_.asDiagonal() * z_);
      }
    }
    for (Eigen::Index t = 0; t < T; ++t) {
      for (Eigen::Index n = 0; n < N; ++n) {
        const Eigen::Index src = t - past_ + 1 + n;
        if (src >= 0 && src < T) estimate_grad[src] += gz(t, n);
      }
    }
  }

 private:
  int past_;
  double eps_;
  double mu_ = 0.0;
  bool silent_ = false;
  Eigen::VectorXcd y_;
  Eigen::VectorXd d_;
  Eigen::MatrixXcd z_;
  Eigen::VectorXcd g_;
  Eigen::LDLT<Eigen::MatrixXcd> solver_;
};

inline void RequireFinite(const Spectrogram& s, const char* what) {
  if (!s.AllFinite()) throw NumericalError(std::string(what) + ": non-finite values");
}

// Closed-form solution of the weighted least-squares problem, per frequency,
// with the weights derived from the spectrogram being predicted.
inline FcpFilter FcpSolve(const Spectrogram& target, const Spectrogram& estimate,
                          const FcpConfig& cfg) {
  cfg.Validate();
  target.RequireSameShape(estimate, "fcp solve");
  RequireFinite(target, "fcp solve target");
  RequireFinite(estimate, "fcp solve estimate");
  const Weights lambda = FcpWeight(target, cfg.weight_floor);
  FcpFilter out;
  out.past_taps = cfg.past_taps;
  out.future_taps = cfg.future_taps;
  out.coeffs.resize(target.bins());
  out.weighted_objective.resize(target.bins());
  out.unweighted_objective.resize(target.bins());
  for (std::size_t f = 0; f < target.bins(); ++f) {
    const BinFit fit(target.bin(f), estimate.bin(f), lambda.bin(f), cfg);
    out.coeffs[f] = fit.Filter();
    out.weighted_objective[f] = fit.WeightedObjective();
    out.unweighted_objective[f] = fit.UnweightedObjective();
  }
  return out;
}

inline Spectrogram ApplyFilter(const FcpFilter& filter, const StackedFrames& stacked) {
  if (filter.taps() != stacked.taps() || filter.past_taps != stacked.past_taps()) {
    throw Error("fcp apply: filter length does not match stack depth");
  }
  if (filter.bins() != stacked.bins()) throw Error("fcp apply: bin count mismatch");
  Spectrogram out(stacked.frames(), stacked.bins());
  for (std::size_t f = 0; f < stacked.bins(); ++f) {
    const auto& h = filter.coeffs[f];
    if (static_cast<int>(h.size()) != stacked.taps()) {
      throw Error("fcp apply: filter length does not match stack depth");
    }
    for (std::size_t t = 0; t < stacked.frames(); ++t) {
      const auto s = stacked.at(t, f);
      Complex acc{};
      for (std::size_t n = 0; n < h.size(); ++n) acc += std::conj(h[n]) * s[n];
      out(t, f) = acc;
    }
  }
  return out;
}

// Weighted objective of an arbitrary filter at one bin, for optimality checks.
inline double BinObjective(std::span<const Complex> target, std::span<const Complex> estimate,
                           std::span<const double> lambda, std::span<const Complex> h,
                           int past_taps) {
  const auto T = static_cast<std::ptrdiff_t>(target.size());
  double sum = 0.0;
  for (std::ptrdiff_t t = 0; t < T; ++t) {
    Complex pred{};
    for (std::size_t n = 0; n < h.size(); ++n) {
      const std::ptrdiff_t src = t - past_taps + 1 + static_cast<std::ptrdiff_t>(n);
      if (src >= 0 && src < T) pred += std::conj(h[n]) * estimate[src];
    }
    sum += std::norm(target[t] - pred) / lambda[t];
  }
  return sum;
}

// Re-expresses a (past, future) filter inside a wider tap window.
inline FcpFilter EmbedFilter(const FcpFilter& filter, const FcpConfig& cfg) {
  if (cfg.past_taps < filter.past_taps || cfg.future_taps < filter.future_taps) {
    throw Error("fcp embed: target window is narrower than the filter");
  }
  FcpFilter out;
  out.past_taps = cfg.past_taps;
  out.future_taps = cfg.future_taps;
  const int shift = cfg.past_taps - filter.past_taps;
  out.coeffs.assign(filter.bins(), std::vector<Complex>(cfg.Taps()));
  for (std::size_t f = 0; f < filter.bins(); ++f) {
    for (int n = 0; n < filter.taps(); ++n) out.coeffs[f][n + shift] = filter.coeffs[f][n];
  }
  return out;
}

}  // namespace m2bm::fcp
