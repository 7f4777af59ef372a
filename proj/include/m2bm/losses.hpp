// Copyright 2026 The m2bm Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Training objectives: the RI+magnitude distance, supervised losses,
// per-microphone mixture-constraint (MC) losses and the beamformed-mixture
// (virtual microphone) MC loss. Every loss can optionally accumulate its
// gradient with respect to the two estimates.

#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "m2bm/error.hpp"
#include "m2bm/fcp.hpp"
#include "m2bm/spectral.hpp"

namespace m2bm::losses {

enum class LossMode { kSupervised, kM2m, kM2bm };

inline std::string ToString(LossMode m) {
  switch (m) {
    case LossMode::kSupervised:
      return "supervised";
    case LossMode::kM2m:
      return "m2m";
    case LossMode::kM2bm:
      return "m2bm";
  }
  return "unknown";
}

// How gradients treat the closed-form FCP filters.
enum class FilterGradient {
  kThroughSolve,  // filters are functions of the estimates
  kFrozen,        // filters are constants once solved
};

struct LossBreakdown {
  LossMode mode = LossMode::kSupervised;
  double l_sup_x = 0.0;
  double l_sup_v = 0.0;
  double l_mc_ref = 0.0;
  std::vector<double> l_mc_nonref;  // in microphone order, reference skipped
  std::optional<double> l_mc_bf;
  double total = 0.0;
};

inline void to_json(nlohmann::json& j, const LossBreakdown& b) {
  j = nlohmann::json{{"mode", ToString(b.mode)},
                     {"l_sup_x", b.l_sup_x},
                     {"l_sup_v", b.l_sup_v},
                     {"l_mc_ref", b.l_mc_ref},
                     {"l_mc_nonref", b.l_mc_nonref},
                     {"l_mc_bf", b.l_mc_bf ? nlohmann::json(*b.l_mc_bf) : nlohmann::json(nullptr)},
                     {"total", b.total}};
}

// Gradient of a real loss with respect to the two estimates, stored as
// dL/dRe + i dL/dIm per T-F unit.
struct EstimateGradient {
  Spectrogram x;
  Spectrogram v;

  EstimateGradient() = default;
  EstimateGradient(std::size_t frames, std::size_t bins) : x(frames, bins), v(frames, bins) {}
};

inline double GDist(Complex a, Complex b) {
  return std::abs(a.real() - b.real()) + std::abs(a.imag() - b.imag()) +
         std::abs(std::abs(a) - std::abs(b));
}

inline double Sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// d G(a, b) / d b, as dRe + i dIm. Subgradient 0 at every kink.
inline Complex GDistGradB(Complex a, Complex b) {
  const double mb = std::abs(b);
  double gr = Sign(b.real() - a.real());
  double gi = Sign(b.imag() - a.imag());
  if (mb > 0.0) {
    const double s = Sign(mb - std::abs(a));
    gr += s * b.real() / mb;
    gi += s * b.imag() / mb;
  }
  return {gr, gi};
}

inline double SumMagnitudeChecked(const Spectrogram& ref, const char* what) {
  const double denom = ref.SumMagnitude();
  if (!(denom > 0.0)) throw Error(std::string(what) + ": reference spectrogram is all zero");
  return denom;
}

// sum_{t,f} G(ref, est) / sum_{t,f} |ref|. Optionally adds scale * dF/dest
// into `grad`.
inline double FNorm(const Spectrogram& ref, const Spectrogram& est, Spectrogram* grad = nullptr,
                    double scale = 1.0) {
  ref.RequireSameShape(est, "f_norm");
  const double denom = SumMagnitudeChecked(ref, "f_norm");
  double num = 0.0;
  const auto r = ref.values();
  const auto e = est.values();
  for (std::size_t i = 0; i < r.size(); ++i) num += GDist(r[i], e[i]);
  if (grad) {
    grad->RequireSameShape(ref, "f_norm gradient");
    auto g = grad->values();
    const double k = scale / denom;
    for (std::size_t i = 0; i < r.size(); ++i) g[i] += k * GDistGradB(r[i], e[i]);
  }
  return num / denom;
}

inline LossBreakdown SupervisedLoss(const Spectrogram& x_q, const Spectrogram& v_q,
                                    const Spectrogram& x_hat, const Spectrogram& v_hat,
                                    const Spectrogram& y_q, EstimateGradient* grad = nullptr,
                                    double scale = 1.0) {
  x_q.RequireSameShape(v_q, "supervised loss");
  x_q.RequireSameShape(x_hat, "supervised loss");
  x_q.RequireSameShape(v_hat, "supervised loss");
  x_q.RequireSameShape(y_q, "supervised loss");
  const double denom = SumMagnitudeChecked(y_q, "supervised loss");
  LossBreakdown b;
  b.mode = LossMode::kSupervised;
  const auto xs = x_q.values(), vs = v_q.values(), xh = x_hat.values(), vh = v_hat.values();
  double sx = 0.0, sv = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += GDist(xs[i], xh[i]);
    sv += GDist(vs[i], vh[i]);
  }
  b.l_sup_x = sx / denom;
  b.l_sup_v = sv / denom;
  b.total = b.l_sup_x + b.l_sup_v;
  if (grad) {
    auto gx = grad->x.values();
    auto gv = grad->v.values();
    const double k = scale / denom;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      gx[i] += k * GDistGradB(xs[i], xh[i]);
      gv[i] += k * GDistGradB(vs[i], vh[i]);
    }
  }
  return b;
}

inline double McLossRef(const Spectrogram& y_q, const Spectrogram& x_hat, const Spectrogram& v_hat,
                        EstimateGradient* grad = nullptr, double scale = 1.0) {
  y_q.RequireSameShape(x_hat, "mc_loss_ref");
  y_q.RequireSameShape(v_hat, "mc_loss_ref");
  const Spectrogram y_hat = x_hat + v_hat;
  if (!grad) return FNorm(y_q, y_hat);
  Spectrogram g(y_q.frames(), y_q.bins());
  const double loss = FNorm(y_q, y_hat, &g, scale);
  grad->x += g;
  grad->v += g;
  return loss;
}

// MC loss against any mixture `target` (a physical non-reference microphone
// or the beamformed virtual microphone). The target filter h and the
// non-target filter r are each fitted independently to predict `target` from
// their own stacked estimate.
inline double McLossFiltered(const Spectrogram& target, const Spectrogram& x_hat,
                             const Spectrogram& v_hat, const fcp::FcpConfig& cfg,
                             EstimateGradient* grad = nullptr, double scale = 1.0,
                             FilterGradient filter_grad = FilterGradient::kThroughSolve) {
  cfg.Validate();
  target.RequireSameShape(x_hat, "mc loss");
  target.RequireSameShape(v_hat, "mc loss");
  fcp::RequireFinite(target, "mc loss target");
  fcp::RequireFinite(x_hat, "mc loss target estimate");
  fcp::RequireFinite(v_hat, "mc loss non-target estimate");
  const double denom = SumMagnitudeChecked(target, "mc loss");
  const fcp::Weights lambda = fcp::FcpWeight(target, cfg.weight_floor);
  const std::size_t T = target.frames();
  const bool through = filter_grad == FilterGradient::kThroughSolve;

  double num = 0.0;
  std::vector<Complex> pred_grad(T);
  for (std::size_t f = 0; f < target.bins(); ++f) {
    const auto y = target.bin(f);
    const fcp::BinFit hx(y, x_hat.bin(f), lambda.bin(f), cfg);
    const fcp::BinFit rv(y, v_hat.bin(f), lambda.bin(f), cfg);
    const Eigen::VectorXcd pred = hx.Predict() + rv.Predict();
    for (std::size_t t = 0; t < T; ++t) {
      num += GDist(y[t], pred(t));
      if (grad) pred_grad[t] = (scale / denom) * GDistGradB(y[t], pred(t));
    }
    if (grad) {
      hx.Backward(pred_grad, grad->x.bin(f), through);
      rv.Backward(pred_grad, grad->v.bin(f), through);
    }
  }
  return num / denom;
}

inline double McLossNonref(const Spectrogram& y_p, const Spectrogram& x_hat,
                           const Spectrogram& v_hat, const fcp::FcpConfig& cfg,
                           EstimateGradient* grad = nullptr, double scale = 1.0,
                           FilterGradient filter_grad = FilterGradient::kThroughSolve) {
  return McLossFiltered(y_p, x_hat, v_hat, cfg, grad, scale, filter_grad);
}

inline double McLossBf(const Spectrogram& y_bf, const Spectrogram& x_hat, const Spectrogram& v_hat,
                       const fcp::FcpConfig& cfg, EstimateGradient* grad = nullptr,
                       double scale = 1.0,
                       FilterGradient filter_grad = FilterGradient::kThroughSolve) {
  return McLossFiltered(y_bf, x_hat, v_hat, cfg, grad, scale, filter_grad);
}

// L_MC,q + 1/(P-1) sum_{p != q} L_MC,p, plus L_MC,BF (unweighted) when a
// beamformed mixture is supplied.
inline LossBreakdown TotalMcLoss(const MultichannelSpectrogram& y, int ref_mic,
                                 const Spectrogram* y_bf, const Spectrogram& x_hat,
                                 const Spectrogram& v_hat, const fcp::FcpConfig& cfg,
                                 EstimateGradient* grad = nullptr, double scale = 1.0,
                                 FilterGradient filter_grad = FilterGradient::kThroughSolve) {
  const std::size_t P = y.num_channels();
  if (ref_mic < 0 || static_cast<std::size_t>(ref_mic) >= P) {
    throw Error("total mc loss: ref_mic out of range");
  }
  if (P < 2 && !y_bf) throw Error("total mc loss: need P >= 2 or a beamformed mixture");
  LossBreakdown b;
  b.mode = y_bf ? LossMode::kM2bm : LossMode::kM2m;
  b.l_mc_ref = McLossRef(y[ref_mic], x_hat, v_hat, grad, scale);
  double nonref_sum = 0.0;
  const double w = P > 1 ? 1.0 / static_cast<double>(P - 1) : 0.0;
  for (std::size_t p = 0; p < P; ++p) {
    if (p == static_cast<std::size_t>(ref_mic)) continue;
    const double l = McLossNonref(y[p], x_hat, v_hat, cfg, grad, scale * w, filter_grad);
    b.l_mc_nonref.push_back(l);
    nonref_sum += l;
  }
  b.total = b.l_mc_ref + w * nonref_sum;
  if (y_bf) {
    b.l_mc_bf = McLossBf(*y_bf, x_hat, v_hat, cfg, grad, scale, filter_grad);
    b.total += *b.l_mc_bf;
  }
  return b;
}

}  // namespace m2bm::losses
