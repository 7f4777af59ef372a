// Copyright 2026 The m2bm Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Training harness: loss dispatch per training regime, gradient engines
// (central finite differences and the analytic path), plain gradient
// descent and held-out evaluation.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "m2bm/error.hpp"
#include "m2bm/fcp.hpp"
#include "m2bm/losses.hpp"
#include "m2bm/model.hpp"
#include "m2bm/scene.hpp"
#include "m2bm/spectral.hpp"

namespace m2bm::trainer {

using losses::EstimateGradient;
using losses::FilterGradient;
using losses::LossBreakdown;
using losses::LossMode;
using model::Estimates;
using model::ToyModel;

enum class Mode { kSupervised, kM2m, kM2bm, kSuperM2m, kSuperM2bm };
enum class Tag { kSimulated, kReal };
enum class GradMethod { kFiniteDiff, kAnalytic };

inline std::string ToString(Mode m) {
  switch (m) {
    case Mode::kSupervised: return "supervised";
    case Mode::kM2m: return "m2m";
    case Mode::kM2bm: return "m2bm";
    case Mode::kSuperM2m: return "super_m2m";
    case Mode::kSuperM2bm: return "super_m2bm";
  }
  return "unknown";
}

inline Mode ParseMode(const std::string& s) {
  if (s == "supervised") return Mode::kSupervised;
  if (s == "m2m") return Mode::kM2m;
  if (s == "m2bm") return Mode::kM2bm;
  if (s == "super_m2m") return Mode::kSuperM2m;
  if (s == "super_m2bm") return Mode::kSuperM2bm;
  throw Error("unknown training mode '" + s + "'");
}

inline std::string ToString(Tag t) { return t == Tag::kSimulated ? "simulated" : "real"; }

inline Tag ParseTag(const std::string& s) {
  if (s == "simulated") return Tag::kSimulated;
  if (s == "real" || s == "real-like") return Tag::kReal;
  throw Error("unknown sample tag '" + s + "'");
}

// One training or evaluation mixture. Real-like samples may still carry
// ground truth (for evaluation); training never reads it for them.
struct Sample {
  std::string name;
  Tag tag = Tag::kSimulated;
  int ref_mic = 0;
  MultichannelSpectrogram y;
  std::optional<Spectrogram> x_ref;  // target image at ref_mic
  std::optional<Spectrogram> v_ref;  // non-target image at ref_mic
  std::optional<Spectrogram> y_bf;   // beamformed mixture (virtual microphone)
  std::vector<double> x_ref_time;    // time-domain target image at ref_mic
  std::size_t num_samples = 0;
};

inline Sample FromBundle(const scene::SceneBundle& b, Tag tag, std::string name = {}) {
  Sample s;
  s.name = std::move(name);
  s.tag = tag;
  s.ref_mic = b.ref_mic;
  s.y = b.y;
  s.x_ref = b.x[b.ref_mic];
  s.v_ref = b.v[b.ref_mic];
  s.x_ref_time = b.x_time[b.ref_mic];
  s.num_samples = b.num_samples();
  return s;
}

// Which loss a sample contributes under a training regime; nullopt means the
// sample is not used.
inline std::optional<LossMode> DispatchLoss(Mode mode, Tag tag) {
  const bool sim = tag == Tag::kSimulated;
  switch (mode) {
    case Mode::kSupervised:
      return sim ? std::optional(LossMode::kSupervised) : std::nullopt;
    case Mode::kM2m:
      return sim ? std::nullopt : std::optional(LossMode::kM2m);
    case Mode::kM2bm:
      return sim ? std::nullopt : std::optional(LossMode::kM2bm);
    case Mode::kSuperM2m:
      return sim ? LossMode::kSupervised : LossMode::kM2m;
    case Mode::kSuperM2bm:
      return sim ? LossMode::kSupervised : LossMode::kM2bm;
  }
  return std::nullopt;
}

inline LossBreakdown LossForMode(LossMode mode, const Sample& s, const Estimates& est,
                                 const fcp::FcpConfig& cfg, EstimateGradient* grad = nullptr,
                                 double scale = 1.0,
                                 FilterGradient filter_grad = FilterGradient::kThroughSolve) {
  switch (mode) {
    case LossMode::kSupervised:
      if (!s.x_ref || !s.v_ref) {
        throw Error("supervised loss needs ground-truth images (sample '" + s.name + "')");
      }
      return losses::SupervisedLoss(*s.x_ref, *s.v_ref, est.x, est.v, s.y.at(s.ref_mic), grad,
                                    scale);
    case LossMode::kM2m:
      return losses::TotalMcLoss(s.y, s.ref_mic, nullptr, est.x, est.v, cfg, grad, scale,
                                 filter_grad);
    case LossMode::kM2bm:
      if (!s.y_bf) throw Error("m2bm loss needs a beamformed mixture (sample '" + s.name + "')");
      return losses::TotalMcLoss(s.y, s.ref_mic, &*s.y_bf, est.x, est.v, cfg, grad, scale,
                                 filter_grad);
  }
  throw Error("unknown loss mode");
}

// Loss of `m` on one sample; with `grad` the analytic parameter gradient is
// accumulated into it.
inline double SampleObjective(const ToyModel& m, const Sample& s, LossMode mode,
                              const fcp::FcpConfig& cfg, std::vector<double>* grad = nullptr,
                              double scale = 1.0,
                              FilterGradient filter_grad = FilterGradient::kThroughSolve) {
  const Estimates est = m.Forward(s.y);
  if (!grad) return LossForMode(mode, s, est, cfg, nullptr, 1.0, filter_grad).total * scale;
  EstimateGradient eg(s.y.frames(), s.y.bins());
  const double loss = LossForMode(mode, s, est, cfg, &eg, scale, filter_grad).total;
  m.Backward(s.y, eg, *grad);
  return loss * scale;
}

using ScalarFn = std::function<double(std::span<const double>)>;

// Central differences with step fd_step * max(1, |p_i|).
inline std::vector<double> FiniteDifferenceGradient(std::span<const double> params,
                                                    const ScalarFn& loss, double fd_step) {
  if (!(fd_step > 0.0)) throw Error("finite differences: fd_step must be > 0");
  std::vector<double> p(params.begin(), params.end());
  std::vector<double> g(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double orig = p[i];
    const double h = fd_step * std::max(1.0, std::abs(orig));
    p[i] = orig + h;
    const double lp = loss(p);
    p[i] = orig - h;
    const double lm = loss(p);
    p[i] = orig;
    if (!std::isfinite(lp) || !std::isfinite(lm)) {
      throw NumericalError("finite differences: non-finite loss when perturbing parameter " +
                           std::to_string(i));
    }
    g[i] = (lp - lm) / (2.0 * h);
  }
  return g;
}

// Value and optional analytic gradient of an objective at a model.
using Objective = std::function<double(const ToyModel&, std::vector<double>*)>;

inline std::vector<double> Gradient(const ToyModel& m, const Objective& objective,
                                    GradMethod method, double fd_step = 1e-4) {
  const double base = objective(m, nullptr);
  if (!std::isfinite(base)) throw NumericalError("gradient: loss is not finite at the current point");
  if (method == GradMethod::kAnalytic) {
    std::vector<double> g(m.params().size(), 0.0);
    objective(m, &g);
    return g;
  }
  ToyModel probe = m;
  return FiniteDifferenceGradient(m.params(), [&](std::span<const double> p) {
    std::copy(p.begin(), p.end(), probe.params().begin());
    return objective(probe, nullptr);
  }, fd_step);
}

inline double RelativeError(std::span<const double> a, std::span<const double> ref) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - ref[i]) * (a[i] - ref[i]);
    den += ref[i] * ref[i];
  }
  if (den == 0.0) return std::sqrt(num);
  return std::sqrt(num / den);
}

inline constexpr double kSiSdrCapDb = 80.0;

// Scale-invariant SDR in dB, clamped to +-80 dB.
inline double SiSdr(std::span<const double> est, std::span<const double> ref) {
  if (est.size() != ref.size()) throw Error("si-sdr: length mismatch");
  double dot = 0.0, rr = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    dot += est[i] * ref[i];
    rr += ref[i] * ref[i];
  }
  if (!(rr > 0.0)) throw Error("si-sdr: reference is silent");
  const double alpha = dot / rr;
  double target = 0.0, noise = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double s = alpha * ref[i];
    target += s * s;
    noise += (est[i] - s) * (est[i] - s);
  }
  if (target <= 0.0) return -kSiSdrCapDb;
  if (noise <= 0.0) return kSiSdrCapDb;
  return std::clamp(10.0 * std::log10(target / noise), -kSiSdrCapDb, kSiSdrCapDb);
}

inline double Snr(std::span<const double> est, std::span<const double> ref) {
  if (est.size() != ref.size()) throw Error("snr: length mismatch");
  double rr = 0.0, ee = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    rr += ref[i] * ref[i];
    ee += (est[i] - ref[i]) * (est[i] - ref[i]);
  }
  if (ee <= 0.0) return kSiSdrCapDb;
  if (rr <= 0.0) return -kSiSdrCapDb;
  return std::clamp(10.0 * std::log10(rr / ee), -kSiSdrCapDb, kSiSdrCapDb);
}

struct TrainConfig {
  Mode mode = Mode::kSupervised;
  double lr = 0.05;
  int steps = 100;
  int batch = 1;
  std::uint64_t seed = 0;
  fcp::FcpConfig fcp;
  GradMethod grad = GradMethod::kAnalytic;
  double fd_step = 1e-4;
  FilterGradient filter_grad = FilterGradient::kThroughSolve;
  // Mixing pattern of simulated and real-like samples in co-training.
  int sim_per_cycle = 1;
  int real_per_cycle = 1;
  model::ModelShape model;
  model::Init init = model::Init::kRandom;
  double init_scale = 0.1;

  void Validate() const {
    if (!(lr > 0.0)) throw Error("train: lr must be > 0");
    if (steps < 0) throw Error("train: steps must be >= 0");
    if (batch < 1) throw Error("train: batch must be >= 1");
    if (!(fd_step > 0.0)) throw Error("train: fd_step must be > 0");
    if (sim_per_cycle < 0 || real_per_cycle < 0 || sim_per_cycle + real_per_cycle == 0) {
      throw Error("train: bad sim/real mixing pattern");
    }
    fcp.Validate();
    model.Validate();
  }
};

struct SceneScore {
  std::string name;
  double si_sdr_db = 0.0;
  double snr_db = 0.0;
  double mc_loss = 0.0;
};

struct EvalReport {
  double si_sdr_db = 0.0;  // mean over held-out scenes
  double snr_db = 0.0;
  double mc_loss = 0.0;    // mean M2M loss on held-out mixtures
  std::vector<SceneScore> scenes;
  std::vector<double> loss_curve;  // per-step mean batch loss
  double initial_loss = 0.0;       // mean training-set loss before/after training
  double final_loss = 0.0;
  int supervised_evals = 0;
  int m2m_evals = 0;
  int m2bm_evals = 0;
};

inline Estimates Enhance(const ToyModel& m, const MultichannelSpectrogram& y) { return m.Forward(y); }

inline EvalReport Evaluate(const ToyModel& m, std::span<const Sample> heldout,
                           const fcp::FcpConfig& cfg) {
  EvalReport r;
  for (const auto& s : heldout) {
    std::vector<double> ref = s.x_ref_time;
    if (ref.empty()) {
      if (!s.x_ref) throw Error("evaluate: sample '" + s.name + "' has no ground-truth target");
      ref = spectral::IstftChannel(*s.x_ref, s.y.config(), s.num_samples);
    }
    const Estimates est = m.Forward(s.y);
    const auto x_hat = spectral::IstftChannel(est.x, s.y.config(), ref.size());
    SceneScore sc;
    sc.name = s.name;
    sc.si_sdr_db = SiSdr(x_hat, ref);
    sc.snr_db = Snr(x_hat, ref);
    sc.mc_loss = losses::TotalMcLoss(s.y, s.ref_mic, nullptr, est.x, est.v, cfg).total;
    r.scenes.push_back(sc);
  }
  if (!r.scenes.empty()) {
    const double n = static_cast<double>(r.scenes.size());
    for (const auto& sc : r.scenes) {
      r.si_sdr_db += sc.si_sdr_db / n;
      r.snr_db += sc.snr_db / n;
      r.mc_loss += sc.mc_loss / n;
    }
  }
  return r;
}

struct TrainResult {
  ToyModel model;
  EvalReport report;
};

namespace detail {

// Cycles through a pool in an order reshuffled every epoch.
class PoolCursor {
 public:
  PoolCursor(std::vector<std::size_t> items, std::uint64_t seed)
      : items_(std::move(items)), rng_(seed) {}
  bool empty() const { return items_.empty(); }
  std::size_t Next() {
    if (pos_ == 0) std::shuffle(items_.begin(), items_.end(), rng_);
    const std::size_t v = items_[pos_];
    pos_ = (pos_ + 1) % items_.size();
    return v;
  }

 private:
  std::vector<std::size_t> items_;
  std::mt19937_64 rng_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline TrainResult Train(const TrainConfig& cfg, std::span<const Sample> dataset,
                         std::span<const Sample> heldout = {}) {
  cfg.Validate();
  if (dataset.empty()) throw Error("train: empty dataset");

  std::vector<std::size_t> sim, real, used;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto kind = DispatchLoss(cfg.mode, dataset[i].tag);
    if (!kind) continue;
    if (*kind == LossMode::kM2bm && !dataset[i].y_bf) {
      throw Error("train: sample '" + dataset[i].name + "' has no beamformed mixture");
    }
    used.push_back(i);
    (dataset[i].tag == Tag::kSimulated ? sim : real).push_back(i);
  }
  if (used.empty()) {
    throw Error("train: no sample in the dataset is usable in mode " + ToString(cfg.mode));
  }

  ToyModel m(cfg.model);
  m.Initialize(cfg.init, scene::MixSeed(cfg.seed, 1), cfg.init_scale);

  auto loss_of = [&](const ToyModel& mm, const Sample& s, std::vector<double>* g, double scale) {
    return SampleObjective(mm, s, *DispatchLoss(cfg.mode, s.tag), cfg.fcp, g, scale,
                           cfg.filter_grad);
  };
  auto dataset_loss = [&](const ToyModel& mm) {
    double sum = 0.0;
    for (std::size_t i : used) sum += loss_of(mm, dataset[i], nullptr, 1.0);
    return sum / static_cast<double>(used.size());
  };

  EvalReport report;
  report.initial_loss = dataset_loss(m);
  if (!std::isfinite(report.initial_loss)) throw NumericalError("train: initial loss is not finite");

  detail::PoolCursor sim_cursor(sim, scene::MixSeed(cfg.seed, 2));
  detail::PoolCursor real_cursor(real, scene::MixSeed(cfg.seed, 3));
  std::vector<Tag> pattern;
  if (!sim.empty()) pattern.insert(pattern.end(), cfg.sim_per_cycle, Tag::kSimulated);
  if (!real.empty()) pattern.insert(pattern.end(), cfg.real_per_cycle, Tag::kReal);
  if (pattern.empty()) throw Error("train: mixing pattern selects no usable pool");
  std::size_t cursor = 0;

  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<std::size_t> batch;
    for (int b = 0; b < cfg.batch; ++b) {
      const Tag tag = pattern[cursor++ % pattern.size()];
      batch.push_back(tag == Tag::kSimulated ? sim_cursor.Next() : real_cursor.Next());
    }
    const double scale = 1.0 / static_cast<double>(batch.size());
    const Objective objective = [&](const ToyModel& mm, std::vector<double>* g) {
      double total = 0.0;
      for (std::size_t i : batch) total += loss_of(mm, dataset[i], g, scale);
      return total;
    };
    double loss = 0.0;
    std::vector<double> grad;
    try {
      loss = objective(m, nullptr);
      if (!std::isfinite(loss)) throw NumericalError("non-finite loss");
      grad = Gradient(m, objective, cfg.grad, cfg.fd_step);
    } catch (const NumericalError& e) {
      throw NumericalError("train: diverged at step " + std::to_string(step) + ": " + e.what());
    }
    for (std::size_t i : batch) {
      switch (*DispatchLoss(cfg.mode, dataset[i].tag)) {
        case LossMode::kSupervised: ++report.supervised_evals; break;
        case LossMode::kM2m: ++report.m2m_evals; break;
        case LossMode::kM2bm: ++report.m2bm_evals; break;
      }
    }
    report.loss_curve.push_back(loss);
    for (std::size_t i = 0; i < grad.size(); ++i) m.params()[i] -= cfg.lr * grad[i];
    if (!std::all_of(m.params().begin(), m.params().end(), [](double v) { return std::isfinite(v); })) {
      throw NumericalError("train: diverged at step " + std::to_string(step) +
                           ": non-finite parameters");
    }
  }
  report.final_loss = dataset_loss(m);
  if (!std::isfinite(report.final_loss)) throw NumericalError("train: final loss is not finite");

  if (!heldout.empty()) {
    const EvalReport ev = Evaluate(m, heldout, cfg.fcp);
    report.si_sdr_db = ev.si_sdr_db;
    report.snr_db = ev.snr_db;
    report.mc_loss = ev.mc_loss;
    report.scenes = ev.scenes;
  }
  return {std::move(m), std::move(report)};
}

// Wraps a mono model as a per-channel enhancer for beamformed-mixture
// derivation: channel p is fed to the model as if it were its only input.
inline std::function<std::pair<Spectrogram, Spectrogram>(const MultichannelSpectrogram&, int)>
MonoEnhancer(const ToyModel& m) {
  if (m.shape().input_channels.size() != 1) {
    throw Error("mono enhancer: model must take exactly one input channel");
  }
  return [&m](const MultichannelSpectrogram& y, int p) {
    const int in = m.shape().input_channels.front();
    std::vector<Spectrogram> chans(static_cast<std::size_t>(in) + 1, Spectrogram(y.frames(), y.bins()));
    chans[in] = y.at(p);
    const Estimates e = m.Forward(MultichannelSpectrogram(std::move(chans), y.config()));
    return std::make_pair(e.x, e.v);
  };
}

}  // namespace m2bm::trainer
