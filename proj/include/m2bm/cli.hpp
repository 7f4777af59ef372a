// Copyright 2026 The m2bm Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// The m2bm command-line tool:
//
//   m2bm simulate  --config scene.json --out DIR
//   m2bm beamform  --mixture mix.wav (--estimates DIR | --oracle DIR | --checkpoint CK)
//                  --ref-mic Q [--mics 0,1,..] --out DIR
//   m2bm train     --config train.json --out DIR
//   m2bm enhance   --checkpoint CK --mixture mix.wav --out DIR
//   m2bm gradcheck --config train.json --out DIR
//   m2bm eval      --checkpoint CK --scenes DIR... --out DIR
//
// Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure.

#pragma once

#include <chrono>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "m2bm/beamform.hpp"
#include "m2bm/error.hpp"
#include "m2bm/io.hpp"
#include "m2bm/scene.hpp"
#include "m2bm/spectral.hpp"
#include "m2bm/trainer.hpp"
#include "m2bm/wav.hpp"

#ifndef M2BM_VERSION
#define M2BM_VERSION "unknown"
#endif

namespace m2bm::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitNumerical = 2;

namespace fs = std::filesystem;
using nlohmann::json;

namespace detail {

class Timer {
 public:
  double Seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline std::string Join(const fs::path& dir, const char* name) { return (dir / name).string(); }

inline void WriteManifest(const fs::path& dir, io::RunManifest m, const Timer& timer) {
  m.tool_version = M2BM_VERSION;
  m.wall_time = timer.Seconds();
  m.outputs.push_back(Join(dir, "manifest.json"));
  io::WriteJsonFile(Join(dir, "manifest.json"), io::ToJson(m));
}

inline double SnrDb(const Spectrogram& x, const Spectrogram& v) {
  const double ev = spectral::TwoSidedEnergy(v);
  const double ex = spectral::TwoSidedEnergy(x);
  if (ev <= 0.0) return trainer::kSiSdrCapDb;
  if (ex <= 0.0) return -trainer::kSiSdrCapDb;
  return 10.0 * std::log10(ex / ev);
}

}  // namespace detail

struct SimulateArgs {
  std::string config, out;
};

inline int Simulate(const SimulateArgs& a) {
  detail::Timer timer;
  const auto spec = io::ParseScene(io::ReadJsonFile(a.config), io::ConfigDir(a.config));
  spectral::StftConfig stft;
  stft.sample_rate = spec.sample_rate;
  const auto bundle = scene::Simulate(spec, stft);
  const fs::path dir(a.out);
  io::WriteSceneDir(a.out, bundle);
  io::RunManifest m{"simulate", a.config, spec.seed, {a.config}, {}, {}, 0.0};
  for (const char* f : {io::kMixtureFile, io::kTargetFile, io::kNoiseFile}) {
    m.outputs.push_back(detail::Join(dir, f));
  }
  detail::WriteManifest(dir, m, timer);
  return kExitOk;
}

struct BeamformArgs {
  std::string mixture, estimates, oracle, checkpoint, out;
  int ref_mic = -1;
  std::vector<int> mics;
  int win_len = 512, hop = 128;
  double loading = beamform::kDefaultLoading;
};

inline int Beamform(const BeamformArgs& a) {
  detail::Timer timer;
  if (!fs::exists(a.mixture)) throw Error("missing mixture '" + a.mixture + "'");
  const auto mix = wav::Read(a.mixture);
  const int P = static_cast<int>(mix.num_channels());

  std::vector<int> mics = a.mics;
  if (mics.empty()) {
    for (int p = 0; p < P; ++p) mics.push_back(p);
  }

  io::RunManifest m{"beamform", "", 0, {a.mixture}, {}, {}, 0.0};
  spectral::StftConfig stft;
  stft.sample_rate = mix.sample_rate;
  stft.win_len = a.win_len;
  stft.hop = a.hop;
  std::optional<io::Checkpoint> ck;
  if (!a.checkpoint.empty()) {
    ck = io::ReadCheckpoint(a.checkpoint);
    stft = ck->stft;
    m.inputs.push_back(a.checkpoint);
    m.seed = ck->seed;
  }
  stft.Validate();
  const auto y = io::StftOf(mix, stft, a.mixture);

  std::optional<MultichannelSpectrogram> x_img, v_img;
  beamform::Enhancer enhancer;
  const std::string img_dir = !a.estimates.empty() ? a.estimates : a.oracle;
  if (ck) {
    enhancer = trainer::MonoEnhancer(ck->model);
  } else {
    const auto img = io::ReadImages(img_dir);
    if (static_cast<int>(img.target.num_channels()) != P ||
        img.target.num_samples() != mix.num_samples()) {
      throw Error("'" + img_dir + "': estimates do not match the mixture's shape");
    }
    x_img = io::StftOf(img.target, stft, img_dir);
    v_img = io::StftOf(img.noise, stft, img_dir);
    enhancer = beamform::OracleEnhancer(*x_img, *v_img);
    m.inputs.push_back(detail::Join(img_dir, io::kTargetFile));
    m.inputs.push_back(detail::Join(img_dir, io::kNoiseFile));
  }

  const auto res = beamform::DeriveBfMixture(y, enhancer, mics, a.ref_mic, a.loading);
  const fs::path dir(a.out);
  fs::create_directories(dir);
  const auto ybf = spectral::IstftChannel(res.y_bf, stft, mix.num_samples());
  wav::Write(detail::Join(dir, "beamformed.wav"), {mix.sample_rate, {ybf}});

  json report = io::ToJson(res);
  report["ref_mic"] = a.ref_mic;
  report["loading"] = a.loading;
  report["stft"] = io::ToJson(stft);
  if (!a.oracle.empty()) {
    // Decompose the beamformer output into its target and noise parts.
    const auto sel_x = x_img->Select(mics);
    const auto sel_v = v_img->Select(mics);
    std::vector<double> mic_snr;
    for (std::size_t i = 0; i < mics.size(); ++i) {
      mic_snr.push_back(detail::SnrDb(sel_x[i], sel_v[i]));
    }
    report["oracle"] = {
        {"mic_snr_db", mic_snr},
        {"best_mic_snr_db", *std::max_element(mic_snr.begin(), mic_snr.end())},
        {"beamformed_snr_db", detail::SnrDb(beamform::ApplyBeamformer(res.weights, sel_x),
                                            beamform::ApplyBeamformer(res.weights, sel_v))}};
  }
  io::WriteJsonFile(detail::Join(dir, "report.json"), report);
  m.outputs = {detail::Join(dir, "beamformed.wav"), detail::Join(dir, "report.json")};
  detail::WriteManifest(dir, m, timer);
  return kExitOk;
}

struct ConfigArgs {
  std::string config, out;
};

inline double UnprocessedSiSdr(std::span<const trainer::Sample> samples) {
  if (samples.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& s : samples) {
    const auto y = spectral::IstftChannel(s.y[s.ref_mic], s.y.config(), s.num_samples);
    sum += trainer::SiSdr(y, s.x_ref_time);
  }
  return sum / static_cast<double>(samples.size());
}

inline std::vector<trainer::Sample> LoadAll(const std::vector<io::DatasetEntry>& entries,
                                            const spectral::StftConfig& stft, int ref_mic) {
  std::vector<trainer::Sample> out;
  for (const auto& e : entries) out.push_back(io::LoadSample(e, stft, ref_mic));
  return out;
}

inline int Train(const ConfigArgs& a) {
  detail::Timer timer;
  const auto rc = io::ParseRunConfig(io::ReadJsonFile(a.config), io::ConfigDir(a.config));
  if (rc.dataset.empty()) throw Error("config: empty dataset");
  io::RequireExisting(io::RequiredPaths(rc.dataset, rc.train.mode, false));
  io::RequireExisting(io::RequiredPaths(rc.heldout, std::nullopt, true));
  const int q = rc.train.model.ref_mic;
  const auto dataset = LoadAll(rc.dataset, rc.stft, q);
  const auto heldout = LoadAll(rc.heldout, rc.stft, q);

  const auto result = trainer::Train(rc.train, dataset, heldout);

  const fs::path dir(a.out);
  fs::create_directories(dir);
  io::Checkpoint ck{result.model, rc.stft, rc.train.fcp, trainer::ToString(rc.train.mode),
                    rc.train.seed, rc.train.steps};
  io::WriteCheckpoint(detail::Join(dir, "checkpoint.bin"), ck);
  json report = io::ToJson(result.report);
  report["mode"] = trainer::ToString(rc.train.mode);
  report["steps"] = rc.train.steps;
  report["seed"] = rc.train.seed;
  report["num_params"] = result.model.params().size();
  if (!heldout.empty()) report["unprocessed_si_sdr_db"] = UnprocessedSiSdr(heldout);
  const bool improved = result.report.final_loss <= result.report.initial_loss;
  report["converged"] = improved;
  io::WriteJsonFile(detail::Join(dir, "report.json"), report);

  io::RunManifest m{"train", a.config, rc.train.seed, {a.config}, {}, {}, 0.0};
  for (const auto& p : io::RequiredPaths(rc.dataset, rc.train.mode, false)) m.inputs.push_back(p);
  for (const auto& p : io::RequiredPaths(rc.heldout, std::nullopt, true)) m.inputs.push_back(p);
  m.outputs = {detail::Join(dir, "checkpoint.bin"), detail::Join(dir, "checkpoint.json"),
               detail::Join(dir, "report.json")};
  detail::WriteManifest(dir, m, timer);
  if (!improved) {
    std::cerr << "train: final loss " << result.report.final_loss << " exceeds initial loss "
              << result.report.initial_loss << "\n";
    return kExitNumerical;
  }
  return kExitOk;
}

struct EnhanceArgs {
  std::string checkpoint, mixture, out;
};

inline int Enhance(const EnhanceArgs& a) {
  detail::Timer timer;
  const auto ck = io::ReadCheckpoint(a.checkpoint);
  if (!fs::exists(a.mixture)) throw Error("missing mixture '" + a.mixture + "'");
  const auto mix = wav::Read(a.mixture);
  const auto y = io::StftOf(mix, ck.stft, a.mixture);
  ck.model.CheckInput(y);
  const auto est = trainer::Enhance(ck.model, y);
  const auto x_hat = spectral::IstftChannel(est.x, ck.stft, mix.num_samples());
  const fs::path dir(a.out);
  fs::create_directories(dir);
  wav::Write(detail::Join(dir, "enhanced.wav"), {mix.sample_rate, {x_hat}});
  io::RunManifest m{"enhance", "", ck.seed, {a.checkpoint, a.mixture}, {}, {}, 0.0};
  m.outputs = {detail::Join(dir, "enhanced.wav")};
  detail::WriteManifest(dir, m, timer);
  return kExitOk;
}

// Analytic vs central finite-difference gradients of each loss, at a
// freshly initialized model.
inline int Gradcheck(const ConfigArgs& a) {
  detail::Timer timer;
  const auto rc = io::ParseRunConfig(io::ReadJsonFile(a.config), io::ConfigDir(a.config));
  if (rc.dataset.empty()) throw Error("config: empty dataset");
  io::RequireExisting(io::RequiredPaths(rc.dataset, std::nullopt, false));
  const auto samples = LoadAll(rc.dataset, rc.stft, rc.train.model.ref_mic);

  model::ToyModel m(rc.train.model);
  m.Initialize(rc.train.init, scene::MixSeed(rc.train.seed, 1), rc.train.init_scale);

  json rows = json::array();
  bool pass = true;
  for (const auto mode : {losses::LossMode::kSupervised, losses::LossMode::kM2m,
                          losses::LossMode::kM2bm}) {
    std::vector<const trainer::Sample*> use;
    for (const auto& s : samples) {
      const bool ok = mode == losses::LossMode::kSupervised ? s.x_ref.has_value()
                      : mode == losses::LossMode::kM2bm     ? s.y_bf.has_value()
                                                            : true;
      if (ok) use.push_back(&s);
    }
    json row = {{"mode", losses::ToString(mode)}, {"samples", use.size()}};
    if (use.empty()) {
      row["skipped"] = true;
      rows.push_back(row);
      continue;
    }
    const double scale = 1.0 / static_cast<double>(use.size());
    const trainer::Objective objective = [&](const model::ToyModel& mm, std::vector<double>* g) {
      double total = 0.0;
      for (const auto* s : use) {
        total += trainer::SampleObjective(mm, *s, mode, rc.train.fcp, g, scale,
                                          rc.train.filter_grad);
      }
      return total;
    };
    const auto analytic = trainer::Gradient(m, objective, trainer::GradMethod::kAnalytic);
    const auto fd = trainer::Gradient(m, objective, trainer::GradMethod::kFiniteDiff,
                                      rc.train.fd_step);
    const double err = trainer::RelativeError(analytic, fd);
    json sweep = json::array();
    for (double h : rc.fd_sweep) {
      const auto g = trainer::Gradient(m, objective, trainer::GradMethod::kFiniteDiff, h);
      sweep.push_back({{"fd_step", h}, {"rel_err", trainer::RelativeError(analytic, g)}});
    }
    row["fd_step"] = rc.train.fd_step;
    row["rel_err"] = err;
    row["pass"] = err <= rc.tolerance;
    row["sweep"] = sweep;
    pass = pass && err <= rc.tolerance;
    rows.push_back(row);
  }
  const fs::path dir(a.out);
  fs::create_directories(dir);
  const json report = {{"num_params", m.params().size()},
                       {"tolerance", rc.tolerance},
                       {"filter_grad", rc.train.filter_grad == losses::FilterGradient::kFrozen
                                           ? "frozen"
                                           : "through_solve"},
                       {"modes", rows},
                       {"pass", pass}};
  io::WriteJsonFile(detail::Join(dir, "gradcheck.json"), report);
  io::RunManifest man{"gradcheck", a.config, rc.train.seed, {a.config}, {}, {}, 0.0};
  for (const auto& e : rc.dataset) man.inputs.push_back(detail::Join(e.dir, io::kMixtureFile));
  man.outputs = {detail::Join(dir, "gradcheck.json")};
  detail::WriteManifest(dir, man, timer);
  for (const auto& r : rows) {
    if (r.contains("rel_err")) {
      std::cout << r["mode"].get<std::string>() << " rel_err " << r["rel_err"].get<double>()
                << "\n";
    }
  }
  return pass ? kExitOk : kExitNumerical;
}

struct EvalArgs {
  std::string checkpoint, out;
  std::vector<std::string> scenes;
};

inline int Eval(const EvalArgs& a) {
  detail::Timer timer;
  const auto ck = io::ReadCheckpoint(a.checkpoint);
  std::vector<io::DatasetEntry> entries;
  for (const auto& d : a.scenes) entries.push_back({d, trainer::Tag::kReal, ""});
  io::RequireExisting(io::RequiredPaths(entries, std::nullopt, true));
  const auto samples = LoadAll(entries, ck.stft, ck.model.shape().ref_mic);
  const auto ev = trainer::Evaluate(ck.model, samples, ck.fcp);
  json report = {{"si_sdr_db", ev.si_sdr_db},
                 {"snr_db", ev.snr_db},
                 {"mc_loss", ev.mc_loss},
                 {"unprocessed_si_sdr_db", UnprocessedSiSdr(samples)},
                 {"scenes", io::ToJson(ev)["scenes"]}};
  const fs::path dir(a.out);
  fs::create_directories(dir);
  io::WriteJsonFile(detail::Join(dir, "eval.json"), report);
  io::RunManifest m{"eval", "", ck.seed, {a.checkpoint}, {}, {}, 0.0};
  for (const auto& p : io::RequiredPaths(entries, std::nullopt, true)) m.inputs.push_back(p);
  m.outputs = {detail::Join(dir, "eval.json")};
  detail::WriteManifest(dir, m, timer);
  return kExitOk;
}

inline int Run(int argc, char** argv) {
  CLI::App app{"Weakly supervised speech enhancement with beamformed mixtures", "m2bm"};
  app.set_version_flag("--version", M2BM_VERSION);
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Generate a synthetic multichannel scene");
  c_sim->add_option("--config", sim.config, "Scene config (JSON)")->required();
  c_sim->add_option("--out", sim.out, "Output directory")->required();

  BeamformArgs bf;
  auto* c_bf = app.add_subcommand("beamform", "Derive the beamformed mixture of a recording");
  c_bf->add_option("--mixture", bf.mixture, "Multichannel mixture WAV")->required();
  auto* o_est = c_bf->add_option("--estimates", bf.estimates,
                                 "Directory with per-channel target.wav / noise.wav estimates");
  auto* o_orc = c_bf->add_option("--oracle", bf.oracle,
                                 "Scene directory; its true images drive the beamformer");
  auto* o_ck = c_bf->add_option("--checkpoint", bf.checkpoint,
                                "Single-input model used as a per-channel enhancer");
  o_est->excludes(o_orc)->excludes(o_ck);
  o_orc->excludes(o_ck);
  c_bf->add_option("--ref-mic", bf.ref_mic, "Reference microphone (0-based)")->required();
  c_bf->add_option("--mics", bf.mics, "Microphones to beamform (default: all)")->delimiter(',');
  c_bf->add_option("--win", bf.win_len, "STFT window length when no checkpoint is given");
  c_bf->add_option("--hop", bf.hop, "STFT hop when no checkpoint is given");
  c_bf->add_option("--loading", bf.loading, "Diagonal loading relative to mean eigenvalue");
  c_bf->add_option("--out", bf.out, "Output directory")->required();

  ConfigArgs tr;
  auto* c_tr = app.add_subcommand("train", "Train the enhancement model");
  c_tr->add_option("--config", tr.config, "Training config (JSON)")->required();
  c_tr->add_option("--out", tr.out, "Output directory")->required();

  EnhanceArgs en;
  auto* c_en = app.add_subcommand("enhance", "Enhance a mixture with a trained model");
  c_en->add_option("--checkpoint", en.checkpoint, "Checkpoint (.bin)")->required();
  c_en->add_option("--mixture", en.mixture, "Multichannel mixture WAV")->required();
  c_en->add_option("--out", en.out, "Output directory")->required();

  ConfigArgs gc;
  auto* c_gc = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
  c_gc->add_option("--config", gc.config, "Training config (JSON)")->required();
  c_gc->add_option("--out", gc.out, "Output directory")->required();

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "Evaluate a checkpoint on scenes with ground truth");
  c_ev->add_option("--checkpoint", ev.checkpoint, "Checkpoint (.bin)")->required();
  c_ev->add_option("--scenes", ev.scenes, "Scene directories")->required();
  c_ev->add_option("--out", ev.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*c_sim) return Simulate(sim);
    if (*c_bf) {
      if (bf.estimates.empty() && bf.oracle.empty() && bf.checkpoint.empty()) {
        throw Error("beamform: one of --estimates, --oracle or --checkpoint is required");
      }
      return Beamform(bf);
    }
    if (*c_tr) return Train(tr);
    if (*c_en) return Enhance(en);
    if (*c_gc) return Gradcheck(gc);
    if (*c_ev) return Eval(ev);
  } catch (const NumericalError& e) {
    std::cerr << "m2bm: numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const Error& e) {
    std::cerr << "m2bm: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "m2bm: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace m2bm::cli
