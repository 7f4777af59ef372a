// Copyright 2026 The m2bm Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// File formats: JSON configs for scenes and training runs, scene
// directories (mixture/target/noise WAVs), checkpoints (flat little-endian
// float64 vector plus a JSON sidecar), reports and run manifests.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "m2bm/beamform.hpp"
#include "m2bm/error.hpp"
#include "m2bm/fcp.hpp"
#include "m2bm/losses.hpp"
#include "m2bm/model.hpp"
#include "m2bm/scene.hpp"
#include "m2bm/spectral.hpp"
#include "m2bm/trainer.hpp"
#include "m2bm/wav.hpp"

namespace m2bm::io {

using nlohmann::json;
namespace fs = std::filesystem;

inline constexpr const char* kMixtureFile = "mixture.wav";
inline constexpr const char* kTargetFile = "target.wav";
inline constexpr const char* kNoiseFile = "noise.wav";

inline json ReadJsonFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error("'" + path + "' is not valid JSON: " + e.what());
  }
}

inline void WriteJsonFile(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << j.dump(2) << "\n";
}

namespace detail {

inline void CheckKeys(const json& j, std::initializer_list<const char*> allowed,
                      const std::string& where) {
  if (!j.is_object()) throw Error(where + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw Error(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
T Get(const json& j, const char* key, const std::string& where, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(where + ": bad value for '" + key + "'");
  }
}

template <typename T>
T Require(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw Error(where + ": missing required key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(where + ": bad value for '" + key + "'");
  }
}

inline std::string Resolve(const std::string& base_dir, const std::string& path) {
  if (path.empty() || fs::path(path).is_absolute() || base_dir.empty()) return path;
  return (fs::path(base_dir) / path).lexically_normal().string();
}

}  // namespace detail

inline std::string ConfigDir(const std::string& config_path) {
  return fs::path(config_path).parent_path().string();
}

// --- spectral / fcp -------------------------------------------------------

inline spectral::StftConfig ParseStft(const json& j, int sample_rate = 16000) {
  spectral::StftConfig c;
  c.sample_rate = sample_rate;
  if (j.is_null()) return c;
  detail::CheckKeys(j, {"win_len", "hop", "fft_size", "window", "sample_rate"}, "stft");
  c.sample_rate = detail::Get<int>(j, "sample_rate", "stft", sample_rate);
  c.win_len = detail::Get<int>(j, "win_len", "stft", c.win_len);
  c.hop = detail::Get<int>(j, "hop", "stft", c.hop);
  c.fft_size = detail::Get<int>(j, "fft_size", "stft", c.fft_size);
  c.window = spectral::ParseWindow(detail::Get<std::string>(j, "window", "stft", "sqrt-hann"));
  c.Validate();
  return c;
}

inline json ToJson(const spectral::StftConfig& c) {
  return {{"sample_rate", c.sample_rate}, {"win_len", c.win_len}, {"hop", c.hop},
          {"fft_size", c.FftSize()}, {"window", spectral::WindowName(c.window)}};
}

inline fcp::FcpConfig ParseFcp(const json& j) {
  fcp::FcpConfig c;
  if (j.is_null()) return c;
  detail::CheckKeys(j, {"past_taps", "future_taps", "weight_floor", "diag_load"}, "fcp");
  c.past_taps = detail::Get<int>(j, "past_taps", "fcp", c.past_taps);
  c.future_taps = detail::Get<int>(j, "future_taps", "fcp", c.future_taps);
  c.weight_floor = detail::Get<double>(j, "weight_floor", "fcp", c.weight_floor);
  c.diag_load = detail::Get<double>(j, "diag_load", "fcp", c.diag_load);
  c.Validate();
  return c;
}

inline json ToJson(const fcp::FcpConfig& c) {
  return {{"past_taps", c.past_taps}, {"future_taps", c.future_taps},
          {"weight_floor", c.weight_floor}, {"diag_load", c.diag_load}};
}

// --- scenes ---------------------------------------------------------------

inline scene::SourceDescriptor ParseSource(const json& j, const std::string& base_dir,
                                           const std::string& where) {
  detail::CheckKeys(j, {"kind", "seed", "color", "f0", "path"}, where);
  scene::SourceDescriptor d;
  const auto kind = detail::Require<std::string>(j, "kind", where);
  if (kind == "noise") {
    d.kind = scene::SourceDescriptor::Kind::kNoise;
  } else if (kind == "tones") {
    d.kind = scene::SourceDescriptor::Kind::kTones;
  } else if (kind == "wav") {
    d.kind = scene::SourceDescriptor::Kind::kWav;
    d.path = detail::Resolve(base_dir, detail::Require<std::string>(j, "path", where));
  } else {
    throw Error(where + ": unknown source kind '" + kind + "'");
  }
  d.seed = detail::Get<std::uint64_t>(j, "seed", where, 0);
  d.color = detail::Get<double>(j, "color", where, 0.0);
  d.f0 = detail::Get<double>(j, "f0", where, 0.0);
  return d;
}

// FIRs are given explicitly ([[...], ...], one per mic), as "identity", or as
// {"random": {"seed", "taps", "max_delay", "tail_gain", "direct_only"}}.
inline scene::FirSet ParseFirs(const json& j, int num_mics, const std::string& where) {
  if (j.is_string()) {
    if (j.get<std::string>() != "identity") throw Error(where + ": unknown FIR preset");
    return scene::IdentityFirSet(num_mics);
  }
  if (j.is_array()) {
    try {
      return j.get<scene::FirSet>();
    } catch (const json::exception&) {
      throw Error(where + ": FIRs must be arrays of numbers");
    }
  }
  detail::CheckKeys(j, {"random"}, where);
  const json& r = j.at("random");
  const std::string rw = where + ".random";
  detail::CheckKeys(r, {"seed", "taps", "max_delay", "tail_gain", "direct_only"}, rw);
  auto set = scene::RandomFirSet(detail::Require<std::uint64_t>(r, "seed", rw), num_mics,
                                 detail::Require<std::size_t>(r, "taps", rw),
                                 detail::Get<int>(r, "max_delay", rw, 6),
                                 detail::Get<double>(r, "tail_gain", rw, 0.25));
  if (detail::Get<bool>(r, "direct_only", rw, false)) set = scene::DirectPathOnly(std::move(set));
  return set;
}

inline scene::SceneSpec ParseScene(const json& j, const std::string& base_dir = {}) {
  detail::CheckKeys(j, {"num_mics", "sample_rate", "duration_s", "seed", "ref_mic", "snr_db",
                        "target", "noises"},
                    "scene");
  scene::SceneSpec s;
  s.num_mics = detail::Require<int>(j, "num_mics", "scene");
  s.sample_rate = detail::Get<int>(j, "sample_rate", "scene", 16000);
  s.duration_s = detail::Get<double>(j, "duration_s", "scene", 1.0);
  s.seed = detail::Require<std::uint64_t>(j, "seed", "scene");
  s.ref_mic = detail::Require<int>(j, "ref_mic", "scene");
  if (j.contains("snr_db") && !j.at("snr_db").is_null()) {
    s.snr_db = detail::Require<double>(j, "snr_db", "scene");
  }
  const json& t = j.at("target");
  detail::CheckKeys(t, {"source", "firs"}, "scene.target");
  if (t.contains("source")) s.target_source = ParseSource(t.at("source"), base_dir, "scene.target.source");
  if (!t.contains("firs")) throw Error("scene.target: missing required key 'firs'");
  s.target_firs = ParseFirs(t.at("firs"), s.num_mics, "scene.target.firs");
  if (j.contains("noises")) {
    const json& ns = j.at("noises");
    if (!ns.is_array()) throw Error("scene.noises: expected an array");
    for (std::size_t k = 0; k < ns.size(); ++k) {
      const std::string w = "scene.noises[" + std::to_string(k) + "]";
      detail::CheckKeys(ns[k], {"source", "firs"}, w);
      if (!ns[k].contains("source") || !ns[k].contains("firs")) {
        throw Error(w + ": needs 'source' and 'firs'");
      }
      s.noise_sources.push_back(ParseSource(ns[k].at("source"), base_dir, w + ".source"));
      s.noise_firs.push_back(ParseFirs(ns[k].at("firs"), s.num_mics, w + ".firs"));
    }
  }
  s.Validate();
  return s;
}

inline void WriteSceneDir(const std::string& dir, const scene::SceneBundle& b) {
  fs::create_directories(dir);
  wav::Write((fs::path(dir) / kMixtureFile).string(), {b.sample_rate, b.y_time});
  wav::Write((fs::path(dir) / kTargetFile).string(), {b.sample_rate, b.x_time});
  wav::Write((fs::path(dir) / kNoiseFile).string(), {b.sample_rate, b.v_time});
}

// Target and noise images of a scene or estimate directory.
struct ImagePair {
  wav::Audio target;
  wav::Audio noise;
};

inline ImagePair ReadImages(const std::string& dir) {
  const auto tp = (fs::path(dir) / kTargetFile).string();
  const auto np = (fs::path(dir) / kNoiseFile).string();
  if (!fs::exists(tp)) throw Error("missing '" + tp + "'");
  if (!fs::exists(np)) throw Error("missing '" + np + "'");
  ImagePair p{wav::Read(tp), wav::Read(np)};
  if (p.target.num_channels() != p.noise.num_channels() ||
      p.target.num_samples() != p.noise.num_samples()) {
    throw Error("'" + dir + "': target and noise WAVs differ in shape");
  }
  return p;
}

inline MultichannelSpectrogram StftOf(const wav::Audio& a, const spectral::StftConfig& stft,
                                      const std::string& what) {
  if (a.sample_rate != stft.sample_rate) {
    throw Error(what + ": sample rate " + std::to_string(a.sample_rate) + " does not match " +
                std::to_string(stft.sample_rate));
  }
  return spectral::Stft(a.channels, stft);
}

// --- model / training configs ---------------------------------------------

inline model::ModelShape ParseModelShape(const json& j) {
  model::ModelShape s;
  if (j.is_null()) return s;
  detail::CheckKeys(j, {"input_channels", "ref_mic", "context", "groups"}, "model");
  s.input_channels = detail::Get<std::vector<int>>(j, "input_channels", "model", s.input_channels);
  s.ref_mic = detail::Require<int>(j, "ref_mic", "model");
  s.context = detail::Get<int>(j, "context", "model", s.context);
  s.groups = detail::Get<int>(j, "groups", "model", s.groups);
  s.Validate();
  return s;
}

inline json ToJson(const model::ModelShape& s) {
  return {{"input_channels", s.input_channels}, {"ref_mic", s.ref_mic}, {"context", s.context},
          {"groups", s.groups}};
}

inline model::Init ParseInit(const std::string& s) {
  if (s == "random") return model::Init::kRandom;
  if (s == "identity") return model::Init::kIdentity;
  if (s == "zero") return model::Init::kZero;
  throw Error("unknown init '" + s + "'");
}

inline std::string ToString(model::Init i) {
  switch (i) {
    case model::Init::kRandom: return "random";
    case model::Init::kIdentity: return "identity";
    case model::Init::kZero: return "zero";
  }
  return "unknown";
}

inline trainer::GradMethod ParseGradMethod(const std::string& s) {
  if (s == "analytic") return trainer::GradMethod::kAnalytic;
  if (s == "finite_diff") return trainer::GradMethod::kFiniteDiff;
  throw Error("unknown grad method '" + s + "'");
}

inline losses::FilterGradient ParseFilterGradient(const std::string& s) {
  if (s == "through_solve") return losses::FilterGradient::kThroughSolve;
  if (s == "frozen") return losses::FilterGradient::kFrozen;
  throw Error("unknown filter_grad '" + s + "'");
}

// A scene directory used for training or evaluation. `ybf` is the
// beamformed-mixture WAV for M2BM terms.
struct DatasetEntry {
  std::string dir;
  trainer::Tag tag = trainer::Tag::kSimulated;
  std::string ybf;
};

struct RunConfig {
  trainer::TrainConfig train;
  spectral::StftConfig stft;
  std::vector<DatasetEntry> dataset;
  std::vector<DatasetEntry> heldout;
  // gradcheck only
  std::vector<double> fd_sweep{1e-3, 1e-4, 1e-5};
  double tolerance = 1e-4;
};

inline std::vector<DatasetEntry> ParseDataset(const json& j, const std::string& base_dir,
                                              const std::string& where) {
  std::vector<DatasetEntry> out;
  if (j.is_null()) return out;
  if (!j.is_array()) throw Error(where + ": expected an array");
  for (std::size_t k = 0; k < j.size(); ++k) {
    const std::string w = where + "[" + std::to_string(k) + "]";
    detail::CheckKeys(j[k], {"dir", "tag", "ybf"}, w);
    DatasetEntry e;
    e.dir = detail::Resolve(base_dir, detail::Require<std::string>(j[k], "dir", w));
    e.tag = trainer::ParseTag(detail::Get<std::string>(j[k], "tag", w, "simulated"));
    e.ybf = detail::Resolve(base_dir, detail::Get<std::string>(j[k], "ybf", w, ""));
    out.push_back(std::move(e));
  }
  return out;
}

inline RunConfig ParseRunConfig(const json& j, const std::string& base_dir = {}) {
  detail::CheckKeys(j, {"mode", "lr", "steps", "batch", "seed", "stft", "fcp", "grad", "fd_step",
                        "filter_grad", "sim_per_cycle", "real_per_cycle", "model", "init",
                        "init_scale", "dataset", "heldout", "fd_sweep", "tolerance"},
                    "config");
  RunConfig rc;
  auto& t = rc.train;
  const auto null = json();
  t.mode = trainer::ParseMode(detail::Get<std::string>(j, "mode", "config", "supervised"));
  t.lr = detail::Get<double>(j, "lr", "config", t.lr);
  t.steps = detail::Get<int>(j, "steps", "config", t.steps);
  t.batch = detail::Get<int>(j, "batch", "config", t.batch);
  t.seed = detail::Require<std::uint64_t>(j, "seed", "config");
  rc.stft = ParseStft(j.contains("stft") ? j.at("stft") : null);
  t.fcp = ParseFcp(j.contains("fcp") ? j.at("fcp") : null);
  t.grad = ParseGradMethod(detail::Get<std::string>(j, "grad", "config", "analytic"));
  t.fd_step = detail::Get<double>(j, "fd_step", "config", t.fd_step);
  t.filter_grad =
      ParseFilterGradient(detail::Get<std::string>(j, "filter_grad", "config", "through_solve"));
  t.sim_per_cycle = detail::Get<int>(j, "sim_per_cycle", "config", t.sim_per_cycle);
  t.real_per_cycle = detail::Get<int>(j, "real_per_cycle", "config", t.real_per_cycle);
  if (!j.contains("model")) throw Error("config: missing required key 'model'");
  t.model = ParseModelShape(j.at("model"));
  t.init = ParseInit(detail::Get<std::string>(j, "init", "config", "random"));
  t.init_scale = detail::Get<double>(j, "init_scale", "config", t.init_scale);
  rc.dataset = ParseDataset(j.contains("dataset") ? j.at("dataset") : null, base_dir, "dataset");
  rc.heldout = ParseDataset(j.contains("heldout") ? j.at("heldout") : null, base_dir, "heldout");
  rc.fd_sweep = detail::Get<std::vector<double>>(j, "fd_sweep", "config", rc.fd_sweep);
  rc.tolerance = detail::Get<double>(j, "tolerance", "config", rc.tolerance);
  t.Validate();
  return rc;
}

// Paths a dataset needs for `mode`, in dataset order.
inline std::vector<std::string> RequiredPaths(const std::vector<DatasetEntry>& entries,
                                              std::optional<trainer::Mode> mode, bool need_truth) {
  std::vector<std::string> paths;
  for (const auto& e : entries) {
    paths.push_back((fs::path(e.dir) / kMixtureFile).string());
    std::optional<losses::LossMode> kind;
    if (mode) kind = trainer::DispatchLoss(*mode, e.tag);
    if (need_truth || kind == losses::LossMode::kSupervised) {
      paths.push_back((fs::path(e.dir) / kTargetFile).string());
      paths.push_back((fs::path(e.dir) / kNoiseFile).string());
    }
    if (kind == losses::LossMode::kM2bm) {
      if (e.ybf.empty()) {
        throw Error("dataset entry '" + e.dir + "' is used for m2bm but has no 'ybf' path");
      }
      paths.push_back(e.ybf);
    }
  }
  return paths;
}

inline void RequireExisting(const std::vector<std::string>& paths) {
  for (const auto& p : paths) {
    if (!fs::exists(p)) throw Error("missing input file '" + p + "'");
  }
}

// Loads a scene directory as a training/evaluation sample. Ground truth is
// loaded when present; the beamformed mixture when the entry names one.
inline trainer::Sample LoadSample(const DatasetEntry& e, const spectral::StftConfig& stft,
                                  int ref_mic) {
  const auto mix_path = (fs::path(e.dir) / kMixtureFile).string();
  const auto mix = wav::Read(mix_path);
  trainer::Sample s;
  s.name = fs::path(e.dir).filename().string();
  s.tag = e.tag;
  s.ref_mic = ref_mic;
  s.y = StftOf(mix, stft, mix_path);
  s.num_samples = mix.num_samples();
  if (ref_mic < 0 || static_cast<std::size_t>(ref_mic) >= mix.num_channels()) {
    throw Error("'" + mix_path + "': ref_mic " + std::to_string(ref_mic) + " out of range");
  }
  if (fs::exists(fs::path(e.dir) / kTargetFile) && fs::exists(fs::path(e.dir) / kNoiseFile)) {
    const auto img = ReadImages(e.dir);
    if (img.target.num_channels() != mix.num_channels() ||
        img.target.num_samples() != mix.num_samples()) {
      throw Error("'" + e.dir + "': images and mixture differ in shape");
    }
    s.x_ref = spectral::StftChannel(img.target.channels[ref_mic], stft);
    s.v_ref = spectral::StftChannel(img.noise.channels[ref_mic], stft);
    s.x_ref_time = img.target.channels[ref_mic];
  }
  if (!e.ybf.empty()) {
    const auto bf = wav::Read(e.ybf);
    if (bf.num_channels() != 1 || bf.num_samples() != mix.num_samples()) {
      throw Error("'" + e.ybf + "': expected a mono WAV as long as the mixture");
    }
    s.y_bf = StftOf(bf, stft, e.ybf)[0];
  }
  return s;
}

// --- checkpoints ------------------------------------------------------------

struct Checkpoint {
  model::ToyModel model;
  spectral::StftConfig stft;
  fcp::FcpConfig fcp;
  std::string mode;
  std::uint64_t seed = 0;
  int step = 0;
};

inline std::string SidecarPath(const std::string& bin_path) {
  return fs::path(bin_path).replace_extension(".json").string();
}

inline void WriteCheckpoint(const std::string& bin_path, const Checkpoint& ck) {
  static_assert(std::endian::native == std::endian::little, "checkpoints are little-endian");
  const auto& p = ck.model.params();
  std::ofstream out(bin_path, std::ios::binary);
  if (!out) throw Error("cannot write '" + bin_path + "'");
  out.write(reinterpret_cast<const char*>(p.data()), static_cast<std::streamsize>(p.size() * 8));
  json side = {{"format", "float64-le"},
               {"num_params", p.size()},
               {"shape", ToJson(ck.model.shape())},
               {"stft", ToJson(ck.stft)},
               {"fcp", ToJson(ck.fcp)},
               {"mode", ck.mode},
               {"seed", ck.seed},
               {"step", ck.step}};
  WriteJsonFile(SidecarPath(bin_path), side);
}

inline Checkpoint ReadCheckpoint(const std::string& bin_path) {
  const auto side_path = SidecarPath(bin_path);
  if (!fs::exists(bin_path)) throw Error("missing checkpoint '" + bin_path + "'");
  if (!fs::exists(side_path)) throw Error("missing checkpoint sidecar '" + side_path + "'");
  const json side = ReadJsonFile(side_path);
  const std::string w = "checkpoint sidecar";
  if (detail::Get<std::string>(side, "format", w, "") != "float64-le") {
    throw Error(side_path + ": unsupported checkpoint format");
  }
  const auto shape = ParseModelShape(side.at("shape"));
  const auto n = detail::Require<std::size_t>(side, "num_params", w);
  std::ifstream in(bin_path, std::ios::binary);
  std::vector<double> params(n);
  in.read(reinterpret_cast<char*>(params.data()), static_cast<std::streamsize>(n * 8));
  if (static_cast<std::size_t>(in.gcount()) != n * 8 || in.peek() != EOF) {
    throw Error("'" + bin_path + "' does not hold " + std::to_string(n) + " float64 values");
  }
  Checkpoint ck;
  ck.model = model::ToyModel(shape, std::move(params));
  ck.stft = ParseStft(side.at("stft"));
  ck.fcp = ParseFcp(side.at("fcp"));
  ck.mode = detail::Get<std::string>(side, "mode", w, "");
  ck.seed = detail::Get<std::uint64_t>(side, "seed", w, 0);
  ck.step = detail::Get<int>(side, "step", w, 0);
  return ck;
}

// --- reports ----------------------------------------------------------------

inline json ToJson(const trainer::EvalReport& r) {
  json scenes = json::array();
  for (const auto& s : r.scenes) {
    scenes.push_back({{"name", s.name}, {"si_sdr_db", s.si_sdr_db}, {"snr_db", s.snr_db},
                      {"mc_loss", s.mc_loss}});
  }
  return {{"si_sdr_db", r.si_sdr_db},
          {"snr_db", r.snr_db},
          {"mc_loss", r.mc_loss},
          {"scenes", scenes},
          {"initial_loss", r.initial_loss},
          {"final_loss", r.final_loss},
          {"loss_curve", r.loss_curve},
          {"evaluations",
           {{"supervised", r.supervised_evals}, {"m2m", r.m2m_evals}, {"m2bm", r.m2bm_evals}}}};
}

inline json ToJson(const beamform::BeamformResult& r) {
  double max_res = 0.0;
  for (double v : r.distortionless_residual) max_res = std::max(max_res, v);
  return {{"mics", r.mics},
          {"ref_mic_index", r.weights.ref_mic},
          {"bins", r.weights.bins()},
          {"rtf_fallbacks", r.rtf_fallbacks},
          {"ill_defined_eigen", r.ill_defined_eigen},
          {"distortionless_residual_max", max_res},
          {"distortionless_residual", r.distortionless_residual}};
}

struct RunManifest {
  std::string command;
  std::string config_path;
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string tool_version;
  double wall_time = 0.0;  // seconds
};

inline json ToJson(const RunManifest& m) {
  return {{"command", m.command}, {"config_path", m.config_path}, {"seed", m.seed},
          {"inputs", m.inputs},   {"outputs", m.outputs},         {"tool_version", m.tool_version},
          {"wall_time", m.wall_time}};
}

}  // namespace m2bm::io
