// Copyright 2026 The m2bm Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Time-invariant MVDR beamforming driven by per-channel target/non-target
// estimates: spatial covariances, RTF from the principal eigenvector of the
// target covariance, MVDR weights and the beamformed mixture used as a
// virtual-microphone training target.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "m2bm/error.hpp"
#include "m2bm/spectral.hpp"

namespace m2bm::beamform {

using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;

inline constexpr double kRtfThreshold = 1e-8;
inline constexpr double kDefaultLoading = 1e-6;

// Per-frequency P x P covariance, unnormalized by the number of frames.
struct SpatialCovariance {
  std::vector<CMatrix> per_bin;

  std::size_t bins() const { return per_bin.size(); }
  Eigen::Index channels() const { return per_bin.empty() ? 0 : per_bin.front().rows(); }
};

inline SpatialCovariance EstimateCovariance(const MultichannelSpectrogram& est) {
  const std::size_t P = est.num_channels();
  if (P < 2) throw Error("spatial covariance: need at least 2 channels");
  SpatialCovariance cov;
  cov.per_bin.assign(est.bins(), CMatrix::Zero(P, P));
  CVector x(P);
  for (std::size_t f = 0; f < est.bins(); ++f) {
    CMatrix& phi = cov.per_bin[f];
    for (std::size_t t = 0; t < est.frames(); ++t) {
      for (std::size_t p = 0; p < P; ++p) x(p) = est[p](t, f);
      phi.noalias() += x * x.adjoint();
    }
    // Exact Hermitian symmetry regardless of summation rounding.
    phi = 0.5 * (phi + phi.adjoint()).eval();
  }
  return cov;
}

struct PrincipalEigen {
  CVector vector;       // unit norm
  double value = 0.0;   // largest eigenvalue
  bool ill_defined = false;  // top eigenvalue (near-)degenerate
};

inline PrincipalEigen PrincipalEigenvector(const CMatrix& phi) {
  if (phi.rows() != phi.cols() || phi.rows() == 0) throw Error("principal eigenvector: not square");
  const double scale = std::max(1.0, phi.cwiseAbs().maxCoeff());
  if ((phi - phi.adjoint()).cwiseAbs().maxCoeff() > 1e-9 * scale) {
    throw Error("principal eigenvector: matrix is not Hermitian");
  }
  Eigen::SelfAdjointEigenSolver<CMatrix> es(phi);
  if (es.info() != Eigen::Success) throw NumericalError("principal eigenvector: solver failed");
  const Eigen::Index n = phi.rows();
  PrincipalEigen out;
  out.vector = es.eigenvectors().col(n - 1).normalized();
  out.value = es.eigenvalues()(n - 1);
  const double trace = phi.diagonal().real().sum();
  const double second = n > 1 ? es.eigenvalues()(n - 2) : 0.0;
  out.ill_defined = !(out.value - second >= 1e-10 * std::abs(trace)) || !(trace > 0.0);
  return out;
}

// c = r / r_q. Throws when |r_q| is below kRtfThreshold * ||r||.
inline CVector Rtf(const CVector& r, int q) {
  if (q < 0 || q >= r.size()) throw Error("rtf: reference index out of range");
  const double norm = r.norm();
  if (!(std::abs(r(q)) >= kRtfThreshold * norm) || norm == 0.0) {
    throw NumericalError("rtf: reference entry too small, RTF undefined");
  }
  CVector c = r / r(q);
  c(q) = 1.0;
  return c;
}

// w = (Phi + delta tr(Phi)/P I)^{-1} c / (c^H (...)^{-1} c)
inline CVector MvdrVector(const CMatrix& phi_v, const CVector& c, double loading = kDefaultLoading) {
  const Eigen::Index P = phi_v.rows();
  if (phi_v.cols() != P || c.size() != P) throw Error("mvdr: dimension mismatch");
  const double trace = phi_v.diagonal().real().sum();
  if (!(trace > 0.0)) throw NumericalError("mvdr: noise covariance has zero trace");
  CMatrix loaded = phi_v;
  loaded.diagonal().array() += loading * trace / static_cast<double>(P);
  Eigen::LDLT<CMatrix> ldlt(loaded);
  const CVector num = ldlt.solve(c);
  const Complex den = c.dot(num);  // c^H Phi^{-1} c
  if (ldlt.info() != Eigen::Success || !num.allFinite() || !(std::abs(den) > 0.0)) {
    throw NumericalError("mvdr: noise covariance could not be inverted");
  }
  return num / den;
}

struct BeamformerWeights {
  std::vector<CVector> per_bin;
  int ref_mic = 0;  // index within the beamformer's channels

  std::size_t bins() const { return per_bin.size(); }
};

inline BeamformerWeights MvdrWeights(const SpatialCovariance& phi_v, std::span<const CVector> rtf,
                                     int ref_mic, double loading = kDefaultLoading) {
  if (rtf.size() != phi_v.bins()) throw Error("mvdr: rtf/covariance bin count mismatch");
  BeamformerWeights w;
  w.ref_mic = ref_mic;
  w.per_bin.reserve(phi_v.bins());
  for (std::size_t f = 0; f < phi_v.bins(); ++f) {
    w.per_bin.push_back(MvdrVector(phi_v.per_bin[f], rtf[f], loading));
  }
  return w;
}

// Y_BF(t, f) = w(f)^H Y(t, f)
inline Spectrogram ApplyBeamformer(const BeamformerWeights& w, const MultichannelSpectrogram& y) {
  if (w.bins() != y.bins()) throw Error("apply beamformer: bin count mismatch");
  const std::size_t P = y.num_channels();
  Spectrogram out(y.frames(), y.bins());
  for (std::size_t f = 0; f < y.bins(); ++f) {
    const CVector& wf = w.per_bin[f];
    if (static_cast<std::size_t>(wf.size()) != P) throw Error("apply beamformer: channel count mismatch");
    for (std::size_t t = 0; t < y.frames(); ++t) {
      Complex acc{};
      for (std::size_t p = 0; p < P; ++p) acc += std::conj(wf(p)) * y[p](t, f);
      out(t, f) = acc;
    }
  }
  return out;
}

// Per-channel estimate provider: given the mixture and a channel index,
// returns (target estimate, non-target estimate) at that channel.
using Enhancer =
    std::function<std::pair<Spectrogram, Spectrogram>(const MultichannelSpectrogram&, int)>;

struct BeamformResult {
  Spectrogram y_bf;
  BeamformerWeights weights;
  std::vector<int> mics;              // channels used, in beamformer order
  int rtf_fallbacks = 0;              // bins where w fell back to e_q
  int ill_defined_eigen = 0;          // bins with a near-degenerate top eigenvalue
  std::vector<double> distortionless_residual;  // |w^H c - 1| per bin, 0 on fallback bins
  std::vector<bool> fallback;
};

inline BeamformResult DeriveBfMixture(const MultichannelSpectrogram& y, const Enhancer& enhancer,
                                      std::span<const int> mic_subset, int ref_mic,
                                      double loading = kDefaultLoading) {
  if (mic_subset.size() < 2) throw Error("derive bf mixture: need at least 2 microphones");
  const auto q_it = std::find(mic_subset.begin(), mic_subset.end(), ref_mic);
  if (q_it == mic_subset.end()) throw Error("derive bf mixture: ref_mic not in microphone subset");
  for (int p : mic_subset) {
    if (p < 0 || static_cast<std::size_t>(p) >= y.num_channels()) {
      throw Error("derive bf mixture: microphone " + std::to_string(p) + " out of range");
    }
    if (std::count(mic_subset.begin(), mic_subset.end(), p) != 1) {
      throw Error("derive bf mixture: duplicate microphone " + std::to_string(p));
    }
  }
  const int q = static_cast<int>(q_it - mic_subset.begin());

  std::vector<Spectrogram> xs, vs;
  for (int p : mic_subset) {
    std::pair<Spectrogram, Spectrogram> est;
    try {
      est = enhancer(y, p);
    } catch (const std::exception& e) {
      throw Error("derive bf mixture: enhancer failed on channel " + std::to_string(p) + ": " +
                  e.what());
    }
    if (!est.first.SameShape(y[p]) || !est.second.SameShape(y[p])) {
      throw Error("derive bf mixture: enhancer returned a wrongly shaped estimate on channel " +
                  std::to_string(p));
    }
    xs.push_back(std::move(est.first));
    vs.push_back(std::move(est.second));
  }
  const MultichannelSpectrogram x_hat(std::move(xs), y.config());
  const MultichannelSpectrogram v_hat(std::move(vs), y.config());
  const auto phi_x = EstimateCovariance(x_hat);
  const auto phi_v = EstimateCovariance(v_hat);

  BeamformResult res;
  res.mics.assign(mic_subset.begin(), mic_subset.end());
  res.weights.ref_mic = q;
  const Eigen::Index P = static_cast<Eigen::Index>(mic_subset.size());
  const CVector unit_q = CVector::Unit(P, q);
  for (std::size_t f = 0; f < y.bins(); ++f) {
    CVector w = unit_q;
    bool fell_back = true;
    double residual = 0.0;
    if (phi_x.per_bin[f].diagonal().real().sum() > 0.0) {
      const auto eig = PrincipalEigenvector(phi_x.per_bin[f]);
      if (eig.ill_defined) ++res.ill_defined_eigen;
      try {
        const CVector c = Rtf(eig.vector, q);
        w = MvdrVector(phi_v.per_bin[f], c, loading);
        residual = std::abs(w.dot(c) - 1.0);
        fell_back = false;
      } catch (const NumericalError&) {
        w = unit_q;
      }
    }
    if (fell_back) ++res.rtf_fallbacks;
    res.weights.per_bin.push_back(std::move(w));
    res.distortionless_residual.push_back(residual);
    res.fallback.push_back(fell_back);
  }
  res.y_bf = ApplyBeamformer(res.weights, y.Select(mic_subset));
  return res;
}

// Oracle enhancer returning the true images of a scene.
inline Enhancer OracleEnhancer(const MultichannelSpectrogram& x, const MultichannelSpectrogram& v) {
  return [&x, &v](const MultichannelSpectrogram&, int p) {
    return std::make_pair(x.at(p), v.at(p));
  };
}

}  // namespace m2bm::beamform
