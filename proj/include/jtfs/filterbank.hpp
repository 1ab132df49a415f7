// SPDX-License-Identifier: Apache-2.0
//
// Morlet / Gaussian filterbanks sampled in the Fourier domain.
//
// Frequencies are normalized (sample rate 1): xi and sigma are in cycles
// per sample. Every band-pass response is real, has an exactly null DC bin
// and peak magnitude kPeakMagnitude; low-pass responses equal 1 at DC.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "jtfs/dsp.hpp"
#include "jtfs/error.hpp"

namespace jtfs {

inline constexpr double kSigma0 = 0.1;
inline constexpr double kPeakMagnitude = 2.0;
inline constexpr int kPeriods = 3;

struct XiSigma {
  double xi = 0.0;
  double sigma = 0.0;
};

struct FilterSpec {
  double xi = 0.0;
  double sigma = 0.0;
  int j = 0;
  int spin = 0;  // sign(xi); 0 for low-pass filters
};

/// A filter's response at level 0 (length N) and at coarser resolutions.
/// levels[k] has length N / 2^k and equals subsample_fourier(levels[0], 2^k),
/// i.e. the fold-averaged response; the response of the same filter on a
/// grid decimated by 2^k is 2^k * levels[k].
struct SampledFilter {
  FilterSpec spec;
  std::vector<RealVec> levels;

  const RealVec& level(int k) const { return levels.at(static_cast<std::size_t>(k)); }
};

/// Center frequencies and bandwidths of a constant-Q filterbank with a
/// constant-bandwidth low-frequency tail. Geometric progression at quality
/// factor Q down to the bandwidth floor sigma0 / 2^J (the elbow), then Q-1
/// filters stepping arithmetically towards DC at the floor bandwidth.
inline std::vector<XiSigma> constant_q_generator(int J, int Q) {
  std::vector<XiSigma> out;
  if (Q < 1) return out;
  const double r_psi = std::sqrt(0.5);
  const double step = std::pow(2.0, 1.0 / Q);

  double xi = std::max(1.0 / (1.0 + std::pow(2.0, 3.0 / Q)), 0.35);
  const double factor = 1.0 / step;
  double sigma = (1.0 - factor) / (1.0 + factor) * xi / std::sqrt(2.0 * std::log(1.0 / r_psi));
  const double sigma_min = kSigma0 / std::pow(2.0, J);

  if (sigma <= sigma_min) {
    xi = sigma;
  } else {
    out.push_back({xi, sigma});
    while (sigma > sigma_min * step) {
      xi /= step;
      sigma /= step;
      out.push_back({xi, sigma});
    }
  }

  const double elbow_xi = xi;
  for (int q = 0; q < Q - 1; ++q) {
    xi -= 1.0 / Q * elbow_xi;
    out.push_back({xi, sigma_min});
  }
  return out;
}

/// Dyadic subsampling exponent floor(log2(sigma0 / sigma)), clamped to [0, j_max].
inline int dyadic_scale(double sigma, int j_max) {
  const int j = static_cast<int>(std::floor(std::log2(kSigma0 / sigma) + 1e-9));
  return std::clamp(j, 0, j_max);
}

/// Duplicate a filterbank with negated center frequencies.
inline std::vector<FilterSpec> spin(const std::vector<FilterSpec>& specs) {
  std::vector<FilterSpec> out = specs;
  out.reserve(2 * specs.size());
  for (const auto& s : specs) out.push_back({-s.xi, s.sigma, s.j, -s.spin});
  return out;
}

namespace detail {

inline double periodized_gauss(double omega, double center, double sigma) {
  double acc = 0.0;
  const double denom = 2.0 * sigma * sigma;
  for (int p = -kPeriods; p <= kPeriods; ++p) {
    const double d = omega + p - center;
    acc += std::exp(-d * d / denom);
  }
  return acc;
}

inline void check_resolved(const RealVec& h, const char* what, double xi, double sigma) {
  double peak = 0.0;
  for (double v : h) peak = std::max(peak, std::abs(v));
  const auto above = std::count_if(h.begin(), h.end(),
                                   [&](double v) { return std::abs(v) >= 0.5 * peak; });
  if (!(peak > 0.0) || above < 2) {
    std::ostringstream os;
    os << what << " (xi=" << xi << ", sigma=" << sigma << ") is underresolved on a "
       << h.size() << "-point grid";
    throw ResolutionError(os.str());
  }
}

}  // namespace detail

/// Fourier response of a Morlet wavelet on an N-point grid, periodized.
/// The Gaussian-at-DC correction weight kappa is taken from the sampled
/// grid so that the DC bin vanishes exactly.
inline RealVec morlet_fourier(std::size_t n, const FilterSpec& spec) {
  dsp::detail::require_pow2(n, "morlet_fourier");
  RealVec h(n);
  const double kappa = detail::periodized_gauss(0.0, spec.xi, spec.sigma) /
                       detail::periodized_gauss(0.0, 0.0, spec.sigma);
  for (std::size_t k = 0; k < n; ++k) {
    const double omega = static_cast<double>(k) / static_cast<double>(n);
    h[k] = detail::periodized_gauss(omega, spec.xi, spec.sigma) -
           kappa * detail::periodized_gauss(omega, 0.0, spec.sigma);
  }
  h[0] = 0.0;
  double peak = 0.0;
  for (double v : h) peak = std::max(peak, std::abs(v));
  if (peak > 0.0) {
    for (auto& v : h) v *= kPeakMagnitude / peak;
  }
  detail::check_resolved(h, "band-pass filter", spec.xi, spec.sigma);
  return h;
}

/// Gaussian low-pass response, value 1 at DC.
inline RealVec gauss_fourier(std::size_t n, double sigma) {
  dsp::detail::require_pow2(n, "gauss_fourier");
  RealVec h(n);
  const double dc = detail::periodized_gauss(0.0, 0.0, sigma);
  for (std::size_t k = 0; k < n; ++k) {
    h[k] = detail::periodized_gauss(static_cast<double>(k) / static_cast<double>(n), 0.0, sigma) / dc;
  }
  detail::check_resolved(h, "low-pass filter", 0.0, sigma);
  return h;
}

inline SampledFilter sample_filter(std::size_t n, const FilterSpec& spec, int max_level) {
  SampledFilter f;
  f.spec = spec;
  f.levels.push_back(spec.spin == 0 ? gauss_fourier(n, spec.sigma) : morlet_fourier(n, spec));
  for (int k = 1; k <= max_level; ++k) {
    f.levels.push_back(dsp::subsample_fourier(f.levels.front(), std::size_t{1} << k));
  }
  return f;
}

struct JtfsParams {
  int J = 10;
  int Q1 = 8;
  int Q2 = 1;
  int J_fr = 3;
  int Q_fr = 1;
  int log2_T = 10;
  int log2_F = 1;
  std::size_t N_input = std::size_t{1} << 15;

  bool operator==(const JtfsParams&) const = default;
};

/// All filters of one joint time-frequency scattering network. Immutable
/// once built; share it through std::shared_ptr<const FilterbankPlan>.
struct FilterbankPlan {
  JtfsParams params;
  std::size_t N_padded = 0;
  std::size_t N_fr_padded = 0;
  dsp::PadSpec time_pad;
  std::vector<SampledFilter> psi1;
  std::vector<SampledFilter> psi2;
  std::vector<SampledFilter> psi_fr;  // spinned: positive-xi filters then their mirrors
  SampledFilter phi_T;
  SampledFilter phi_F;

  std::string fingerprint() const {
    std::ostringstream os;
    os << "jtfs-plan-v1;J=" << params.J << ";Q1=" << params.Q1 << ";Q2=" << params.Q2
       << ";J_fr=" << params.J_fr << ";Q_fr=" << params.Q_fr << ";log2_T=" << params.log2_T
       << ";log2_F=" << params.log2_F << ";N=" << params.N_input << ";N_padded=" << N_padded
       << ";N_fr_padded=" << N_fr_padded;
    return os.str();
  }
};

inline std::vector<FilterSpec> make_specs(int J, int Q, int j_max) {
  std::vector<FilterSpec> specs;
  for (const auto& [xi, sigma] : constant_q_generator(J, Q)) {
    specs.push_back({xi, sigma, dyadic_scale(sigma, j_max), 1});
  }
  return specs;
}

inline void validate(const JtfsParams& p) {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (p.J < 1) fail("J must be >= 1 (got " + std::to_string(p.J) + ")");
  if (p.Q1 < 1) fail("Q1 must be >= 1 (got " + std::to_string(p.Q1) + ")");
  if (p.Q2 < 1) fail("Q2 must be >= 1 (got " + std::to_string(p.Q2) + ")");
  if (p.J_fr < 1) fail("J_fr must be >= 1 (got " + std::to_string(p.J_fr) + ")");
  if (p.Q_fr < 1) fail("Q_fr must be >= 1 (got " + std::to_string(p.Q_fr) + ")");
  if (p.log2_T < 0 || p.log2_T > p.J) fail("log2_T must satisfy 0 <= log2_T <= J");
  if (p.log2_F < 0 || p.log2_F > p.J_fr) fail("log2_F must satisfy 0 <= log2_F <= J_fr");
  if (p.N_input < 2) fail("N_input must be >= 2");
  if (p.J > 24 || p.J_fr > 16) fail("J or J_fr unreasonably large");
}

/// Temporal padded length: room for 2^max(J, log2_T) samples on each side.
inline std::size_t padded_length(const JtfsParams& p) {
  return dsp::next_pow2(p.N_input + 2 * (std::size_t{1} << std::max(p.J, p.log2_T)));
}

/// Frequential padded length: the first-order bins plus 2^(J_fr+3) bins of
/// zero padding, enough for the widest frequential filter to be resolved.
inline std::size_t padded_frequency_length(std::size_t n_psi1, int J_fr) {
  return dsp::next_pow2(n_psi1 + (std::size_t{1} << (J_fr + 3)));
}

inline std::shared_ptr<const FilterbankPlan> build_plan(const JtfsParams& p) {
  validate(p);
  auto plan = std::make_shared<FilterbankPlan>();
  plan->params = p;
  plan->N_padded = padded_length(p);
  plan->time_pad = dsp::pad_spec(p.N_input, plan->N_padded);

  const auto specs1 = make_specs(p.J, p.Q1, p.J);
  const auto specs2 = make_specs(p.J, p.Q2, p.J);
  const auto specs_fr = spin(make_specs(p.J_fr, p.Q_fr, p.J_fr));
  if (specs1.empty()) throw ConfigError("first-order filterbank is empty for J, Q1");
  plan->N_fr_padded = padded_frequency_length(specs1.size(), p.J_fr);

  for (const auto& s : specs1) plan->psi1.push_back(sample_filter(plan->N_padded, s, 0));
  for (const auto& s : specs2) plan->psi2.push_back(sample_filter(plan->N_padded, s, p.log2_T));
  for (const auto& s : specs_fr) plan->psi_fr.push_back(sample_filter(plan->N_fr_padded, s, 0));
  plan->phi_T = sample_filter(plan->N_padded, {0.0, kSigma0 / std::pow(2.0, p.log2_T), p.log2_T, 0},
                              p.log2_T);
  plan->phi_F = sample_filter(plan->N_fr_padded,
                              {0.0, kSigma0 / std::pow(2.0, p.log2_F), p.log2_F, 0}, p.log2_F);
  return plan;
}

struct LittlewoodPaley {
  double A = 0.0;         // min over the covered band
  double B = 0.0;         // max over the covered band
  double B_global = 0.0;  // max over every bin
  double band_lo = 0.0;
  double band_hi = 0.0;
};

/// Littlewood-Paley sum of the first-order filterbank plus phi_T. The
/// covered band runs from the lowest first-order center frequency to 0.45.
inline LittlewoodPaley littlewood_paley(const FilterbankPlan& plan) {
  const std::size_t n = plan.N_padded;
  RealVec sum(n, 0.0);
  for (const auto& f : plan.psi1) {
    for (std::size_t k = 0; k < n; ++k) sum[k] += f.levels[0][k] * f.levels[0][k];
  }
  for (std::size_t k = 0; k < n; ++k) sum[k] += plan.phi_T.levels[0][k] * plan.phi_T.levels[0][k];

  LittlewoodPaley lp;
  lp.band_lo = plan.psi1.back().spec.xi;
  lp.band_hi = 0.45;
  lp.A = 1e300;
  for (std::size_t k = 0; k < n; ++k) {
    lp.B_global = std::max(lp.B_global, sum[k]);
    const double omega = static_cast<double>(k) / static_cast<double>(n);
    if (omega >= lp.band_lo && omega <= lp.band_hi) {
      lp.A = std::min(lp.A, sum[k]);
      lp.B = std::max(lp.B, sum[k]);
    }
  }
  return lp;
}

}  // namespace jtfs
