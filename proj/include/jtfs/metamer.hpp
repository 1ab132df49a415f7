// SPDX-License-Identifier: Apache-2.0
//
// Metamer synthesis: start from Gaussian noise whose band energies follow
// the reference's first-order profile, then descend the scattering loss with
// heavy-ball momentum and a bold-driver learning rate.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "jtfs/adjoint.hpp"
#include "jtfs/array2d.hpp"
#include "jtfs/dsp.hpp"
#include "jtfs/error.hpp"
#include "jtfs/filterbank.hpp"
#include "jtfs/scattering.hpp"

namespace jtfs {

struct ReconstructionConfig {
  int iterations = 100;
  double mu0 = 0.1;
  double momentum = 0.9;
  double bold_grow = 1.1;
  double bold_shrink = 0.5;
  std::uint64_t seed = 0;
  double loss_tolerance = 1e-3;  // stop once loss / (1/2 |Sx|^2) falls to this
  int max_retries = 8;

  void validate() const {
    if (iterations <= 0) throw ConfigError("iterations must be positive");
    if (!(mu0 > 0.0)) throw ConfigError("initial learning rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (!(bold_shrink > 0.0 && bold_shrink < 1.0 && bold_grow > 1.0)) {
      throw ConfigError("bold driver needs 0 < shrink < 1 < grow");
    }
    if (max_retries < 0) throw ConfigError("retry cap must be non-negative");
  }
};

/// One row of the loss curve. Row 0 is the starting point.
struct StepRecord {
  int iteration = 0;
  double loss = 0.0;
  double mu = 0.0;      // learning rate after the iteration
  bool accepted = true;  // false when every retry increased the loss
};

struct ReconstructionState {
  RealVec y;
  RealVec u;
  double mu = 0.0;
  double momentum = 0.0;
  double loss = 0.0;                // loss at y
  std::vector<double> loss_history;  // one entry per completed iteration
  std::vector<StepRecord> records;   // starting point plus one per iteration
  int iteration = 0;

  static ReconstructionState start(RealVec y0, double loss, const ReconstructionConfig& config) {
    ReconstructionState s;
    s.u.assign(y0.size(), 0.0);
    s.y = std::move(y0);
    s.mu = config.mu0;
    s.momentum = config.momentum;
    s.loss = loss;
    s.records.push_back({0, loss, s.mu, true});
    return s;
  }
};

/// Loss at a point and the descent direction there.
struct Evaluation {
  double loss = 0.0;
  RealVec direction;
};

namespace detail {

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace detail

/// One momentum iteration with bold-driver control. `evaluate(y)` returns
/// the loss and descent direction at y. A trial that does not increase the
/// loss is accepted and grows the rate; otherwise y is restored, the
/// velocity cleared, the rate shrunk, and the trial repeated. After
/// max_retries failed retries the current point is kept and the iteration is
/// recorded as not accepted. Returns the evaluation at the resulting y.
template <typename Evaluate>
Evaluation step(ReconstructionState& state, const RealVec& direction, const ReconstructionConfig& config,
                Evaluate&& evaluate) {
  if (direction.size() != state.y.size()) throw SizeError("step: direction length mismatch");
  if (!detail::all_finite(direction)) {
    throw NumericError("step: non-finite descent direction at iteration " +
                       std::to_string(state.iteration));
  }
  const std::size_t n = state.y.size();
  RealVec u_trial(n);
  RealVec y_trial(n);
  for (int attempt = 0; attempt <= config.max_retries; ++attempt) {
    for (std::size_t i = 0; i < n; ++i) {
      u_trial[i] = state.momentum * state.u[i] + state.mu * direction[i];
      y_trial[i] = state.y[i] + u_trial[i];
    }
    Evaluation ev = evaluate(std::as_const(y_trial));
    if (std::isfinite(ev.loss) && ev.loss <= state.loss) {
      state.y.swap(y_trial);
      state.u.swap(u_trial);
      state.mu *= config.bold_grow;
      state.loss = ev.loss;
      ++state.iteration;
      state.loss_history.push_back(state.loss);
      state.records.push_back({state.iteration, state.loss, state.mu, true});
      return ev;
    }
    std::fill(state.u.begin(), state.u.end(), 0.0);
    state.mu *= config.bold_shrink;
  }
  ++state.iteration;
  state.loss_history.push_back(state.loss);
  state.records.push_back({state.iteration, state.loss, state.mu, false});
  return {state.loss, direction};
}

/// Time-and-frequency averaged first-order profile: the row means of the
/// order-1 phi_F path of a signal of plan.params.N_input samples.
inline RealVec first_order_profile(std::span<const double> x, const FilterbankPlan& plan) {
  check_input(x, plan);
  const RealVec padded = dsp::pad_time(x, plan.N_padded);
  const Scalogram u1 = compute_scalogram(padded, plan);
  std::vector<CplxVec> u1_hat;
  for (const auto& row : u1.rows) u1_hat.push_back(dsp::rfft(row));
  const RealArray s1 = average_scalogram(u1, u1_hat, plan);
  const BlockSpec spec{1, std::nullopt, -1, static_cast<int>(s1.rows()), plan.params.log2_T, false};
  const auto entries = block_paths(detail::to_complex(s1), spec, plan);
  const RealArray& v = entries.front().values;
  RealVec out(v.rows(), 0.0);
  for (std::size_t r = 0; r < v.rows(); ++r) {
    for (double e : v.row(r)) out[r] += e;
    out[r] /= static_cast<double>(v.cols());
  }
  return out;
}

inline RealVec first_order_profile(const CoefficientSet& s) {
  for (const auto& e : s.entries) {
    if (e.key.order == 1 && e.key.n_fr == kLowpassIndex) {
      RealVec out(e.values.rows(), 0.0);
      for (std::size_t r = 0; r < e.values.rows(); ++r) {
        for (double v : e.values.row(r)) out[r] += v;
        out[r] /= static_cast<double>(e.values.cols());
      }
      return out;
    }
  }
  throw IncompatibleError("coefficient set has no first-order low-pass path");
}

inline constexpr double kFallbackNoiseRms = 1e-4;
inline constexpr int kColoringIterations = 12;
inline constexpr int kModelIterations = 5000;

namespace detail {

/// Linear map from time-averaged first-order rows (one per psi1 filter) to
/// the first-order profile: frequential low-pass filtering, decimation and
/// averaging, probed with one unit impulse per row. The phi_F kernel is
/// positive, so the modulus in between is the identity on nonnegative input.
inline RealArray profile_operator(const FilterbankPlan& plan) {
  const auto n1_count = static_cast<int>(plan.psi1.size());
  const auto stages = frequential_stages(plan, false, n1_count);
  const auto& st = *std::find_if(stages.begin(), stages.end(),
                                 [](const FrequentialStage& s) { return s.n_fr == kLowpassIndex; });
  RealArray out(st.avg.rows(), plan.psi1.size());
  FrequentialColumn column(plan);
  CplxArray impulse(plan.psi1.size(), 1);
  for (std::size_t n1 = 0; n1 < plan.psi1.size(); ++n1) {
    impulse(n1, 0) = 1.0;
    column.load(impulse, 0);
    impulse(n1, 0) = 0.0;
    const auto z = column.filter(*st.filter, st.log2_stride);
    for (std::size_t r = 0; r < out.rows(); ++r) {
      const auto w = st.avg.row(r);
      double acc = 0.0;
      for (std::size_t i = 0; i < z.size(); ++i) acc += w[i] * std::abs(z[i]);
      out(r, n1) = acc;
    }
  }
  return out;
}

}  // namespace detail

/// Gaussian noise shaped so that its first-order profile matches the one of
/// Sx. Every frequency bin is assigned to the profile row whose psi1 bands
/// respond most there, and the white spectrum is scaled by one gain per
/// row. Gains are first solved on a model of the profile: the mean modulus
/// of a Gaussian band is proportional to the square root of its power,
/// which is linear in the squared gains. A few fixed-point passes on the
/// measured profile then absorb what the model misses. Falls back to white
/// noise of RMS 1e-4 when Sx has no first-order energy.
inline RealVec init_colored_noise(const CoefficientSet& sx, const FilterbankPlan& plan,
                                  std::uint64_t seed) {
  const RealVec target = first_order_profile(sx);
  const std::size_t n_in = plan.params.N_input;
  const std::size_t n_pad = plan.N_padded;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  RealVec white(n_pad);
  for (auto& v : white) v = normal(rng);

  const double peak = *std::max_element(target.begin(), target.end());
  if (!(peak > 0.0)) {
    RealVec out(white.begin() + static_cast<std::ptrdiff_t>(plan.time_pad.left),
                white.begin() + static_cast<std::ptrdiff_t>(plan.time_pad.left + n_in));
    double energy = 0.0;
    for (double v : out) energy += v * v;
    const double scale = kFallbackNoiseRms / std::sqrt(energy / static_cast<double>(n_in));
    for (auto& v : out) v *= scale;
    return out;
  }
  const CplxVec white_hat = dsp::rfft(white);

  // Row r of the profile averages psi1 bands around n1 = r * 2^log2_F.
  // Bins where no psi1 filter reaches 10% of its peak response stay silent.
  const std::size_t rows = target.size();
  const std::size_t n1_count = plan.psi1.size();
  const std::size_t half = n_pad / 2;
  std::vector<std::ptrdiff_t> owner(half + 1, -1);
  RealVec best(half + 1, 0.0);
  for (std::size_t n1 = 0; n1 < n1_count; ++n1) {
    const auto r = static_cast<std::ptrdiff_t>(std::min(rows - 1, n1 >> plan.params.log2_F));
    const auto h = plan.psi1[n1].level(0);
    for (std::size_t k = 0; k <= half; ++k) {
      if (std::abs(h[k]) > best[k]) {
        best[k] = std::abs(h[k]);
        owner[k] = r;
      }
    }
  }
  const double floor = 0.1 * *std::max_element(best.begin(), best.end());
  for (std::size_t k = 0; k <= half; ++k) {
    if (best[k] < floor) owner[k] = -1;
  }

  // power(n1, r): energy that row r's bins of this white noise put through psi1 filter n1.
  RealArray power(n1_count, rows);
  for (std::size_t n1 = 0; n1 < n1_count; ++n1) {
    const auto h = plan.psi1[n1].level(0);
    for (std::size_t k = 0; k <= half; ++k) {
      if (owner[k] >= 0) power(n1, static_cast<std::size_t>(owner[k])) += h[k] * h[k] * std::norm(white_hat[k]);
    }
  }
  const RealArray averaging = detail::profile_operator(plan);
  RealVec gain(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) gain[r] = target[r] / peak;
  auto model = [&] {
    RealVec amp(n1_count, 0.0);
    for (std::size_t n1 = 0; n1 < n1_count; ++n1) {
      for (std::size_t r = 0; r < rows; ++r) amp[n1] += power(n1, r) * gain[r] * gain[r];
      amp[n1] = std::sqrt(amp[n1]);
    }
    RealVec out(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t n1 = 0; n1 < n1_count; ++n1) out[r] += averaging(r, n1) * amp[n1];
    }
    return out;
  };

  // Multiplicative fixed point: gain_r *= target_r / profile_r. Returns
  // whether every row above 1e-3 of the peak is within `tol`.
  auto update = [&](const RealVec& current, double tol) {
    bool converged = true;
    for (std::size_t r = 0; r < rows; ++r) {
      if (current[r] > 1e-12 * peak) {
        const double ratio = target[r] / current[r];
        if (std::abs(ratio - 1.0) > tol && target[r] > 1e-3 * peak) converged = false;
        gain[r] *= ratio;
      }
    }
    return converged;
  };
  for (int it = 0; it < kModelIterations && !update(model(), 1e-4); ++it) {
  }

  auto synthesize = [&] {
    CplxVec spec(n_pad, cplx{});
    for (std::size_t k = 0; k <= half; ++k) {
      if (owner[k] < 0) continue;
      const double g = gain[static_cast<std::size_t>(owner[k])];
      spec[k] = white_hat[k] * g;
      if (k != 0 && k != half) spec[n_pad - k] = white_hat[n_pad - k] * g;
    }
    dsp::ifft_inplace(spec);
    RealVec out(n_in);
    for (std::size_t i = 0; i < n_in; ++i) out[i] = spec[plan.time_pad.left + i].real();
    return out;
  };

  RealVec y = synthesize();
  for (int it = 0; it < kColoringIterations; ++it) {
    const bool converged = update(first_order_profile(y, plan), 0.02);
    y = synthesize();
    if (converged) break;
  }
  return y;
}

struct ReconstructionResult {
  RealVec y;
  ReconstructionState state;
  double reference_energy = 0.0;  // 1/2 |Sx|^2 over orders 1 and 2
};

inline double reference_energy(const CoefficientSet& sx) {
  double acc = 0.0;
  for (const auto& e : sx.entries) {
    if (e.key.order == 0) continue;
    for (double v : e.values.data()) acc += v * v;
  }
  return 0.5 * acc;
}

/// Descend from y0 towards the coefficients sx.
inline ReconstructionResult reconstruct(const CoefficientSet& sx, RealVec y0, const FilterbankPlan& plan,
                                        const ReconstructionConfig& config) {
  config.validate();
  auto evaluate = [&](const RealVec& y) {
    auto ld = loss_and_direction(y, sx, plan);
    return Evaluation{ld.loss.total, std::move(ld.direction)};
  };
  Evaluation ev = evaluate(y0);
  if (!std::isfinite(ev.loss)) throw NumericError("initial loss is not finite");

  ReconstructionResult out;
  out.reference_energy = reference_energy(sx);
  out.state = ReconstructionState::start(std::move(y0), ev.loss, config);
  auto done = [&] {
    return out.state.loss == 0.0 || out.state.loss <= config.loss_tolerance * out.reference_energy;
  };
  while (out.state.iteration < config.iterations && !done()) {
    ev = step(out.state, ev.direction, config, evaluate);
  }
  out.y = out.state.y;
  return out;
}

/// Metamer of x: colored-noise start, then reconstruct.
inline ReconstructionResult reconstruct(std::span<const double> x, const FilterbankPlan& plan,
                                        const ReconstructionConfig& config) {
  config.validate();
  const CoefficientSet sx = jtfs_forward(x, plan);
  return reconstruct(sx, init_colored_noise(sx, plan, config.seed), plan, config);
}

/// Loss curve as CSV: iteration, loss, mu, accepted.
inline void write_loss_csv(std::ostream& os, const ReconstructionState& state) {
  os << "iteration,loss,mu,accepted\n";
  os.precision(17);
  for (const auto& r : state.records) {
    os << r.iteration << ',' << r.loss << ',' << r.mu << ',' << (r.accepted ? 1 : 0) << '\n';
  }
}

}  // namespace jtfs
