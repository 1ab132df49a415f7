// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference check of the waveform gradient. For a random target x
// and estimate y, the analytic directional derivative dE/dy . v is compared
// with central differences of the loss along random unit directions v.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "jtfs/adjoint.hpp"
#include "jtfs/error.hpp"
#include "jtfs/filterbank.hpp"
#include "jtfs/scattering.hpp"

namespace jtfs {

struct GradcheckOptions {
  int directions = 100;
  std::vector<double> steps{1e-4, 1e-5, 1e-6};  // relative to |y|
  double tolerance = 1e-4;
  double required_fraction = 0.99;
};

struct GradcheckReport {
  std::vector<double> errors;  // per direction, best over the step sweep
  double max_error = 0.0;
  double median_error = 0.0;
  double pass_fraction = 0.0;
  bool passed = false;
};

inline RealVec gaussian_signal(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  RealVec v(n);
  for (auto& s : v) s = normal(rng);
  return v;
}

inline double dot(const RealVec& a, const RealVec& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

/// Relative disagreement of an analytic and a numerical derivative. The
/// denominator is floored at `floor` so derivatives that vanish by chance
/// along a direction are judged on an absolute scale instead.
inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// One seeded instance: x and y are independent white Gaussian signals.
inline GradcheckReport gradient_check(const FilterbankPlan& plan, std::uint64_t seed,
                                      const GradcheckOptions& opt = {}) {
  if (opt.directions <= 0 || opt.steps.empty()) {
    throw ConfigError("gradient check needs at least one direction and one step");
  }
  const std::size_t n = plan.params.N_input;
  std::mt19937_64 rng(seed);
  const RealVec x = gaussian_signal(n, rng);
  const RealVec y = gaussian_signal(n, rng);
  const CoefficientSet sx = jtfs_forward(x, plan);
  const auto ld = loss_and_direction(y, sx, plan);
  const double scale = std::sqrt(dot(y, y));
  const double grad_norm = std::sqrt(dot(ld.direction, ld.direction));

  GradcheckReport report;
  RealVec probe(n);
  for (int d = 0; d < opt.directions; ++d) {
    RealVec v = gaussian_signal(n, rng);
    const double norm = std::sqrt(dot(v, v));
    for (auto& s : v) s /= norm;
    const double analytic = -dot(ld.direction, v);
    double best = INFINITY;
    for (double step : opt.steps) {
      const double h = step * scale;
      for (std::size_t i = 0; i < n; ++i) probe[i] = y[i] + h * v[i];
      const double plus = loss_value(probe, sx, plan);
      for (std::size_t i = 0; i < n; ++i) probe[i] = y[i] - h * v[i];
      const double minus = loss_value(probe, sx, plan);
      best = std::min(best, relative_error(analytic, (plus - minus) / (2.0 * h), 1e-8 * grad_norm));
    }
    report.errors.push_back(best);
  }
  std::vector<double> sorted = report.errors;
  std::sort(sorted.begin(), sorted.end());
  report.max_error = sorted.back();
  report.median_error = sorted[sorted.size() / 2];
  const auto ok = std::count_if(sorted.begin(), sorted.end(), [&](double e) { return e <= opt.tolerance; });
  report.pass_fraction = static_cast<double>(ok) / static_cast<double>(sorted.size());
  report.passed = report.pass_fraction >= opt.required_fraction;
  return report;
}

/// Hyperparameters of the standard small instance.
inline JtfsParams gradcheck_params() {
  JtfsParams p;
  p.J = 5;
  p.Q1 = 2;
  p.Q2 = 1;
  p.J_fr = 3;
  p.Q_fr = 1;
  p.log2_T = 3;
  p.log2_F = 1;
  p.N_input = 1024;
  return p;
}

}  // namespace jtfs
