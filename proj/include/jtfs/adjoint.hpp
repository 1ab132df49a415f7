// SPDX-License-Identifier: Apache-2.0
//
// Euclidean scattering loss and its gradient with respect to the waveform.
//
// The loss is E(y) = 1/2 sum_{orders 1,2} |Sx - Sy|^2. Backpropagation
// starts from the residual Sx - Sy = -dE/dSy, so every gradient returned
// here points downhill: adding it to y decreases E. The backward pass walks
// the forward stages in reverse with exact adjoints:
//
//   averaging (phi_T, phi_F, unpadding)   -> gradient on U2 = |Y2 *fr psi_fr|
//   modulus (phase z/|z|), frequential filtering and padding
//   psi2 filtering of each stacked row     -> gradient on U1 = |x * psi1|
//   modulus, psi1 filtering, reflection padding -> gradient on x
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "jtfs/array2d.hpp"
#include "jtfs/dsp.hpp"
#include "jtfs/error.hpp"
#include "jtfs/filterbank.hpp"
#include "jtfs/scattering.hpp"

namespace jtfs {

/// z/|z| is taken as 0 below this fraction of the block RMS modulus.
inline constexpr double kPhaseFloor = 1e-12;

struct LossReport {
  double total = 0.0;
  std::map<int, double> per_order;
  std::vector<std::pair<PathKey, double>> per_path;
};

using PathGradients = std::vector<std::pair<PathKey, RealArray>>;

inline void check_compatible(const CoefficientSet& a, const CoefficientSet& b) {
  const std::size_t n = std::min(a.entries.size(), b.entries.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto& ea = a.entries[i];
    const auto& eb = b.entries[i];
    if (!(ea.key == eb.key) || ea.values.rows() != eb.values.rows() ||
        ea.values.cols() != eb.values.cols()) {
      throw IncompatibleError("coefficient sets differ at path " + ea.key.to_string());
    }
  }
  if (a.entries.size() != b.entries.size()) {
    const auto& longer = a.entries.size() > b.entries.size() ? a : b;
    throw IncompatibleError("coefficient sets differ at path " + longer.entries[n].key.to_string());
  }
}

/// 1/2 squared Euclidean distance over orders 1 and 2.
inline LossReport scattering_loss(const CoefficientSet& sx, const CoefficientSet& sy) {
  check_compatible(sx, sy);
  LossReport report;
  for (std::size_t i = 0; i < sx.entries.size(); ++i) {
    const auto& ex = sx.entries[i];
    if (ex.key.order == 0) continue;
    const auto& vx = ex.values.data();
    const auto& vy = sy.entries[i].values.data();
    double acc = 0.0;
    for (std::size_t k = 0; k < vx.size(); ++k) {
      const double d = vx[k] - vy[k];
      acc += d * d;
    }
    acc *= 0.5;
    report.per_path.emplace_back(ex.key, acc);
    report.per_order[ex.key.order] += acc;
  }
  for (const auto& [order, value] : report.per_order) report.total += value;
  return report;
}

namespace detail {

inline RealArray residual(const CoefficientEntry& ex, const CoefficientEntry& ey) {
  if (ex.values.rows() != ey.values.rows() || ex.values.cols() != ey.values.cols()) {
    throw IncompatibleError("coefficient shapes differ at path " + ex.key.to_string());
  }
  RealArray r(ex.values.rows(), ex.values.cols());
  for (std::size_t k = 0; k < r.size(); ++k) r.data()[k] = ex.values.data()[k] - ey.values.data()[k];
  return r;
}

inline double rms_modulus(std::span<const cplx> z) {
  double acc = 0.0;
  for (const auto& v : z) acc += std::norm(v);
  return z.empty() ? 0.0 : std::sqrt(acc / static_cast<double>(z.size()));
}

/// Backward of |z|: g * z/|z|, with the phase taken as 0 where |z| is at or
/// below `floor`.
inline void modulus_backward(std::span<const cplx> z, std::span<const double> g, double floor,
                             std::span<cplx> out) {
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double m = dsp::magnitude(z[i]);
    out[i] = m > floor && m > 0.0 ? g[i] * (z[i] / m) : cplx{};
  }
}

inline void modulus_backward(std::span<const cplx> z, std::span<const double> g, std::span<cplx> out) {
  modulus_backward(z, g, kPhaseFloor * rms_modulus(z), out);
}

/// Shared body of the block adjoints. grad_column(s, t, gm) writes the
/// gradient on column t of stage s's modulus block into gm.
template <typename GradColumn>
CplxArray block_paths_adjoint_impl(const CplxArray& x, const BlockSpec& spec, const FilterbankPlan& plan,
                                   std::span<const double> rms, GradColumn&& grad_column) {
  const auto stages = frequential_stages(plan, spec.spinned, spec.n1_max);
  if (rms.size() != stages.size()) throw SizeError("block adjoint: one RMS per path expected");
  const std::size_t n_fr = plan.N_fr_padded;
  FrequentialColumn column(plan);
  CplxVec acc(n_fr);
  CplxVec gz(n_fr);
  RealVec gm(n_fr);
  CplxArray gx(x.rows(), x.cols());
  for (std::size_t t = 0; t < x.cols(); ++t) {
    column.load(x, t);
    std::fill(acc.begin(), acc.end(), cplx{});
    for (std::size_t s = 0; s < stages.size(); ++s) {
      const auto& st = stages[s];
      const auto z = column.filter(*st.filter, st.log2_stride);
      const std::size_t m = z.size();
      std::span<double> gms(gm.data(), m);
      std::span<cplx> gzs(gz.data(), m);
      grad_column(s, st, t, gms);
      modulus_backward(z, gms, kPhaseFloor * rms[s], gzs);
      // Adjoint of fold-and-decimate: tile the spectrum, weight by the filter.
      dsp::fft_inplace(gzs);
      const auto h = st.filter->level(0);
      for (std::size_t b = 0; b < n_fr / m; ++b) {
        for (std::size_t j = 0; j < m; ++j) acc[b * m + j] += gz[j] * h[b * m + j];
      }
    }
    dsp::ifft_inplace(acc);
    for (std::size_t i = 0; i < x.rows(); ++i) gx(i, t) = acc[i];
  }
  return gx;
}

}  // namespace detail

/// Adjoint of block_paths linearized at x, for gradients on the path
/// coefficients (one per path, in path order). `rms` is what block_paths
/// reported for the same x.
inline CplxArray block_paths_adjoint(const CplxArray& x, const BlockSpec& spec, const FilterbankPlan& plan,
                                     std::span<const double> rms, const std::vector<RealArray>& grads) {
  std::vector<RealArray> g_freq_avg;
  for (const auto& g : grads) g_freq_avg.push_back(detail::time_average_adjoint(g, spec.log2_stride_time, plan));
  return detail::block_paths_adjoint_impl(
      x, spec, plan, rms,
      [&](std::size_t s, const detail::FrequentialStage& st, std::size_t t, std::span<double> gm) {
        if (s >= g_freq_avg.size() || g_freq_avg[s].rows() != st.avg.rows()) {
          throw SizeError("block adjoint: gradient shape mismatch");
        }
        std::fill(gm.begin(), gm.end(), 0.0);
        for (std::size_t r = 0; r < st.avg.rows(); ++r) {
          const double w = g_freq_avg[s](r, t);
          const auto a = st.avg.row(r);
          for (std::size_t i = 0; i < gm.size(); ++i) gm[i] += w * a[i];
        }
      });
}

/// Same, for gradients already pulled back to the modulus blocks.
inline CplxArray block_paths_adjoint_modulus(const CplxArray& x, const BlockSpec& spec,
                                             const FilterbankPlan& plan, std::span<const double> rms,
                                             const std::vector<const RealArray*>& grads) {
  return detail::block_paths_adjoint_impl(
      x, spec, plan, rms,
      [&](std::size_t s, const detail::FrequentialStage&, std::size_t t, std::span<double> gm) {
        const RealArray& g = *grads.at(s);
        if (g.rows() != gm.size() || g.cols() != x.cols()) {
          throw SizeError("block adjoint: modulus gradient shape mismatch");
        }
        for (std::size_t i = 0; i < gm.size(); ++i) gm[i] = g(i, t);
      });
}

/// Adjoint of frequency_scattering (a linear map), accumulated over the
/// frequential output blocks of one input block.
class FrequentialAdjoint {
public:
  FrequentialAdjoint(std::size_t time_cols, const FilterbankPlan& plan)
      : plan_(plan), acc_(time_cols, plan.N_fr_padded) {}

  /// Add the adjoint image of a gradient on one frequential output block
  /// (frequency x time layout, as produced by frequency_scattering).
  void add(const FrequencyBlock& fb, const CplxArray& grad) {
    const auto& filter = fb.n_fr == kLowpassIndex ? plan_.phi_F
                                                  : plan_.psi_fr[static_cast<std::size_t>(fb.n_fr)];
    const CplxArray gt = dsp::swap_time_frequency(grad);
    for (std::size_t t = 0; t < gt.rows(); ++t) {
      dsp::filter_subsample_adjoint_acc(gt.row(t), filter.level(0), 1.0, detail::pow2(fb.log2_stride),
                                        acc_.row(t));
    }
  }

  /// Gradient on the unpadded input block, n1_max rows x time cols.
  CplxArray finish(std::size_t n1_max) {
    for (std::size_t t = 0; t < acc_.rows(); ++t) dsp::ifft_inplace(acc_.row(t));
    const CplxArray g = dsp::swap_time_frequency(acc_);
    CplxArray out(n1_max, g.cols());
    std::copy_n(g.data().begin(), n1_max * g.cols(), out.data().begin());
    return out;
  }

private:
  const FilterbankPlan& plan_;
  CplxArray acc_;
};

namespace detail {

inline const CoefficientEntry& lookup(const CoefficientSet& s, const PathKey& key) {
  const auto* e = s.find(key);
  if (e == nullptr) throw IncompatibleError("missing path " + key.to_string());
  return *e;
}

inline const RealArray& lookup(const PathGradients& g, const PathKey& key) {
  for (const auto& [k, v] : g) {
    if (k == key) return v;
  }
  throw IncompatibleError("no second-order gradient for path " + key.to_string());
}

inline void require_trace(const ForwardTrace& trace) {
  if (trace.plan == nullptr || trace.scalogram.rows.empty()) {
    throw StateError("backward pass needs the intermediates of a traced forward pass");
  }
}

/// Pull block gradients back onto the scalogram rows. block_grad(x, spec)
/// returns the gradient on the block input x; it is called once for S1 and
/// once per width-first block, in path order.
template <typename BlockGrad>
std::vector<RealVec> backprop_blocks(const ForwardTrace& trace, BlockGrad&& block_grad) {
  require_trace(trace);
  const FilterbankPlan& plan = *trace.plan;
  const int log2_T = plan.params.log2_T;
  const auto& u1 = trace.scalogram;
  const std::size_t n1_count = u1.rows.size();

  std::vector<CplxVec> g_hat(n1_count);
  for (std::size_t n1 = 0; n1 < n1_count; ++n1) g_hat[n1].assign(u1.rows[n1].size(), cplx{});

  // Order 1 reaches U1 through the phi_T averaging that produced S1.
  {
    const RealArray& s1 = trace.time.s1;
    const CplxArray gs1 = block_grad(to_complex(s1), first_order_spec(trace.time, plan));
    CplxVec row(s1.cols());
    for (std::size_t n1 = 0; n1 < n1_count; ++n1) {
      for (std::size_t t = 0; t < row.size(); ++t) row[t] = gs1(n1, t).real();
      const int k1 = u1.log2_stride[n1];
      dsp::filter_subsample_adjoint_acc(row, plan.phi_T.level(k1), static_cast<double>(pow2(k1)),
                                        pow2(log2_T - k1), g_hat[n1]);
    }
  }

  // Order 2 reaches U1 through psi2, one width-first block at a time.
  for (const auto& block : trace.time.y2) {
    const CplxArray gy2 = block_grad(block.coef, second_order_spec(block));
    const auto& psi = plan.psi2[static_cast<std::size_t>(block.n2)];
    std::size_t r = 0;
    for (std::size_t n1 = 0; n1 < n1_count; ++n1) {
      if (!(block.j2 > u1.j1[n1])) continue;
      const int k1 = u1.log2_stride[n1];
      const int k2 = block.log2_stride - k1;
      dsp::filter_subsample_adjoint_acc(gy2.row(r), psi.level(k1), static_cast<double>(pow2(k1)),
                                        pow2(k2), g_hat[n1]);
      ++r;
    }
  }

  std::vector<RealVec> out(n1_count);
  for (std::size_t n1 = 0; n1 < n1_count; ++n1) {
    dsp::ifft_inplace(g_hat[n1]);
    out[n1].resize(g_hat[n1].size());
    for (std::size_t t = 0; t < out[n1].size(); ++t) out[n1][t] = g_hat[n1][t].real();
  }
  return out;
}

inline std::vector<RealArray> residuals(const std::vector<CoefficientEntry>& entries,
                                        const CoefficientSet& sx, const CoefficientSet& sy) {
  std::vector<RealArray> out;
  for (const auto& e : entries) out.push_back(residual(lookup(sx, e.key), lookup(sy, e.key)));
  return out;
}

}  // namespace detail

/// Residual Sx - Sy of every second-order path, pulled back through the
/// frequential and temporal averaging to the resolution of U2.
inline PathGradients grad_U2(const CoefficientSet& sx, const CoefficientSet& sy,
                             const FilterbankPlan& plan) {
  check_compatible(sx, sy);
  PathGradients out;
  for (std::size_t i = 0; i < sx.entries.size(); ++i) {
    const auto& ex = sx.entries[i];
    if (ex.key.order != 2) continue;
    const auto& ey = sy.entries[i];
    out.emplace_back(ex.key, average_and_format_adjoint(ey, detail::residual(ex, ey), plan));
  }
  return out;
}

/// Descent gradient on the scalogram rows of y (each at its own stride):
/// the order-1 residual term plus every second-order path backpropagated
/// through its modulus, frequential wavelet and psi2 wavelet.
inline std::vector<RealVec> grad_U1(const ForwardTrace& trace, const PathGradients& grad_u2,
                                    const CoefficientSet& sx, const CoefficientSet& sy) {
  detail::require_trace(trace);
  check_compatible(sx, sy);
  const FilterbankPlan& plan = *trace.plan;
  return detail::backprop_blocks(trace, [&](const CplxArray& x, const BlockSpec& spec) {
    std::vector<double> rms;
    const auto entries = block_paths(x, spec, plan, &rms);
    if (spec.order == 1) {
      return block_paths_adjoint(x, spec, plan, rms, detail::residuals(entries, sx, sy));
    }
    std::vector<const RealArray*> grads;
    for (const auto& e : entries) grads.push_back(&detail::lookup(grad_u2, e.key));
    return block_paths_adjoint_modulus(x, spec, plan, rms, grads);
  });
}

/// Same as grad_U1 but starts every path from its coefficient residual
/// instead of holding all U2 gradients at once.
inline std::vector<RealVec> grad_U1(const ForwardTrace& trace, const CoefficientSet& sx,
                                    const CoefficientSet& sy) {
  detail::require_trace(trace);
  check_compatible(sx, sy);
  const FilterbankPlan& plan = *trace.plan;
  return detail::backprop_blocks(trace, [&](const CplxArray& x, const BlockSpec& spec) {
    std::vector<double> rms;
    const auto entries = block_paths(x, spec, plan, &rms);
    return block_paths_adjoint(x, spec, plan, rms, detail::residuals(entries, sx, sy));
  });
}

/// Backpropagate a scalogram gradient through the modulus, the psi1
/// wavelets and the reflection padding onto the waveform.
inline RealVec grad_waveform(const ForwardTrace& trace, const std::vector<RealVec>& grad_u1) {
  detail::require_trace(trace);
  const FilterbankPlan& plan = *trace.plan;
  const auto& u1 = trace.scalogram;
  if (grad_u1.size() != u1.rows.size()) throw SizeError("grad_waveform: row count mismatch");
  CplxVec acc(plan.N_padded, cplx{});
  for (std::size_t n1 = 0; n1 < grad_u1.size(); ++n1) {
    const auto& c = u1.complex_rows[n1];
    if (grad_u1[n1].size() != c.size()) throw SizeError("grad_waveform: row length mismatch");
    CplxVec gc(c.size());
    detail::modulus_backward(c, grad_u1[n1], gc);
    dsp::filter_subsample_adjoint_acc(gc, plan.psi1[n1].level(0), 1.0,
                                      detail::pow2(u1.log2_stride[n1]), acc);
  }
  dsp::ifft_inplace(acc);
  RealVec g(acc.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = acc[i].real();
  return dsp::pad_time_adjoint(g, plan.time_pad);
}

struct LossAndDirection {
  LossReport loss;
  RealVec direction;  // -dE/dy
  CoefficientSet sy;
};

/// Loss of y against reference coefficients sx, and the descent direction,
/// in one pass: each block's paths are backpropagated as soon as they are
/// computed, so no frequential stage runs twice.
inline LossAndDirection loss_and_direction(std::span<const double> y, const CoefficientSet& sx,
                                           const FilterbankPlan& plan) {
  check_input(y, plan);
  if (!sx.plan_fingerprint.empty() && sx.plan_fingerprint != plan.fingerprint()) {
    throw IncompatibleError("reference coefficients were computed with a different plan");
  }
  ForwardTrace trace;
  trace.plan = &plan;
  trace.padded = dsp::pad_time(y, plan.N_padded);
  trace.time = time_scattering_widthfirst(trace.padded, plan, &trace);

  LossAndDirection out;
  out.sy.plan_fingerprint = plan.fingerprint();
  out.sy.entries.push_back(detail::zeroth_order_entry(trace.time, plan));
  const auto grad_u1 = detail::backprop_blocks(trace, [&](const CplxArray& x, const BlockSpec& spec) {
    std::vector<double> rms;
    auto entries = block_paths(x, spec, plan, &rms);
    std::vector<RealArray> grads;
    for (const auto& e : entries) grads.push_back(detail::residual(detail::lookup(sx, e.key), e));
    for (auto& e : entries) out.sy.entries.push_back(std::move(e));
    return block_paths_adjoint(x, spec, plan, rms, grads);
  });
  out.loss = scattering_loss(sx, out.sy);
  out.direction = grad_waveform(trace, grad_u1);
  return out;
}

inline double loss_value(std::span<const double> y, const CoefficientSet& sx,
                         const FilterbankPlan& plan) {
  return scattering_loss(sx, jtfs_forward(y, plan)).total;
}

}  // namespace jtfs
