// SPDX-License-Identifier: Apache-2.0
//
// Forward joint time-frequency scattering.
//
//   order 0:  x * phi_T
//   order 1:  | S1 *fr psi_fr |  averaged by phi_T and phi_F, for phi_F and
//             every positive-spin frequential wavelet, where
//             S1 = |x * psi1| * phi_T
//   order 2:  | |x * psi1| * psi2 *fr psi_fr | averaged by phi_T and phi_F,
//             for every admissible (n2, n_fr) with j2 > j1 and both spins
//
// Second-order temporal scattering is computed width-first: for each psi2
// filter all admissible first-order rows are stacked into one block so the
// frequential wavelets can run across the whole log-frequency axis.
#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "jtfs/array2d.hpp"
#include "jtfs/dsp.hpp"
#include "jtfs/error.hpp"
#include "jtfs/filterbank.hpp"

namespace jtfs {

/// Identifies one coefficient block. n1 is always a placeholder: a block
/// spans every admissible first-order bin.
struct PathKey {
  int order = 0;
  std::optional<int> n2;
  std::optional<int> n_fr;  // index into psi_fr; -1 denotes the phi_F low-pass
  int spin = 0;
  int j1 = -1;
  int j2 = -1;
  int j_fr = -1;

  bool operator==(const PathKey& o) const {
    return order == o.order && n2 == o.n2 && n_fr == o.n_fr && spin == o.spin;
  }

  std::string to_string() const {
    std::ostringstream os;
    os << "(order=" << order;
    if (n2) os << ", n2=" << *n2;
    if (n_fr) os << ", n_fr=" << *n_fr;
    os << ", spin=" << spin << ")";
    return os.str();
  }
};

inline constexpr int kLowpassIndex = -1;

struct CoefficientEntry {
  PathKey key;
  RealArray values;  // rows: log-frequency bins; cols: time frames
  int n1_max = 0;
  int log2_stride_time = 0;  // final strides
  int log2_stride_freq = 0;
  int u_log2_stride_time = 0;  // strides of the modulus block before averaging
  int u_log2_stride_freq = 0;
};

struct CoefficientSet {
  std::vector<CoefficientEntry> entries;
  std::string plan_fingerprint;

  const CoefficientEntry* find(const PathKey& key) const {
    for (const auto& e : entries) {
      if (e.key == key) return &e;
    }
    return nullptr;
  }

  std::size_t coefficient_count() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.values.size();
    return n;
  }

  double squared_norm() const {
    double acc = 0.0;
    for (const auto& e : entries) {
      for (double v : e.values.data()) acc += v * v;
    }
    return acc;
  }
};

/// Modulus of the first-order wavelet transform; row n1 is at time stride
/// 2^log2_stride[n1] = 2^min(j1, log2_T).
struct Scalogram {
  std::vector<CplxVec> complex_rows;  // pre-modulus
  std::vector<RealVec> rows;
  std::vector<int> j1;
  std::vector<int> log2_stride;
};

/// One width-first block: psi2[n2] applied to the stacked admissible rows.
struct SecondOrderBlock {
  int n2 = 0;
  int j2 = 0;
  int n1_max = 0;
  int log2_stride = 0;  // min(j2, log2_T)
  CplxArray coef;       // n1_max rows x (N_padded >> log2_stride) cols
};

struct TimeScattering {
  RealVec s0;       // N_padded >> log2_T samples
  RealArray s1;     // len(psi1) rows x (N_padded >> log2_T) cols
  std::vector<SecondOrderBlock> y2;
};

/// Output of one frequential filter.
struct FrequencyBlock {
  int n_fr = 0;
  int spin = 0;
  int j_fr = 0;
  int log2_stride = 0;  // min(j_fr, log2_F)
  CplxArray coef;       // (N_fr_padded >> log2_stride) rows x time cols
};

/// Intermediates retained by a traced forward pass for the backward pass.
struct ForwardTrace {
  const FilterbankPlan* plan = nullptr;
  RealVec padded;
  Scalogram scalogram;
  std::vector<CplxVec> u1_hat;  // spectra of the scalogram rows
  TimeScattering time;
};

namespace detail {

inline std::size_t pow2(int k) { return std::size_t{1} << k; }

/// Apply gain*h (resolution of h matches each row) and decimate by 2^k along
/// every row of x.
inline CplxArray filter_rows(const CplxArray& x, std::span<const double> h, double gain, int k) {
  const std::size_t out_cols = x.cols() >> k;
  CplxArray out(x.rows(), out_cols);
  CplxVec buf(x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    std::copy(x.row(r).begin(), x.row(r).end(), buf.begin());
    dsp::fft_inplace(buf);
    const auto y = dsp::filter_subsample(buf, h, gain, pow2(k));
    std::copy(y.begin(), y.end(), out.row(r).begin());
  }
  return out;
}

inline RealArray filter_rows_real(const RealArray& x, std::span<const double> h, double gain, int k) {
  const std::size_t out_cols = x.cols() >> k;
  RealArray out(x.rows(), out_cols);
  CplxVec buf(x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    std::copy(x.row(r).begin(), x.row(r).end(), buf.begin());
    dsp::fft_inplace(buf);
    const auto y = dsp::filter_subsample(buf, h, gain, pow2(k));
    for (std::size_t c = 0; c < out_cols; ++c) out(r, c) = y[c].real();
  }
  return out;
}

/// Adjoint of filter_rows_real: zero-insert by 2^k, correlate, keep the real part.
inline RealArray filter_rows_real_adjoint(const RealArray& g, std::span<const double> h, double gain,
                                          int k) {
  const std::size_t out_cols = g.cols() << k;
  RealArray out(g.rows(), out_cols);
  CplxVec gc(g.cols());
  CplxVec acc(out_cols);
  for (std::size_t r = 0; r < g.rows(); ++r) {
    std::copy(g.row(r).begin(), g.row(r).end(), gc.begin());
    std::fill(acc.begin(), acc.end(), cplx{});
    dsp::filter_subsample_adjoint_acc(gc, h, gain, pow2(k), acc);
    dsp::ifft_inplace(acc);
    for (std::size_t c = 0; c < out_cols; ++c) out(r, c) = acc[c].real();
  }
  return out;
}

inline RealArray keep_rows(const RealArray& x, std::size_t rows) {
  RealArray out(rows, x.cols());
  std::copy(x.data().begin(), x.data().begin() + static_cast<std::ptrdiff_t>(rows * x.cols()),
            out.data().begin());
  return out;
}

inline RealArray embed_rows(const RealArray& x, std::size_t rows) {
  RealArray out(rows, x.cols());
  std::copy(x.data().begin(), x.data().end(), out.data().begin());
  return out;
}

inline RealArray slice_cols(const RealArray& x, std::size_t start, std::size_t count) {
  RealArray out(x.rows(), count);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    std::copy_n(x.row(r).begin() + static_cast<std::ptrdiff_t>(start), count, out.row(r).begin());
  }
  return out;
}

inline RealArray embed_cols(const RealArray& x, std::size_t start, std::size_t cols) {
  RealArray out(x.rows(), cols);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    std::copy(x.row(r).begin(), x.row(r).end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(start));
  }
  return out;
}

inline std::size_t ceil_div_pow2(std::size_t n, int k) { return (n + pow2(k) - 1) >> k; }

}  // namespace detail

inline void check_input(std::span<const double> x, const FilterbankPlan& plan) {
  if (x.size() != plan.params.N_input) {
    throw SizeError("input has " + std::to_string(x.size()) + " samples, plan expects " +
                    std::to_string(plan.params.N_input));
  }
  for (double v : x) {
    if (!std::isfinite(v)) throw NumericError("input signal contains non-finite samples");
  }
}

/// |x * psi1[n1]| decimated by 2^min(j1, log2_T); x must already be padded.
inline Scalogram compute_scalogram(std::span<const double> padded, const FilterbankPlan& plan) {
  if (padded.size() != plan.N_padded) {
    throw SizeError("scalogram input has " + std::to_string(padded.size()) +
                    " samples, plan is padded to " + std::to_string(plan.N_padded));
  }
  const int log2_T = plan.params.log2_T;
  const CplxVec x_hat = dsp::rfft(padded);
  Scalogram u;
  for (const auto& psi : plan.psi1) {
    const int k1 = std::min(psi.spec.j, log2_T);
    auto c = dsp::filter_subsample(x_hat, psi.level(0), 1.0, detail::pow2(k1));
    u.rows.push_back(dsp::modulus(c));
    u.complex_rows.push_back(std::move(c));
    u.j1.push_back(psi.spec.j);
    u.log2_stride.push_back(k1);
  }
  return u;
}

/// S1: every scalogram row averaged by phi_T to stride 2^log2_T. u1_hat
/// holds the spectra of the rows.
inline RealArray average_scalogram(const Scalogram& u1, const std::vector<CplxVec>& u1_hat,
                                   const FilterbankPlan& plan) {
  const int log2_T = plan.params.log2_T;
  RealArray s1(u1.rows.size(), plan.N_padded >> log2_T);
  for (std::size_t n1 = 0; n1 < u1.rows.size(); ++n1) {
    const int k1 = u1.log2_stride[n1];
    const auto row = dsp::filter_subsample(u1_hat[n1], plan.phi_T.level(k1),
                                           static_cast<double>(detail::pow2(k1)),
                                           detail::pow2(log2_T - k1));
    for (std::size_t t = 0; t < s1.cols(); ++t) s1(n1, t) = row[t].real();
  }
  return s1;
}

/// Width-first temporal scattering of a padded signal: S0, S1 at stride
/// 2^log2_T, then one stacked block per psi2 filter with at least one
/// admissible first-order row (j2 > j1). Blocks are at the common stride
/// 2^min(j2, log2_T).
inline TimeScattering time_scattering_widthfirst(std::span<const double> padded,
                                                 const FilterbankPlan& plan,
                                                 ForwardTrace* trace = nullptr) {
  const int log2_T = plan.params.log2_T;
  const CplxVec x_hat = dsp::rfft(padded);
  TimeScattering out;

  const auto s0 = dsp::filter_subsample(x_hat, plan.phi_T.level(0), 1.0, detail::pow2(log2_T));
  out.s0.resize(s0.size());
  for (std::size_t i = 0; i < s0.size(); ++i) out.s0[i] = s0[i].real();

  Scalogram u1 = compute_scalogram(padded, plan);
  std::vector<CplxVec> u1_hat;
  u1_hat.reserve(u1.rows.size());
  for (const auto& row : u1.rows) u1_hat.push_back(dsp::rfft(row));
  out.s1 = average_scalogram(u1, u1_hat, plan);
  const std::size_t n1_count = plan.psi1.size();

  for (std::size_t n2 = 0; n2 < plan.psi2.size(); ++n2) {
    const auto& psi = plan.psi2[n2];
    const int j2 = psi.spec.j;
    const int stride = std::min(j2, log2_T);
    std::vector<CplxVec> stacked;
    for (std::size_t n1 = 0; n1 < n1_count; ++n1) {
      if (!(j2 > u1.j1[n1])) continue;
      const int k1 = u1.log2_stride[n1];
      const int k2 = stride - k1;
      stacked.push_back(dsp::filter_subsample(u1_hat[n1], psi.level(k1),
                                              static_cast<double>(detail::pow2(k1)),
                                              detail::pow2(k2)));
    }
    if (stacked.empty()) continue;
    SecondOrderBlock block;
    block.n2 = static_cast<int>(n2);
    block.j2 = j2;
    block.n1_max = static_cast<int>(stacked.size());
    block.log2_stride = stride;
    block.coef = CplxArray(stacked.size(), plan.N_padded >> stride);
    for (std::size_t r = 0; r < stacked.size(); ++r) {
      std::copy(stacked[r].begin(), stacked[r].end(), block.coef.row(r).begin());
    }
    out.y2.push_back(std::move(block));
  }

  if (trace != nullptr) {
    trace->scalogram = std::move(u1);
    trace->u1_hat = std::move(u1_hat);
  }
  return out;
}

/// The frequential filters applied to a block: when not spinned, phi_F
/// (spin 0) and the positive-spin wavelets; when spinned, every wavelet.
inline std::vector<std::pair<int, const SampledFilter*>> frequential_filters(
    const FilterbankPlan& plan, bool spinned) {
  std::vector<std::pair<int, const SampledFilter*>> out;
  if (!spinned) out.emplace_back(kLowpassIndex, &plan.phi_F);
  for (std::size_t i = 0; i < plan.psi_fr.size(); ++i) {
    if (spinned || plan.psi_fr[i].spec.xi >= 0.0) out.emplace_back(static_cast<int>(i), &plan.psi_fr[i]);
  }
  return out;
}

namespace detail {

/// phi_F averaging of a modulus block at frequential stride 2^sf, completed
/// to stride 2^log2_F and truncated to the first `rows` output bins, written
/// as an explicit matrix: avg(r, i) is the weight of input bin i in output
/// bin r. It is the exact circular kernel of the Fourier-domain filter, so
/// applying it matches filtering then decimating, at a fraction of the cost
/// when only a few rows are kept.
inline RealArray frequency_averaging_matrix(const FilterbankPlan& plan, int sf, std::size_t rows) {
  const std::size_t n = plan.N_fr_padded >> sf;
  const auto h = plan.phi_F.level(sf);
  CplxVec kernel(n);
  for (std::size_t i = 0; i < n; ++i) kernel[i] = h[i] * static_cast<double>(pow2(sf));
  dsp::ifft_inplace(kernel);
  const std::size_t d = pow2(plan.params.log2_F - sf);
  RealArray avg(rows, n);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < n; ++i) avg(r, i) = kernel[(r * d + n - i) % n].real();
  }
  return avg;
}

/// One frequential filter of a block together with its averaging matrix.
struct FrequentialStage {
  int n_fr = 0;
  const SampledFilter* filter = nullptr;
  int log2_stride = 0;  // min(j_fr, log2_F)
  RealArray avg;        // kept rows x (N_fr_padded >> log2_stride)
};

inline std::vector<FrequentialStage> frequential_stages(const FilterbankPlan& plan, bool spinned,
                                                        int n1_max) {
  const std::size_t rows = ceil_div_pow2(static_cast<std::size_t>(n1_max), plan.params.log2_F);
  std::vector<FrequentialStage> out;
  for (const auto& [n_fr, filter] : frequential_filters(plan, spinned)) {
    const int k = std::min(filter->spec.j, plan.params.log2_F);
    out.push_back({n_fr, filter, k, frequency_averaging_matrix(plan, k, rows)});
  }
  return out;
}

/// Frequential filtering of a block one time frame at a time: load() takes
/// the spectrum of column t along the zero-padded log-frequency axis, and
/// filter() returns that column convolved with one frequential filter and
/// decimated. Streaming by column keeps the working set in cache.
class FrequentialColumn {
public:
  explicit FrequentialColumn(const FilterbankPlan& plan)
      : spectrum_(plan.N_fr_padded), work_(plan.N_fr_padded) {}

  void load(const CplxArray& x, std::size_t t) {
    if (x.rows() > spectrum_.size()) {
      throw SizeError("frequency_scattering: n1_max " + std::to_string(x.rows()) +
                      " exceeds padded size " + std::to_string(spectrum_.size()));
    }
    std::fill(spectrum_.begin(), spectrum_.end(), cplx{});
    for (std::size_t i = 0; i < x.rows(); ++i) spectrum_[i] = x(i, t);
    dsp::fft_inplace(spectrum_);
  }

  std::span<cplx> filter(const SampledFilter& f, int log2_stride) {
    const std::size_t k = pow2(log2_stride);
    const std::size_t m = spectrum_.size() / k;
    const auto h = f.level(0);
    const double scale = 1.0 / static_cast<double>(k);
    for (std::size_t j = 0; j < m; ++j) work_[j] = spectrum_[j] * (h[j] * scale);
    for (std::size_t b = 1; b < k; ++b) {
      for (std::size_t j = 0; j < m; ++j) work_[j] += spectrum_[b * m + j] * (h[b * m + j] * scale);
    }
    std::span<cplx> z(work_.data(), m);
    dsp::ifft_inplace(z);
    return z;
  }

private:
  CplxVec spectrum_;
  CplxVec work_;
};

inline RealArray time_average(const RealArray& freq_avg, int log2_stride, const FilterbankPlan& plan) {
  const int log2_T = plan.params.log2_T;
  const RealArray avg = filter_rows_real(freq_avg, plan.phi_T.level(log2_stride),
                                         static_cast<double>(pow2(log2_stride)), log2_T - log2_stride);
  const auto [start, count] = dsp::unpad_range(plan.time_pad, log2_T);
  return slice_cols(avg, start, count);
}

inline RealArray time_average_adjoint(const RealArray& grad, int log2_stride, const FilterbankPlan& plan) {
  const int log2_T = plan.params.log2_T;
  const auto [start, count] = dsp::unpad_range(plan.time_pad, log2_T);
  if (grad.cols() != count) throw SizeError("time_average_adjoint: frame count mismatch");
  return filter_rows_real_adjoint(embed_cols(grad, start, plan.N_padded >> log2_T),
                                  plan.phi_T.level(log2_stride), static_cast<double>(pow2(log2_stride)),
                                  log2_T - log2_stride);
}

inline std::size_t unpadded_frames(const FilterbankPlan& plan) {
  return dsp::unpad_range(plan.time_pad, plan.params.log2_T).second;
}

}  // namespace detail

/// Convolve a block along log-frequency with every applicable frequential
/// filter, decimating by 2^min(j_fr, log2_F). Results are in
/// (frequency x time) layout, one per filter in path order.
inline std::vector<FrequencyBlock> frequency_scattering(const CplxArray& x, const FilterbankPlan& plan,
                                                        bool spinned) {
  std::vector<FrequencyBlock> out;
  for (const auto& [n_fr, filter] : frequential_filters(plan, spinned)) {
    FrequencyBlock b;
    b.n_fr = n_fr;
    b.spin = filter->spec.spin;
    b.j_fr = filter->spec.j;
    b.log2_stride = std::min(filter->spec.j, plan.params.log2_F);
    b.coef = CplxArray(plan.N_fr_padded >> b.log2_stride, x.cols());
    out.push_back(std::move(b));
  }
  detail::FrequentialColumn column(plan);
  for (std::size_t t = 0; t < x.cols(); ++t) {
    column.load(x, t);
    for (auto& b : out) {
      const auto& filter = b.n_fr == kLowpassIndex ? plan.phi_F
                                                   : plan.psi_fr[static_cast<std::size_t>(b.n_fr)];
      const auto z = column.filter(filter, b.log2_stride);
      for (std::size_t i = 0; i < z.size(); ++i) b.coef(i, t) = z[i];
    }
  }
  return out;
}

/// A real block awaiting averaging, with its stride bookkeeping.
struct ModulusBlock {
  PathKey key;
  int n1_max = 0;
  int log2_stride_time = 0;
  int log2_stride_freq = 0;
  RealArray values;  // (N_fr_padded >> log2_stride_freq) x (N_padded >> log2_stride_time)
};

/// Average along log-frequency by phi_F (completing the stride to 2^log2_F)
/// and along time by phi_T (completing the stride to 2^log2_T), then unpad
/// both axes.
inline CoefficientEntry average_and_format(const ModulusBlock& block, const FilterbankPlan& plan) {
  const int st = block.log2_stride_time;
  const int sf = block.log2_stride_freq;
  if (st > plan.params.log2_T || sf > plan.params.log2_F ||
      block.values.rows() != (plan.N_fr_padded >> sf) ||
      block.values.cols() != (plan.N_padded >> st)) {
    throw SizeError("average_and_format: stride bookkeeping mismatch for path " +
                    block.key.to_string());
  }
  const std::size_t rows = detail::ceil_div_pow2(static_cast<std::size_t>(block.n1_max),
                                                 plan.params.log2_F);
  const RealArray avg = detail::frequency_averaging_matrix(plan, sf, rows);
  RealArray freq_avg(rows, block.values.cols());
  for (std::size_t r = 0; r < rows; ++r) {
    auto out = freq_avg.row(r);
    for (std::size_t i = 0; i < avg.cols(); ++i) {
      const double w = avg(r, i);
      const auto in = block.values.row(i);
      for (std::size_t t = 0; t < out.size(); ++t) out[t] += w * in[t];
    }
  }

  CoefficientEntry e;
  e.key = block.key;
  e.values = detail::time_average(freq_avg, st, plan);
  e.n1_max = block.n1_max;
  e.log2_stride_time = plan.params.log2_T;
  e.log2_stride_freq = plan.params.log2_F;
  e.u_log2_stride_time = st;
  e.u_log2_stride_freq = sf;
  return e;
}

/// Adjoint of average_and_format: maps a gradient on the coefficients back
/// to the resolution of the modulus block.
inline RealArray average_and_format_adjoint(const CoefficientEntry& entry, const RealArray& grad,
                                            const FilterbankPlan& plan) {
  const int st = entry.u_log2_stride_time;
  const int sf = entry.u_log2_stride_freq;
  if (grad.cols() != detail::unpadded_frames(plan) || grad.rows() != entry.values.rows()) {
    throw SizeError("average_and_format_adjoint: shape mismatch for path " + entry.key.to_string());
  }
  const RealArray g_freq_avg = detail::time_average_adjoint(grad, st, plan);
  const RealArray avg = detail::frequency_averaging_matrix(plan, sf, grad.rows());
  RealArray out(avg.cols(), g_freq_avg.cols());
  for (std::size_t r = 0; r < avg.rows(); ++r) {
    const auto in = g_freq_avg.row(r);
    for (std::size_t i = 0; i < avg.cols(); ++i) {
      const double w = avg(r, i);
      auto o = out.row(i);
      for (std::size_t t = 0; t < o.size(); ++t) o[t] += w * in[t];
    }
  }
  return out;
}

/// Which paths a block feeds: order 1 (S1, not spinned) or order 2 (a
/// width-first block, both spins).
struct BlockSpec {
  int order = 1;
  std::optional<int> n2;
  int j2 = -1;
  int n1_max = 0;
  int log2_stride_time = 0;
  bool spinned = false;
};

inline BlockSpec first_order_spec(const TimeScattering& ts, const FilterbankPlan& plan) {
  return {1, std::nullopt, -1, static_cast<int>(ts.s1.rows()), plan.params.log2_T, false};
}

inline BlockSpec second_order_spec(const SecondOrderBlock& b) {
  return {2, b.n2, b.j2, b.n1_max, b.log2_stride, true};
}

/// Frequential scattering, modulus and averaging of one block, fused so no
/// full-resolution frequential output is ever materialized. Returns one
/// entry per path in path order; `rms` receives the RMS modulus of each
/// path's frequential output, which the backward pass needs.
inline std::vector<CoefficientEntry> block_paths(const CplxArray& x, const BlockSpec& spec,
                                                 const FilterbankPlan& plan,
                                                 std::vector<double>* rms = nullptr) {
  const auto stages = detail::frequential_stages(plan, spec.spinned, spec.n1_max);
  const std::size_t cols = x.cols();
  std::vector<RealArray> freq_avg;
  for (const auto& s : stages) freq_avg.emplace_back(s.avg.rows(), cols);
  std::vector<double> energy(stages.size(), 0.0);
  RealVec m(plan.N_fr_padded);

  detail::FrequentialColumn column(plan);
  for (std::size_t t = 0; t < cols; ++t) {
    column.load(x, t);
    for (std::size_t s = 0; s < stages.size(); ++s) {
      const auto& st = stages[s];
      const auto z = column.filter(*st.filter, st.log2_stride);
      double e = 0.0;
      for (std::size_t i = 0; i < z.size(); ++i) {
        const double n = std::norm(z[i]);
        e += n;
        m[i] = std::sqrt(n);
      }
      energy[s] += e;
      for (std::size_t r = 0; r < st.avg.rows(); ++r) {
        const auto w = st.avg.row(r);
        double acc = 0.0;
        for (std::size_t i = 0; i < z.size(); ++i) acc += w[i] * m[i];
        freq_avg[s](r, t) = acc;
      }
    }
  }

  std::vector<CoefficientEntry> out;
  if (rms != nullptr) rms->clear();
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const auto& st = stages[s];
    const auto& f = *st.filter;
    CoefficientEntry e;
    e.key.order = spec.order;
    e.key.n2 = spec.n2;
    e.key.n_fr = st.n_fr;
    e.key.spin = f.spec.spin;
    e.key.j2 = spec.j2;
    e.key.j_fr = f.spec.j;
    e.values = detail::time_average(freq_avg[s], spec.log2_stride_time, plan);
    e.n1_max = spec.n1_max;
    e.log2_stride_time = plan.params.log2_T;
    e.log2_stride_freq = plan.params.log2_F;
    e.u_log2_stride_time = spec.log2_stride_time;
    e.u_log2_stride_freq = st.log2_stride;
    out.push_back(std::move(e));
    if (rms != nullptr) {
      const double n = static_cast<double>((plan.N_fr_padded >> st.log2_stride) * cols);
      rms->push_back(std::sqrt(energy[s] / n));
    }
  }
  return out;
}

namespace detail {

inline CplxArray to_complex(const RealArray& x) {
  CplxArray out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = x.data()[i];
  return out;
}

inline CoefficientEntry zeroth_order_entry(const TimeScattering& ts, const FilterbankPlan& plan) {
  const auto [start, count] = dsp::unpad_range(plan.time_pad, plan.params.log2_T);
  CoefficientEntry s0;
  s0.key = PathKey{0, std::nullopt, std::nullopt, 0, -1, -1, -1};
  s0.values = RealArray(1, count);
  std::copy_n(ts.s0.begin() + static_cast<std::ptrdiff_t>(start), count, s0.values.row(0).begin());
  s0.n1_max = 1;
  s0.log2_stride_time = s0.u_log2_stride_time = plan.params.log2_T;
  return s0;
}

}  // namespace detail

/// Joint time-frequency scattering of x (length plan.params.N_input).
/// When trace is non-null the intermediates needed by the backward pass
/// are stored in it.
inline CoefficientSet jtfs_forward(std::span<const double> x, const FilterbankPlan& plan,
                                   ForwardTrace* trace = nullptr) {
  check_input(x, plan);
  RealVec padded = dsp::pad_time(x, plan.N_padded);
  TimeScattering ts = time_scattering_widthfirst(padded, plan, trace);

  CoefficientSet out;
  out.plan_fingerprint = plan.fingerprint();
  out.entries.push_back(detail::zeroth_order_entry(ts, plan));
  auto append = [&](std::vector<CoefficientEntry>&& es) {
    for (auto& e : es) out.entries.push_back(std::move(e));
  };
  append(block_paths(detail::to_complex(ts.s1), first_order_spec(ts, plan), plan));
  for (const auto& block : ts.y2) append(block_paths(block.coef, second_order_spec(block), plan));

  if (trace != nullptr) {
    trace->plan = &plan;
    trace->padded = std::move(padded);
    trace->time = std::move(ts);
  }
  return out;
}

/// Number of paths a plan produces, enumerated without running the transform.
inline std::size_t count_paths(const FilterbankPlan& plan) {
  std::size_t positive = 0;
  for (const auto& f : plan.psi_fr) positive += f.spec.xi >= 0.0 ? 1 : 0;
  std::size_t n = 1 + 1 + positive;
  for (const auto& psi2 : plan.psi2) {
    const bool admissible = std::any_of(plan.psi1.begin(), plan.psi1.end(),
                                        [&](const SampledFilter& f) { return psi2.spec.j > f.spec.j; });
    if (admissible) n += plan.psi_fr.size();
  }
  return n;
}

}  // namespace jtfs
