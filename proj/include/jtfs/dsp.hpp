// SPDX-License-Identifier: Apache-2.0
//
// Fourier-domain plumbing shared by the forward scattering pipeline and its
// adjoint: power-of-two FFTs, pointwise filtering, fold-subsampling,
// padding, modulus and axis transposition.
//
// Spectra are always full length (N bins, not N/2+1), so negative-frequency
// filters multiply like any other.
#pragma once

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstddef>
#include <map>
#include <mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "jtfs/array2d.hpp"
#include "jtfs/error.hpp"

namespace jtfs::dsp {

constexpr bool is_pow2(std::size_t n) noexcept { return n != 0 && std::has_single_bit(n); }

constexpr std::size_t next_pow2(std::size_t n) noexcept {
  return n <= 1 ? 1 : std::bit_ceil(n);
}

constexpr int log2_exact(std::size_t n) noexcept { return std::countr_zero(n); }

namespace detail {

// FFTW planning is not thread safe; execution on distinct buffers is.
// Plans are created once per (size, direction, SIMD alignment class) under
// a lock and then cached per thread. A plan may only be executed on arrays
// of the alignment class it was planned for.
inline fftw_plan plan_for(std::size_t n, int sign, cplx* data) {
  const auto align = static_cast<std::size_t>(fftw_alignment_of(reinterpret_cast<double*>(data)));
  const std::size_t key = (n << 8) | (align << 1) | (sign == FFTW_FORWARD ? 0U : 1U);
  thread_local std::unordered_map<std::size_t, fftw_plan> local;
  if (auto it = local.find(key); it != local.end()) return it->second;

  static std::mutex mutex;
  static std::map<std::size_t, fftw_plan> shared;
  std::lock_guard lock(mutex);
  auto it = shared.find(key);
  if (it == shared.end()) {
    auto* raw = fftw_alloc_complex(n + 4);
    auto* buf = reinterpret_cast<fftw_complex*>(reinterpret_cast<char*>(raw) + align);
    fftw_plan plan = fftw_plan_dft_1d(static_cast<int>(n), buf, buf, sign, FFTW_ESTIMATE);
    fftw_free(raw);
    it = shared.emplace(key, plan).first;
  }
  local.emplace(key, it->second);
  return it->second;
}

inline void require_pow2(std::size_t n, const char* what) {
  if (!is_pow2(n)) {
    throw SizeError(std::string(what) + ": length " + std::to_string(n) +
                    " is not a power of two");
  }
}

}  // namespace detail

/// Unnormalized forward DFT, in place.
inline void fft_inplace(std::span<cplx> x) {
  detail::require_pow2(x.size(), "fft");
  if (x.size() == 1) return;
  auto* buf = reinterpret_cast<fftw_complex*>(x.data());
  fftw_execute_dft(detail::plan_for(x.size(), FFTW_FORWARD, x.data()), buf, buf);
}

/// Inverse DFT with 1/N normalization, in place.
inline void ifft_inplace(std::span<cplx> x) {
  detail::require_pow2(x.size(), "ifft");
  if (x.size() == 1) return;
  auto* buf = reinterpret_cast<fftw_complex*>(x.data());
  fftw_execute_dft(detail::plan_for(x.size(), FFTW_BACKWARD, x.data()), buf, buf);
  const double scale = 1.0 / static_cast<double>(x.size());
  for (auto& v : x) v *= scale;
}

inline CplxVec fft(std::span<const cplx> x) {
  CplxVec out(x.begin(), x.end());
  fft_inplace(out);
  return out;
}

/// Full-length DFT of a real signal (Hermitian symmetric).
inline CplxVec rfft(std::span<const double> x) {
  CplxVec out(x.begin(), x.end());
  fft_inplace(out);
  return out;
}

inline CplxVec ifft(std::span<const cplx> x) {
  CplxVec out(x.begin(), x.end());
  ifft_inplace(out);
  return out;
}

/// Elementwise product of a spectrum with a filter's frequency response.
inline CplxVec cdgmm(std::span<const cplx> x, std::span<const cplx> h) {
  if (x.size() != h.size()) {
    throw SizeError("cdgmm: length mismatch " + std::to_string(x.size()) + " vs " +
                    std::to_string(h.size()));
  }
  CplxVec out(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = x[k] * h[k];
  return out;
}

/// Real-response overload; Morlet and Gaussian responses are real.
inline CplxVec cdgmm(std::span<const cplx> x, std::span<const double> h) {
  if (x.size() != h.size()) {
    throw SizeError("cdgmm: length mismatch " + std::to_string(x.size()) + " vs " +
                    std::to_string(h.size()));
  }
  CplxVec out(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = x[k] * h[k];
  return out;
}

/// Fold a length-N spectrum into N/k bins: out[j] = (1/k) sum_b X[j + b N/k].
/// ifft of the result is the stride-k decimation of ifft(X).
template <typename T>
std::vector<T> subsample_fourier(std::span<const T> x, std::size_t k) {
  if (k == 0 || x.size() % k != 0) {
    throw SizeError("subsample_fourier: factor " + std::to_string(k) +
                    " does not divide length " + std::to_string(x.size()));
  }
  const std::size_t m = x.size() / k;
  std::vector<T> out(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(m));
  for (std::size_t b = 1; b < k; ++b) {
    for (std::size_t j = 0; j < m; ++j) out[j] += x[b * m + j];
  }
  const double inv = 1.0 / static_cast<double>(k);
  for (auto& v : out) v *= inv;
  return out;
}

template <typename T>
std::vector<T> subsample_fourier(const std::vector<T>& x, std::size_t k) {
  return subsample_fourier(std::span<const T>(x), k);
}

/// Tile a spectrum k times: the spectrum of the zero-inserted (upsampled)
/// signal. Zero insertion is the adjoint of decimation.
inline CplxVec upsample_fourier(std::span<const cplx> x, std::size_t k) {
  CplxVec out(x.size() * k);
  for (std::size_t b = 0; b < k; ++b) std::copy(x.begin(), x.end(), out.begin() + b * x.size());
  return out;
}

/// Stride-k decimation of the circular convolution of x with the filter
/// whose response is gain*h. Both the convolution and the decimation are
/// carried out in the Fourier domain; x_hat is the spectrum of x.
inline CplxVec filter_subsample(std::span<const cplx> x_hat, std::span<const double> h, double gain,
                                std::size_t k) {
  if (x_hat.size() != h.size()) throw SizeError("filter_subsample: length mismatch");
  const std::size_t m = x_hat.size() / k;
  CplxVec out(m, cplx{});
  const double scale = gain / static_cast<double>(k);
  for (std::size_t b = 0; b < k; ++b) {
    const std::size_t off = b * m;
    for (std::size_t j = 0; j < m; ++j) out[j] += x_hat[off + j] * h[off + j];
  }
  for (auto& v : out) v *= scale;
  ifft_inplace(out);
  return out;
}

/// Adjoint of filter_subsample, accumulated in the Fourier domain:
/// acc_hat += tile_k(fft(g)) * gain * conj(h). Summing several
/// contributions before a single inverse transform avoids redundant work;
/// the time-domain adjoint is ifft(acc_hat).
inline void filter_subsample_adjoint_acc(std::span<const cplx> g, std::span<const double> h,
                                         double gain, std::size_t k, std::span<cplx> acc_hat) {
  const std::size_t m = g.size();
  if (m * k != h.size() || acc_hat.size() != h.size()) {
    throw SizeError("filter_subsample_adjoint: length mismatch");
  }
  CplxVec g_hat(g.begin(), g.end());
  fft_inplace(g_hat);
  for (std::size_t b = 0; b < k; ++b) {
    const std::size_t off = b * m;
    for (std::size_t j = 0; j < m; ++j) acc_hat[off + j] += g_hat[j] * (gain * h[off + j]);
  }
}

inline CplxVec filter_subsample_adjoint(std::span<const cplx> g, std::span<const double> h,
                                        double gain, std::size_t k) {
  CplxVec acc(h.size(), cplx{});
  filter_subsample_adjoint_acc(g, h, gain, k, acc);
  ifft_inplace(acc);
  return acc;
}

/// Bookkeeping of a time-domain padding: `left` samples before the original
/// support of `length` samples, `right` after.
struct PadSpec {
  std::size_t left = 0;
  std::size_t length = 0;
  std::size_t right = 0;
  std::size_t padded() const noexcept { return left + length + right; }
};

inline PadSpec pad_spec(std::size_t length, std::size_t target) {
  if (length == 0) throw SizeError("pad_time: empty signal");
  if (target < length) {
    throw SizeError("pad_time: target " + std::to_string(target) + " shorter than signal " +
                    std::to_string(length));
  }
  const std::size_t total = target - length;
  return {total / 2, length, total - total / 2};
}

// Half-sample symmetric reflection: ... x1 x0 | x0 x1 ... x_{n-1} | x_{n-1} x_{n-2} ...
// The extension has period 2n, so pads longer than the signal keep reflecting.
inline std::size_t reflect_index(std::ptrdiff_t t, std::size_t n) noexcept {
  const auto period = static_cast<std::ptrdiff_t>(2 * n);
  std::ptrdiff_t r = t % period;
  if (r < 0) r += period;
  return r < static_cast<std::ptrdiff_t>(n) ? static_cast<std::size_t>(r)
                                            : static_cast<std::size_t>(period - 1 - r);
}

/// Reflection-pad x to `target` samples, split evenly left and right
/// (the extra sample, if any, goes right).
inline RealVec pad_time(std::span<const double> x, std::size_t target) {
  const PadSpec spec = pad_spec(x.size(), target);
  RealVec out(target);
  const auto left = static_cast<std::ptrdiff_t>(spec.left);
  for (std::size_t i = 0; i < target; ++i) {
    out[i] = x[reflect_index(static_cast<std::ptrdiff_t>(i) - left, x.size())];
  }
  return out;
}

/// Adjoint of pad_time: every padded sample is folded back onto its source.
inline RealVec pad_time_adjoint(std::span<const double> g, const PadSpec& spec) {
  if (g.size() != spec.padded()) throw SizeError("pad_time_adjoint: length mismatch");
  RealVec out(spec.length, 0.0);
  const auto left = static_cast<std::ptrdiff_t>(spec.left);
  for (std::size_t i = 0; i < g.size(); ++i) {
    out[reflect_index(static_cast<std::ptrdiff_t>(i) - left, spec.length)] += g[i];
  }
  return out;
}

/// First frame and frame count of the original support once the padded
/// signal has been subsampled by 2^log2_stride.
inline std::pair<std::size_t, std::size_t> unpad_range(const PadSpec& spec, int log2_stride) {
  const std::size_t stride = std::size_t{1} << log2_stride;
  return {spec.left >> log2_stride, (spec.length + stride - 1) / stride};
}

template <typename T>
std::vector<T> unpad_time(std::span<const T> x, const PadSpec& spec, int log2_stride = 0) {
  const auto [start, count] = unpad_range(spec, log2_stride);
  if (start + count > x.size()) throw SizeError("unpad_time: support exceeds signal");
  return std::vector<T>(x.begin() + static_cast<std::ptrdiff_t>(start),
                        x.begin() + static_cast<std::ptrdiff_t>(start + count));
}

/// Append pad_right zero rows (the log-frequency axis).
template <typename T>
Array2D<T> pad_frequency(const Array2D<T>& x, std::ptrdiff_t pad_right) {
  if (pad_right < 0) {
    throw SizeError("pad_frequency: negative padding " + std::to_string(pad_right));
  }
  Array2D<T> out(x.rows() + static_cast<std::size_t>(pad_right), x.cols());
  std::copy(x.data().begin(), x.data().end(), out.data().begin());
  return out;
}

// std::abs guards against overflow with hypot, which is several times slower
// than the plain square root and buys nothing at audio magnitudes.
inline double magnitude(cplx z) noexcept { return std::sqrt(std::norm(z)); }

inline RealVec modulus(std::span<const cplx> x) {
  RealVec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = magnitude(x[i]);
  return out;
}

inline RealArray modulus(const CplxArray& x) {
  RealArray out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = magnitude(x.data()[i]);
  return out;
}

/// Transpose; brings the log-frequency axis to the contiguous position and back.
template <typename T>
Array2D<T> swap_time_frequency(const Array2D<T>& x) {
  Array2D<T> out(x.cols(), x.rows());
  constexpr std::size_t tile = 32;
  for (std::size_t r0 = 0; r0 < x.rows(); r0 += tile) {
    for (std::size_t c0 = 0; c0 < x.cols(); c0 += tile) {
      const std::size_t r1 = std::min(r0 + tile, x.rows());
      const std::size_t c1 = std::min(c0 + tile, x.cols());
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = c0; c < c1; ++c) out(c, r) = x(r, c);
      }
    }
  }
  return out;
}

}  // namespace jtfs::dsp
