// SPDX-License-Identifier: Apache-2.0
//
// Reference computations for the tests. They share no code with the library
// beyond the container types: O(N^2) DFTs, direct circular convolution in
// the time domain, and the closed-form Morlet wavelet sampled in time.
#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "jtfs/array2d.hpp"

namespace oracle {

using jtfs::cplx;
using jtfs::CplxVec;
using jtfs::RealVec;

inline CplxVec dft(const CplxVec& x, int sign = -1) {
  const std::size_t n = x.size();
  CplxVec twiddle(n);
  for (std::size_t m = 0; m < n; ++m) {
    const double angle = sign * 2.0 * std::numbers::pi * static_cast<double>(m) / static_cast<double>(n);
    twiddle[m] = cplx(std::cos(angle), std::sin(angle));
  }
  CplxVec out(n);
  for (std::size_t k = 0; k < n; ++k) {
    cplx acc{};
    for (std::size_t t = 0; t < n; ++t) acc += x[t] * twiddle[(k * t) % n];
    out[k] = acc;
  }
  return out;
}

inline CplxVec idft(const CplxVec& x) {
  CplxVec out = dft(x, +1);
  for (auto& v : out) v /= static_cast<double>(x.size());
  return out;
}

inline CplxVec to_complex(const RealVec& x) { return CplxVec(x.begin(), x.end()); }

/// Time-domain impulse response of a real frequency response.
inline CplxVec impulse_response(const RealVec& h) { return idft(to_complex(h)); }

/// y[t] = sum_s x[s] h[(t - s) mod n].
inline CplxVec circular_convolve(const CplxVec& x, const CplxVec& h) {
  const std::size_t n = x.size();
  CplxVec y(n);
  for (std::size_t t = 0; t < n; ++t) {
    cplx acc{};
    for (std::size_t s = 0; s < n; ++s) acc += x[s] * h[(t + n - s) % n];
    y[t] = acc;
  }
  return y;
}

template <typename T>
std::vector<T> decimate(const std::vector<T>& x, std::size_t k) {
  std::vector<T> out;
  for (std::size_t i = 0; i < x.size(); i += k) out.push_back(x[i]);
  return out;
}

/// Morlet frequency response on an n-point grid, built from its closed
/// form in time. A Gaussian bump exp(-(w - xi)^2 / (2 sigma^2)) in frequency
/// (cycles per sample) is sigma sqrt(2 pi) exp(-2 pi^2 sigma^2 t^2)
/// exp(2 pi i xi t) in time. Its samples, periodized over n, have as DFT
/// the bump periodized in frequency. The DC correction and peak
/// normalization follow the same convention as the library: kappa cancels
/// the DC bin exactly and the peak magnitude is 2.
inline RealVec morlet_from_time(std::size_t n, double xi, double sigma) {
  auto sampled = [&](double center) {
    CplxVec g(n);
    const double amp = sigma * std::sqrt(2.0 * std::numbers::pi);
    const auto N = static_cast<double>(n);
    for (std::size_t t = 0; t < n; ++t) {
      cplx acc{};
      for (int p = -8; p <= 8; ++p) {
        const double tt = static_cast<double>(t) + p * N;
        const double env = amp * std::exp(-2.0 * std::numbers::pi * std::numbers::pi * sigma * sigma * tt * tt);
        const double ph = 2.0 * std::numbers::pi * center * tt;
        acc += env * cplx(std::cos(ph), std::sin(ph));
      }
      g[t] = acc;
    }
    return dft(g);
  };
  const CplxVec band = sampled(xi);
  const CplxVec low = sampled(0.0);
  const double kappa = band[0].real() / low[0].real();
  RealVec h(n);
  double peak = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    h[k] = band[k].real() - kappa * low[k].real();
    peak = std::max(peak, std::abs(h[k]));
  }
  for (auto& v : h) v *= 2.0 / peak;
  return h;
}

inline RealVec random_real(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  RealVec v(n);
  for (auto& s : v) s = normal(rng);
  return v;
}

inline CplxVec random_complex(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  CplxVec v(n);
  for (auto& s : v) s = cplx(normal(rng), normal(rng));
  return v;
}

inline double max_abs_diff(const CplxVec& a, const CplxVec& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs(const CplxVec& a) {
  double m = 0.0;
  for (const auto& v : a) m = std::max(m, std::abs(v));
  return m;
}

/// Real inner product of complex vectors viewed as real vectors of twice the length.
inline double inner(const CplxVec& a, const CplxVec& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i].real() * b[i].real() + a[i].imag() * b[i].imag();
  return acc;
}

inline double inner(const RealVec& a, const RealVec& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace oracle
