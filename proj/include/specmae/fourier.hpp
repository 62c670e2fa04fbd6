// Copyright 2026 The specmae Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Real-signal DFT analysis and synthesis over [N x C] time-major signals.
//
// Conventions:
//   X_m = sum_{n=0}^{N-1} x_n exp(-2 pi j m n / N),  m = 0 .. floor(N/2)
//   x_n = (1/N) sum_{m=0}^{N-1} X_m exp(+2 pi j m n / N)
// Only the floor(N/2)+1 non-redundant bins are stored; the remaining bins
// follow from conjugate symmetry X_{N-m} = conj(X_m).

#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <memory>
#include <span>
#include <type_traits>
#include <vector>

#include "specmae/common.hpp"

namespace specmae {

inline std::size_t half_bins(std::size_t n_time) { return n_time / 2 + 1; }

// Bins are stored bin-major: bins[m * n_channels + c].
template <typename T>
struct Spectrum {
  std::size_t n_time = 0;
  std::size_t n_channels = 0;
  std::vector<std::complex<T>> bins;

  std::size_t num_bins() const { return half_bins(n_time); }
  std::complex<T>& at(std::size_t m, std::size_t c) {
    return bins[m * n_channels + c];
  }
  const std::complex<T>& at(std::size_t m, std::size_t c) const {
    return bins[m * n_channels + c];
  }
};

template <typename T>
struct PolarSpectrum {
  std::size_t n_time = 0;
  std::size_t n_channels = 0;
  std::vector<T> magnitude;  // [bins x C], >= 0
  std::vector<T> phase;      // [bins x C], in (-pi, pi] when produced by to_polar

  std::size_t num_bins() const { return half_bins(n_time); }
};

// Twiddle tables for one transform length. A radix-2 complex FFT is used
// when N is a power of two; other lengths fall back to direct summation with
// the cos/sin table indexed by (m * n) mod N. Twiddles and sums are kept in
// at least double precision so float transforms round only on input/output.
template <typename T>
class DftPlan {
  using Acc = std::conditional_t<(sizeof(T) < sizeof(double)), double, T>;

 public:
  explicit DftPlan(std::size_t n) : n_(n), cos_(n), sin_(n) {
    if (n == 0) throw ConfigError("DftPlan: length must be >= 1");
    for (std::size_t k = 0; k < n; ++k) {
      const double a = 2.0 * M_PI * double(k) / double(n);
      cos_[k] = static_cast<Acc>(std::cos(a));
      sin_[k] = static_cast<Acc>(std::sin(a));
    }
    pow2_ = (n & (n - 1)) == 0 && n >= 2;
    if (pow2_) {
      rev_.resize(n);
      std::size_t bits = 0;
      while ((std::size_t{1} << bits) < n) ++bits;
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t r = 0;
        for (std::size_t b = 0; b < bits; ++b)
          if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (bits - 1 - b);
        rev_[i] = r;
      }
    }
  }

  std::size_t size() const { return n_; }
  bool uses_fft() const { return pow2_; }

  // Forward half spectrum of one real sequence; `out` has floor(N/2)+1 bins.
  void forward(std::span<const T> x, std::span<std::complex<T>> out,
               bool allow_fft = true) const {
    const std::size_t nb = half_bins(n_);
    if (pow2_ && allow_fft) {
      std::vector<std::complex<Acc>> buf(n_);
      for (std::size_t i = 0; i < n_; ++i) buf[rev_[i]] = {Acc(x[i]), Acc(0)};
      fft_in_place(buf, /*inverse=*/false);
      for (std::size_t m = 0; m < nb; ++m)
        out[m] = {T(buf[m].real()), T(buf[m].imag())};
    } else {
      for (std::size_t m = 0; m < nb; ++m) {
        Acc re = 0, im = 0;
        std::size_t idx = 0;
        for (std::size_t t = 0; t < n_; ++t) {
          re += Acc(x[t]) * cos_[idx];
          im -= Acc(x[t]) * sin_[idx];
          idx += m;
          if (idx >= n_) idx -= n_;
        }
        out[m] = {T(re), T(im)};
      }
    }
    out[0].imag(T(0));
    if (n_ % 2 == 0) out[n_ / 2].imag(T(0));
  }

  // Inverse of a conjugate-symmetric spectrum given by its half. Imaginary
  // parts of the DC and (even N) Nyquist bins are ignored.
  void inverse(std::span<const std::complex<T>> half, std::span<T> x,
               bool allow_fft = true) const {
    const std::size_t nb = half_bins(n_);
    const Acc inv_n = Acc(1) / Acc(n_);
    if (pow2_ && allow_fft) {
      std::vector<std::complex<Acc>> full(n_);
      full[0] = {Acc(half[0].real()), Acc(0)};
      for (std::size_t m = 1; m < nb; ++m) {
        full[m] = {Acc(half[m].real()), Acc(half[m].imag())};
        full[n_ - m] = std::conj(full[m]);
      }
      full[n_ / 2] = {Acc(half[n_ / 2].real()), Acc(0)};
      std::vector<std::complex<Acc>> buf(n_);
      for (std::size_t i = 0; i < n_; ++i) buf[rev_[i]] = full[i];
      fft_in_place(buf, /*inverse=*/true);
      for (std::size_t t = 0; t < n_; ++t) x[t] = T(buf[t].real() * inv_n);
    } else {
      for (std::size_t t = 0; t < n_; ++t) {
        Acc acc = half[0].real();
        std::size_t idx = t;
        for (std::size_t m = 1; m < nb; ++m) {
          const bool nyquist = (n_ % 2 == 0) && m == n_ / 2;
          const Acc w = nyquist ? Acc(1) : Acc(2);
          const Acc re = half[m].real();
          const Acc im = nyquist ? Acc(0) : Acc(half[m].imag());
          acc += w * (re * cos_[idx] - im * sin_[idx]);
          idx += t;
          if (idx >= n_) idx -= n_;
        }
        x[t] = T(acc * inv_n);
      }
    }
  }

 private:
  // Iterative radix-2; input must already be in bit-reversed order.
  void fft_in_place(std::vector<std::complex<Acc>>& a, bool inverse) const {
    for (std::size_t len = 2; len <= n_; len <<= 1) {
      const std::size_t step = n_ / len;
      const std::size_t half = len / 2;
      for (std::size_t i = 0; i < n_; i += len) {
        for (std::size_t k = 0; k < half; ++k) {
          const std::size_t ti = k * step;
          const std::complex<Acc> w(cos_[ti], inverse ? sin_[ti] : -sin_[ti]);
          const std::complex<Acc> u = a[i + k];
          const std::complex<Acc> v = a[i + k + half] * w;
          a[i + k] = u + v;
          a[i + k + half] = u - v;
        }
      }
    }
  }

  std::size_t n_;
  std::vector<Acc> cos_, sin_;
  std::vector<std::size_t> rev_;
  bool pow2_ = false;
};

template <typename T>
Spectrum<T> rdft(const DftPlan<T>& plan, std::span<const T> x,
                 std::size_t n_channels) {
  const std::size_t n = plan.size();
  Spectrum<T> s{n, n_channels,
                std::vector<std::complex<T>>(half_bins(n) * n_channels)};
  std::vector<T> col(n);
  std::vector<std::complex<T>> out(half_bins(n));
  for (std::size_t c = 0; c < n_channels; ++c) {
    for (std::size_t t = 0; t < n; ++t) col[t] = x[t * n_channels + c];
    plan.forward(col, out);
    for (std::size_t m = 0; m < out.size(); ++m) s.at(m, c) = out[m];
  }
  return s;
}

template <typename T>
Spectrum<T> rdft(std::span<const T> x, std::size_t n_time,
                 std::size_t n_channels) {
  return rdft(DftPlan<T>(n_time), x, n_channels);
}

template <typename T>
std::vector<T> idft(const DftPlan<T>& plan, const Spectrum<T>& s) {
  const std::size_t n = plan.size();
  if (s.n_time != n) throw ConfigError("idft: plan/spectrum length mismatch");
  std::vector<T> x(n * s.n_channels);
  std::vector<std::complex<T>> half(s.num_bins());
  std::vector<T> col(n);
  for (std::size_t c = 0; c < s.n_channels; ++c) {
    for (std::size_t m = 0; m < half.size(); ++m) half[m] = s.at(m, c);
    plan.inverse(half, col);
    for (std::size_t t = 0; t < n; ++t) x[t * s.n_channels + c] = col[t];
  }
  return x;
}

template <typename T>
std::vector<T> idft(const Spectrum<T>& s) {
  return idft(DftPlan<T>(s.n_time), s);
}

// All N bins [N x C] recovered from the stored half by X_{N-m} = conj(X_m).
template <typename T>
std::vector<std::complex<T>> full_spectrum(const Spectrum<T>& s) {
  const std::size_t n = s.n_time, C = s.n_channels, half = s.num_bins();
  std::vector<std::complex<T>> out(n * C);
  for (std::size_t m = 0; m < n; ++m)
    for (std::size_t c = 0; c < C; ++c)
      out[m * C + c] = m < half ? s.at(m, c) : std::conj(s.at(n - m, c));
  return out;
}

template <typename T>
PolarSpectrum<T> to_polar(const Spectrum<T>& s) {
  PolarSpectrum<T> p{s.n_time, s.n_channels, std::vector<T>(s.bins.size()),
                     std::vector<T>(s.bins.size())};
  for (std::size_t i = 0; i < s.bins.size(); ++i) {
    const T re = s.bins[i].real();
    const T im = s.bins[i].imag();
    p.magnitude[i] = std::hypot(re, im);
    p.phase[i] = (re == T(0) && im == T(0)) ? T(0) : std::atan2(im, re);
  }
  return p;
}

template <typename T>
Spectrum<T> from_polar(const PolarSpectrum<T>& p) {
  if (p.magnitude.size() != p.phase.size() ||
      p.magnitude.size() != p.num_bins() * p.n_channels)
    throw ConfigError("from_polar: shape mismatch");
  Spectrum<T> s{p.n_time, p.n_channels,
                std::vector<std::complex<T>>(p.magnitude.size())};
  for (std::size_t i = 0; i < s.bins.size(); ++i) {
    if (p.magnitude[i] < T(0))
      throw NumericError("from_polar: negative magnitude at bin " +
                         std::to_string(i / p.n_channels) + ", channel " +
                         std::to_string(i % p.n_channels));
    s.bins[i] = {p.magnitude[i] * std::cos(p.phase[i]),
                 p.magnitude[i] * std::sin(p.phase[i])};
  }
  for (std::size_t c = 0; c < s.n_channels; ++c) {
    s.at(0, c).imag(T(0));
    if (s.n_time % 2 == 0) s.at(s.n_time / 2, c).imag(T(0));
  }
  return s;
}

// Composition of from_polar and idft.
template <typename T>
std::vector<T> denoise_reconstruct(const DftPlan<T>& plan,
                                   const PolarSpectrum<T>& p) {
  return idft(plan, from_polar(p));
}

template <typename T>
std::vector<T> denoise_reconstruct(const PolarSpectrum<T>& p) {
  return denoise_reconstruct(DftPlan<T>(p.n_time), p);
}

// Backward of x = denoise_reconstruct(p) with respect to magnitude and
// phase, given dL/dx. Adds into dmag/dphase ([bins x C]).
//
// The inverse is linear in (Re, Im): dRe_m = (w_m/N) Re(DFT(g)_m) and
// dIm_m = (w_m/N) Im(DFT(g)_m), with w_m = 1 at DC/Nyquist and 2 otherwise;
// Im at DC/Nyquist is discarded so its gradient is zero.
template <typename T>
void denoise_reconstruct_vjp(const DftPlan<T>& plan, const PolarSpectrum<T>& p,
                             std::span<const T> dx, std::span<T> dmag,
                             std::span<T> dphase) {
  const std::size_t n = plan.size();
  const std::size_t nb = half_bins(n);
  const std::size_t C = p.n_channels;
  std::vector<T> col(n);
  std::vector<std::complex<T>> g(nb);
  const T inv_n = T(1) / T(n);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t t = 0; t < n; ++t) col[t] = dx[t * C + c];
    plan.forward(col, g);
    for (std::size_t m = 0; m < nb; ++m) {
      const bool edge = m == 0 || (n % 2 == 0 && m == n / 2);
      const T w = edge ? T(1) : T(2);
      const T d_re = w * inv_n * g[m].real();
      const T d_im = edge ? T(0) : w * inv_n * g[m].imag();
      const std::size_t i = m * C + c;
      const T cs = std::cos(p.phase[i]);
      const T sn = std::sin(p.phase[i]);
      dmag[i] += d_re * cs + d_im * sn;
      dphase[i] += p.magnitude[i] * (-d_re * sn + d_im * cs);
    }
  }
}

}  // namespace specmae
