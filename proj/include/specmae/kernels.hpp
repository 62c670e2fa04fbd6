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

// Dense forward kernels and their vector-Jacobian products. All matrices are
// row-major; gradient outputs are accumulated (+=) unless stated otherwise.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>

namespace specmae::kernels {

// y[rows x out] = x[rows x in] * w[in x out] + b[out]. `b` may be empty.
template <typename T>
void linear(std::span<const T> x, std::size_t rows, std::size_t in,
            std::span<const T> w, std::span<const T> b, std::size_t out,
            std::span<T> y) {
  for (std::size_t r = 0; r < rows; ++r) {
    T* yr = y.data() + r * out;
    if (b.empty()) {
      std::fill(yr, yr + out, T(0));
    } else {
      std::copy(b.begin(), b.end(), yr);
    }
    const T* xr = x.data() + r * in;
    for (std::size_t k = 0; k < in; ++k) {
      const T xv = xr[k];
      const T* wk = w.data() + k * out;
      for (std::size_t j = 0; j < out; ++j) yr[j] += xv * wk[j];
    }
  }
}

// Given dy, accumulates dw += x^T dy and db += sum_r dy; writes dx = dy w^T
// (overwrite) when dx is non-empty.
template <typename T>
void linear_vjp(std::span<const T> x, std::size_t rows, std::size_t in,
                std::span<const T> w, std::size_t out, std::span<const T> dy,
                std::span<T> dw, std::span<T> db, std::span<T> dx) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* dyr = dy.data() + r * out;
    const T* xr = x.data() + r * in;
    if (!db.empty())
      for (std::size_t j = 0; j < out; ++j) db[j] += dyr[j];
    if (!dw.empty()) {
      for (std::size_t k = 0; k < in; ++k) {
        const T xv = xr[k];
        if (xv == T(0)) continue;
        T* dwk = dw.data() + k * out;
        for (std::size_t j = 0; j < out; ++j) dwk[j] += xv * dyr[j];
      }
    }
    if (!dx.empty()) {
      T* dxr = dx.data() + r * in;
      for (std::size_t k = 0; k < in; ++k) {
        const T* wk = w.data() + k * out;
        T acc = 0;
        for (std::size_t j = 0; j < out; ++j) acc += wk[j] * dyr[j];
        dxr[k] = acc;
      }
    }
  }
}

// Exact GELU: x * Phi(x).
template <typename T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(M_SQRT1_2)));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(M_SQRT1_2)));
  const T pdf = std::exp(T(-0.5) * x * x) * T(0.5 * M_2_SQRTPI * M_SQRT1_2);
  return cdf + x * pdf;
}

template <typename T>
T softplus(T x) {
  return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

inline constexpr double kLayerNormEps = 1e-6;

// Row-wise layer normalization. Stores the normalized rows (pre-affine) and
// the reciprocal standard deviation for the backward pass.
template <typename T>
void layer_norm(std::span<const T> x, std::size_t rows, std::size_t dim,
                std::span<const T> scale, std::span<const T> offset,
                std::span<T> xhat, std::span<T> rstd, std::span<T> y) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * dim;
    T mean = 0;
    for (std::size_t j = 0; j < dim; ++j) mean += xr[j];
    mean /= T(dim);
    T var = 0;
    for (std::size_t j = 0; j < dim; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= T(dim);
    const T rs = T(1) / std::sqrt(var + T(kLayerNormEps));
    rstd[r] = rs;
    for (std::size_t j = 0; j < dim; ++j) {
      const T h = (xr[j] - mean) * rs;
      xhat[r * dim + j] = h;
      y[r * dim + j] = h * scale[j] + offset[j];
    }
  }
}

// Accumulates dscale/doffset and adds the input gradient into dx.
template <typename T>
void layer_norm_vjp(std::span<const T> xhat, std::span<const T> rstd,
                    std::size_t rows, std::size_t dim,
                    std::span<const T> scale, std::span<const T> dy,
                    std::span<T> dscale, std::span<T> doffset,
                    std::span<T> dx) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* h = xhat.data() + r * dim;
    const T* g = dy.data() + r * dim;
    T mean_dh = 0;
    T mean_dh_h = 0;
    for (std::size_t j = 0; j < dim; ++j) {
      dscale[j] += g[j] * h[j];
      doffset[j] += g[j];
      const T dh = g[j] * scale[j];
      mean_dh += dh;
      mean_dh_h += dh * h[j];
    }
    mean_dh /= T(dim);
    mean_dh_h /= T(dim);
    T* dxr = dx.data() + r * dim;
    for (std::size_t j = 0; j < dim; ++j) {
      const T dh = g[j] * scale[j];
      dxr[j] += rstd[r] * (dh - mean_dh - h[j] * mean_dh_h);
    }
  }
}

// In-place numerically stable softmax over a contiguous row.
template <typename T>
void softmax(std::span<T> row) {
  const T mx = *std::max_element(row.begin(), row.end());
  T sum = 0;
  for (T& v : row) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (T& v : row) v /= sum;
}

// dlogits = p * (dp - <p, dp>), written into dp.
template <typename T>
void softmax_vjp(std::span<const T> p, std::span<T> dp) {
  T dot = 0;
  for (std::size_t i = 0; i < p.size(); ++i) dot += p[i] * dp[i];
  for (std::size_t i = 0; i < p.size(); ++i) dp[i] = p[i] * (dp[i] - dot);
}

}  // namespace specmae::kernels
