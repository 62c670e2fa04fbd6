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

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "specmae/common.hpp"
#include "specmae/model.hpp"

namespace specmae {

struct AdamWConfig {
  double base_lr = 3e-3;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t total_steps = 1;
  std::size_t warmup_steps = 0;
  // When false, decay applies to every tensor including norms and tokens.
  bool exclude_no_decay = true;

  void validate() const {
    if (!(base_lr > 0)) throw ConfigError("optimizer: base_lr must be > 0");
    if (!(beta1 > 0 && beta1 < 1)) throw ConfigError("optimizer: beta1 must be in (0, 1)");
    if (!(beta2 > 0 && beta2 < 1)) throw ConfigError("optimizer: beta2 must be in (0, 1)");
    if (!(eps > 0)) throw ConfigError("optimizer: eps must be > 0");
    if (!(weight_decay >= 0)) throw ConfigError("optimizer: weight_decay must be >= 0");
    if (warmup_steps > total_steps)
      throw ConfigError("optimizer: warmup_steps exceeds total_steps");
  }
};

template <typename T>
struct OptState {
  Params<T> first_moment;
  Params<T> second_moment;
  std::size_t step = 0;

  static OptState zeros(const ModelConfig& cfg) {
    return {zero_params<T>(cfg), zero_params<T>(cfg), 0};
  }
};

// Linear warmup from 0, then half-cosine decay to 0 at total_steps.
inline double cosine_lr(std::size_t step, const AdamWConfig& cfg) {
  const std::size_t total = cfg.total_steps, warm = cfg.warmup_steps;
  if (step >= total) return 0.0;
  if (step < warm) return cfg.base_lr * double(step) / double(warm);
  const double progress = double(step - warm) / double(total - warm);
  return std::max(0.0, 0.5 * cfg.base_lr * (1.0 + std::cos(M_PI * progress)));
}

// One decoupled-decay Adam update:
//   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
//   theta <- theta - lr (m_hat / (sqrt(v_hat) + eps) + wd theta)
template <typename T>
void adamw_step(Params<T>& params, const Params<T>& grads, OptState<T>& state,
                const AdamWConfig& cfg, double lr) {
  if (!(lr > 0)) throw ConfigError("adamw_step: lr must be > 0");
  auto p_list = tensor_list(params);
  const auto g_list = tensor_list(grads);
  auto m_list = tensor_list(state.first_moment);
  auto v_list = tensor_list(state.second_moment);
  if (p_list.size() != g_list.size() || p_list.size() != m_list.size())
    throw ConfigError("adamw_step: parameter/gradient inventory mismatch");

  for (std::size_t i = 0; i < g_list.size(); ++i)
    if (!all_finite<T>(g_list[i].tensor->span()))
      throw NumericError("non-finite gradient in tensor " + g_list[i].info.name);

  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.step));
  const T b1 = T(cfg.beta1), b2 = T(cfg.beta2);
  for (std::size_t i = 0; i < p_list.size(); ++i) {
    const bool decay = !cfg.exclude_no_decay || p_list[i].info.decay;
    const T wd = decay ? T(cfg.weight_decay) : T(0);
    auto& theta = p_list[i].tensor->values;
    const auto& g = g_list[i].tensor->values;
    auto& m = m_list[i].tensor->values;
    auto& v = v_list[i].tensor->values;
    const T step_lr = T(lr);
    const T inv_bc1 = T(1.0 / bc1);
    const T inv_bc2 = T(1.0 / bc2);
    const T eps = T(cfg.eps);
    for (std::size_t k = 0; k < theta.size(); ++k) {
      m[k] = b1 * m[k] + (T(1) - b1) * g[k];
      v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
      const T m_hat = m[k] * inv_bc1;
      const T v_hat = v[k] * inv_bc2;
      theta[k] -= step_lr * (m_hat / (std::sqrt(v_hat) + eps) + wd * theta[k]);
    }
  }
}

// ---------------------------------------------------------------------------
// Gradient verification

struct TensorGradError {
  std::string name;
  double max_rel_err = 0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

struct GradCheckReport {
  double max_rel_err = 0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  std::vector<TensorGradError> tensors;

  std::vector<std::string> failing(double tol) const {
    std::vector<std::string> out;
    for (const auto& t : tensors)
      if (t.max_rel_err > tol) out.push_back(t.name);
    return out;
  }
};

struct GradCheckOptions {
  double step = 1e-4;
  // 0 checks every coordinate; otherwise a seeded sample per tensor.
  std::size_t coords_per_tensor = 0;
  std::uint64_t seed = 0;
  // Coordinates where both gradients are below this magnitude count as a
  // match. Needed for gradients that vanish identically (e.g. attention key
  // biases), where the finite difference is pure rounding noise.
  double abs_floor = 0;
};

inline double relative_error(double a, double f) {
  return std::abs(a - f) / std::max({std::abs(a), std::abs(f), 1e-12});
}

// Central differences against analytic gradients. `loss_fn(params, grads)`
// returns the loss and, when `grads` is non-null, accumulates the analytic
// gradient into it. The loss must be deterministic; two evaluations at the
// same point that differ abort the check.
template <typename LossFn>
GradCheckReport grad_check(LossFn&& loss_fn, Params<double>& params,
                           const ModelConfig& cfg,
                           const GradCheckOptions& opt = {}) {
  Params<double> analytic = zero_params<double>(cfg);
  const double base = loss_fn(params, &analytic);
  const double again = loss_fn(params, nullptr);
  if (base != again)
    throw NumericError("grad_check: loss function is not deterministic");

  GradCheckReport report;
  auto p_list = tensor_list(params);
  const auto a_list = tensor_list(analytic);
  Rng rng(derive_seed(opt.seed, 0x67c4ec));
  for (std::size_t i = 0; i < p_list.size(); ++i) {
    auto& theta = p_list[i].tensor->values;
    const auto& grad = a_list[i].tensor->values;
    std::vector<std::size_t> coords(theta.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (opt.coords_per_tensor > 0 && coords.size() > opt.coords_per_tensor) {
      shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opt.coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    TensorGradError te{p_list[i].info.name, 0, 0, coords.size()};
    for (const auto k : coords) {
      const double orig = theta[k];
      theta[k] = orig + opt.step;
      const double up = loss_fn(params, nullptr);
      theta[k] = orig - opt.step;
      const double down = loss_fn(params, nullptr);
      theta[k] = orig;
      const double fd = (up - down) / (2.0 * opt.step);
      const double err =
          std::max(std::abs(grad[k]), std::abs(fd)) < opt.abs_floor
              ? 0.0
              : relative_error(grad[k], fd);
      if (err > te.max_rel_err) {
        te.max_rel_err = err;
        te.worst_index = k;
      }
    }
    report.checked += te.checked;
    if (report.worst_tensor.empty() || te.max_rel_err > report.max_rel_err) {
      report.max_rel_err = te.max_rel_err;
      report.worst_tensor = te.name;
      report.worst_index = te.worst_index;
    }
    report.tensors.push_back(te);
  }
  return report;
}

}  // namespace specmae
