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

// Frozen-feature evaluation: k-nearest-neighbour vote and one-vs-all linear
// hinge classifiers. Features are [n x dim] row-major.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "specmae/common.hpp"
#include "specmae/metrics.hpp"

namespace specmae {

struct FeatureSet {
  std::size_t dim = 0;
  std::vector<float> values;  // [n x dim]
  std::vector<std::uint32_t> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const float> row(std::size_t i) const {
    return std::span<const float>(values).subspan(i * dim, dim);
  }
};

inline std::size_t max_label(const FeatureSet& a, const FeatureSet& b) {
  std::uint32_t m = 0;
  for (const auto l : a.labels) m = std::max(m, l);
  for (const auto l : b.labels) m = std::max(m, l);
  return m;
}

// Euclidean kNN with majority vote. Vote ties go to the class with the
// smallest summed distance among its voters, then to the lowest class id.
// Returns top-1 accuracy on `test`.
inline double knn_probe(const FeatureSet& train, const FeatureSet& test,
                        std::size_t k = 20) {
  if (k == 0 || k > train.size())
    throw ConfigError("knn_probe: k must be in [1, n_train] (k=" +
                      std::to_string(k) + ", n_train=" +
                      std::to_string(train.size()) + ")");
  if (train.dim != test.dim) throw DataError("knn_probe: feature dim mismatch");
  if (test.size() == 0) throw DataError("knn_probe: empty test set");
  const std::size_t num_classes = max_label(train, test) + 1;
  std::vector<std::pair<double, std::size_t>> dist(train.size());
  std::vector<std::size_t> votes(num_classes);
  std::vector<double> dist_sum(num_classes);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto q = test.row(i);
    for (std::size_t j = 0; j < train.size(); ++j) {
      const auto x = train.row(j);
      double s = 0;
      for (std::size_t e = 0; e < train.dim; ++e) {
        const double dd = double(q[e]) - double(x[e]);
        s += dd * dd;
      }
      dist[j] = {std::sqrt(s), j};
    }
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    std::fill(votes.begin(), votes.end(), 0);
    std::fill(dist_sum.begin(), dist_sum.end(), 0.0);
    for (std::size_t r = 0; r < k; ++r) {
      const auto cls = train.labels[dist[r].second];
      ++votes[cls];
      dist_sum[cls] += dist[r].first;
    }
    std::size_t best = 0;
    for (std::size_t c = 1; c < num_classes; ++c) {
      if (votes[c] > votes[best] ||
          (votes[c] == votes[best] && votes[c] > 0 && dist_sum[c] < dist_sum[best]))
        best = c;
    }
    if (best == test.labels[i]) ++correct;
  }
  return double(correct) / double(test.size());
}

struct LinearProbeConfig {
  double l2 = 1e-3;
  double learning_rate = 0.5;
  std::size_t iterations = 400;
};

struct LinearProbeResult {
  double map = 0;
  EvalReport report;
};

// One-vs-all linear classifiers, each minimizing
//   l2/2 |w|^2 + mean_i max(0, 1 - y_i (w.x_i + b))
// by full-batch subgradient descent from zero with step lr / sqrt(1 + t).
// Features are z-scored with training statistics first. Deterministic.
inline LinearProbeResult linear_probe(const FeatureSet& train,
                                     const FeatureSet& test,
                                     const LinearProbeConfig& cfg = {}) {
  if (train.dim != test.dim) throw DataError("linear_probe: feature dim mismatch");
  if (train.size() == 0 || test.size() == 0)
    throw DataError("linear_probe: empty feature set");
  const std::size_t num_classes = max_label(train, test) + 1;
  {
    std::vector<char> seen(num_classes, 0);
    std::size_t distinct = 0;
    for (const auto l : train.labels)
      if (!seen[l]++) ++distinct;
    if (distinct < 2)
      throw DataError("linear_probe: training set has a single class");
  }
  const std::size_t n = train.size(), dim = train.dim;

  std::vector<double> mean(dim, 0), inv_sd(dim, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t e = 0; e < dim; ++e) mean[e] += train.values[i * dim + e];
  for (auto& m : mean) m /= double(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t e = 0; e < dim; ++e) {
      const double d = train.values[i * dim + e] - mean[e];
      inv_sd[e] += d * d;
    }
  for (auto& s : inv_sd) {
    const double sd = std::sqrt(s / double(n));
    s = sd > 1e-12 ? 1.0 / sd : 0.0;
  }
  auto normalize = [&](const FeatureSet& fs) {
    std::vector<double> z(fs.values.size());
    for (std::size_t i = 0; i < fs.size(); ++i)
      for (std::size_t e = 0; e < dim; ++e)
        z[i * dim + e] = (fs.values[i * dim + e] - mean[e]) * inv_sd[e];
    return z;
  };
  const auto xtr = normalize(train);
  const auto xte = normalize(test);

  std::vector<float> scores(test.size() * num_classes);
  std::vector<double> w(dim), gw(dim);
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::fill(w.begin(), w.end(), 0.0);
    double b = 0;
    for (std::size_t t = 0; t < cfg.iterations; ++t) {
      std::fill(gw.begin(), gw.end(), 0.0);
      double gb = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const double y = train.labels[i] == c ? 1.0 : -1.0;
        double s = b;
        for (std::size_t e = 0; e < dim; ++e) s += w[e] * xtr[i * dim + e];
        if (y * s < 1.0) {
          for (std::size_t e = 0; e < dim; ++e) gw[e] -= y * xtr[i * dim + e];
          gb -= y;
        }
      }
      const double step = cfg.learning_rate / std::sqrt(1.0 + double(t));
      for (std::size_t e = 0; e < dim; ++e)
        w[e] -= step * (cfg.l2 * w[e] + gw[e] / double(n));
      b -= step * gb / double(n);
    }
    for (std::size_t i = 0; i < test.size(); ++i) {
      double s = b;
      for (std::size_t e = 0; e < dim; ++e) s += w[e] * xte[i * dim + e];
      scores[i * num_classes + c] = static_cast<float>(s);
    }
  }
  LinearProbeResult out;
  out.report = compute_classification_metrics(scores, test.labels, num_classes);
  out.map = out.report.map;
  return out;
}

}  // namespace specmae
