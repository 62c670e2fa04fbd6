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
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"
#include "specmae/common.hpp"
#include "specmae/signal_io.hpp"

namespace specmae {

struct ClassMetrics {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  double ap = 0;
  std::size_t support = 0;
};

struct EvalReport {
  TaskKind task = TaskKind::kClassification;
  std::size_t num_examples = 0;
  // classification
  double acc = 0;
  double map = 0;
  double macro_f1 = 0;
  std::vector<ClassMetrics> per_class;
  // regression
  double mse = 0;
  double mae = 0;
  // provenance
  std::uint64_t seed = 0;
  std::string config_hash;
};

inline std::size_t argmax(std::span<const float> row) {
  return static_cast<std::size_t>(
      std::max_element(row.begin(), row.end()) - row.begin());
}

// Average precision by rank summation over descending scores, without
// interpolation. Equal scores keep example order. Zero when the class has no
// positives.
inline double average_precision(std::span<const float> scores,
                                std::span<const std::uint32_t> labels,
                                std::size_t num_classes, std::size_t cls) {
  const std::size_t n = labels.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
    return scores[a * num_classes + cls] > scores[b * num_classes + cls];
  });
  std::size_t positives = 0, hits = 0;
  double sum = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[order[r]] == cls) {
      ++hits;
      sum += double(hits) / double(r + 1);
    }
  }
  positives = hits;
  return positives == 0 ? 0.0 : sum / double(positives);
}

// `scores` is [n x num_classes]; predictions are the row argmax.
inline EvalReport compute_classification_metrics(
    std::span<const float> scores, std::span<const std::uint32_t> labels,
    std::size_t num_classes) {
  const std::size_t n = labels.size();
  if (n == 0) throw DataError("compute_metrics: empty evaluation set");
  if (num_classes == 0 || scores.size() != n * num_classes)
    throw DataError("compute_metrics: scores shape does not match labels");

  EvalReport r;
  r.task = TaskKind::kClassification;
  r.num_examples = n;
  r.per_class.resize(num_classes);
  std::vector<std::size_t> tp(num_classes, 0), predicted(num_classes, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= num_classes)
      throw DataError("compute_metrics: label out of range");
    const std::size_t pred = argmax(scores.subspan(i * num_classes, num_classes));
    ++predicted[pred];
    ++r.per_class[labels[i]].support;
    if (pred == labels[i]) {
      ++correct;
      ++tp[pred];
    }
  }
  r.acc = double(correct) / double(n);
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto& m = r.per_class[c];
    m.precision = predicted[c] ? double(tp[c]) / double(predicted[c]) : 0.0;
    m.recall = m.support ? double(tp[c]) / double(m.support) : 0.0;
    m.f1 = (m.precision + m.recall) > 0
               ? 2 * m.precision * m.recall / (m.precision + m.recall)
               : 0.0;
    m.ap = average_precision(scores, labels, num_classes, c);
    r.macro_f1 += m.f1;
    r.map += m.ap;
  }
  r.macro_f1 /= double(num_classes);
  r.map /= double(num_classes);
  return r;
}

// Hard predictions are scored as one-hot rows.
inline EvalReport compute_classification_metrics_from_predictions(
    std::span<const std::uint32_t> preds, std::span<const std::uint32_t> labels,
    std::size_t num_classes) {
  if (preds.size() != labels.size())
    throw DataError("compute_metrics: predictions and labels differ in length");
  std::vector<float> scores(preds.size() * num_classes, 0.0f);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] >= num_classes)
      throw DataError("compute_metrics: prediction out of range");
    scores[i * num_classes + preds[i]] = 1.0f;
  }
  return compute_classification_metrics(scores, labels, num_classes);
}

inline EvalReport compute_regression_metrics(std::span<const float> preds,
                                             std::span<const float> targets,
                                             std::size_t dim) {
  if (preds.empty()) throw DataError("compute_metrics: empty evaluation set");
  if (preds.size() != targets.size() || dim == 0 || preds.size() % dim != 0)
    throw DataError("compute_metrics: prediction/target shape mismatch");
  EvalReport r;
  r.task = TaskKind::kRegression;
  r.num_examples = preds.size() / dim;
  double se = 0, ae = 0;
  for (std::size_t k = 0; k < preds.size(); ++k) {
    const double e = double(preds[k]) - double(targets[k]);
    se += e * e;
    ae += std::abs(e);
  }
  r.mse = se / double(preds.size());
  r.mae = ae / double(preds.size());
  return r;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j = {{"task", r.task == TaskKind::kClassification
                                   ? "classification"
                                   : "regression"},
                      {"num_examples", r.num_examples},
                      {"seed", r.seed},
                      {"config_hash", r.config_hash}};
  if (r.task == TaskKind::kClassification) {
    j["acc"] = r.acc;
    j["mAP"] = r.map;
    j["macro_f1"] = r.macro_f1;
    nlohmann::json pc = nlohmann::json::array();
    for (std::size_t c = 0; c < r.per_class.size(); ++c) {
      const auto& m = r.per_class[c];
      pc.push_back({{"class", c},
                    {"precision", m.precision},
                    {"recall", m.recall},
                    {"f1", m.f1},
                    {"ap", m.ap},
                    {"support", m.support}});
    }
    j["per_class"] = pc;
  } else {
    j["mse"] = r.mse;
    j["mae"] = r.mae;
  }
  return j;
}

struct MeanStd {
  double mean = 0;
  double std = 0;
};

// Population std over runs.
inline MeanStd mean_std(std::span<const double> v) {
  MeanStd out;
  if (v.empty()) return out;
  for (const double x : v) out.mean += x;
  out.mean /= double(v.size());
  for (const double x : v) out.std += (x - out.mean) * (x - out.mean);
  out.std = std::sqrt(out.std / double(v.size()));
  return out;
}

}  // namespace specmae
