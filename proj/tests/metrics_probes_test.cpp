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


#include <algorithm>
#include <cmath>
#include <vector>

#include "gtest/gtest.h"
#include "specmae/metrics.hpp"
#include "specmae/probes.hpp"
#include "test_util.hpp"

namespace specmae {
namespace {

// Independent AP: sum of precision times recall increments along the ranking.
double StepAreaAp(const std::vector<float>& scores, const std::vector<std::uint32_t>& labels,
                  std::size_t num_classes, std::size_t cls) {
  std::vector<std::pair<float, std::size_t>> ranked;
  for (std::size_t i = 0; i < labels.size(); ++i)
    ranked.push_back({-scores[i * num_classes + cls], i});
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  const double positives = double(std::count(labels.begin(), labels.end(), cls));
  double area = 0, tp = 0, prev_recall = 0;
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    if (labels[ranked[r].second] == cls) ++tp;
    const double recall = tp / positives;
    area += (recall - prev_recall) * tp / double(r + 1);
    prev_recall = recall;
  }
  return area;
}

TEST(MetricsTest, AlwaysPredictClassZero) {
  const std::vector<std::uint32_t> labels = {0, 1, 0, 1};
  const std::vector<std::uint32_t> preds = {0, 0, 0, 0};
  const auto r = compute_classification_metrics_from_predictions(preds, labels, 2);
  EXPECT_DOUBLE_EQ(r.acc, 0.5);
  // Class 0: precision 1/2, recall 1, F1 2/3. Class 1: F1 0.
  EXPECT_DOUBLE_EQ(r.per_class[0].f1, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.per_class[1].f1, 0.0);
  EXPECT_DOUBLE_EQ(r.macro_f1, 1.0 / 3.0);
  EXPECT_EQ(r.per_class[1].support, 2u);
}

TEST(MetricsTest, PerfectIffAllOnes) {
  const std::vector<std::uint32_t> labels = {2, 0, 1, 1, 0, 2};
  const auto perfect = compute_classification_metrics_from_predictions(labels, labels, 3);
  EXPECT_EQ(perfect.acc, 1.0);
  EXPECT_EQ(perfect.map, 1.0);
  EXPECT_EQ(perfect.macro_f1, 1.0);
  auto wrong = labels;
  wrong[3] = 2;
  const auto r = compute_classification_metrics_from_predictions(wrong, labels, 3);
  EXPECT_LT(r.acc, 1.0);
  EXPECT_LT(r.map, 1.0);
  EXPECT_LT(r.macro_f1, 1.0);
}

TEST(MetricsTest, AveragePrecisionHandValues) {
  // Class 1 positives land at ranks 1 and 3: (1/1 + 2/3) / 2.
  const std::vector<float> scores = {0.1f, 0.9f, 0.2f, 0.8f, 0.3f, 0.7f, 0.4f, 0.6f};
  const std::vector<std::uint32_t> labels = {1, 0, 1, 0};
  EXPECT_NEAR(average_precision(scores, labels, 2, 1), 5.0 / 6.0, 1e-12);
  // Class 0 column ranks examples 3, 2, 1, 0; positives are 3 and 1.
  EXPECT_NEAR(average_precision(scores, labels, 2, 0), 5.0 / 6.0, 1e-12);
  // Positives last: (1/3 + 2/4) / 2.
  const std::vector<std::uint32_t> late = {0, 0, 1, 1};
  EXPECT_NEAR(average_precision(scores, late, 2, 1), 5.0 / 12.0, 1e-12);
  const std::vector<std::uint32_t> none = {0, 0, 0, 0};
  EXPECT_EQ(average_precision(scores, none, 2, 1), 0.0);
}

TEST(MetricsTest, AveragePrecisionMatchesStepArea) {
  const std::size_t n = 200, k = 4;
  Rng rng(3);
  std::vector<std::uint32_t> labels(n);
  for (auto& l : labels) l = std::uint32_t(uniform_index(rng, k));
  const auto noise = testing::gaussian<float>(n * k, 4);
  std::vector<float> scores(n * k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < k; ++c)
      scores[i * k + c] = noise[i * k + c] + (labels[i] == c ? 1.0f : 0.0f);
  const auto r = compute_classification_metrics(scores, labels, k);
  double map = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const double oracle = StepAreaAp(scores, labels, k, c);
    EXPECT_NEAR(r.per_class[c].ap, oracle, 1e-12);
    map += oracle;
  }
  EXPECT_NEAR(r.map, map / double(k), 1e-12);
  for (const double v : {r.acc, r.map, r.macro_f1}) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(MetricsTest, Regression) {
  const std::vector<float> t = {0, 4, 1, -1};
  const auto same = compute_regression_metrics(t, t, 2);
  EXPECT_EQ(same.mse, 0.0);
  EXPECT_EQ(same.mae, 0.0);
  EXPECT_EQ(same.num_examples, 2u);
  const std::vector<float> p = {1, 2, 1, -1};
  const auto r = compute_regression_metrics(p, t, 2);
  EXPECT_DOUBLE_EQ(r.mse, 5.0 / 4.0);
  EXPECT_DOUBLE_EQ(r.mae, 3.0 / 4.0);
}

TEST(MetricsTest, ShapeErrors) {
  const std::vector<std::uint32_t> labels = {0, 1};
  EXPECT_THROW(compute_classification_metrics(std::vector<float>(3), labels, 2), DataError);
  EXPECT_THROW(compute_classification_metrics({}, {}, 2), DataError);
  EXPECT_THROW(compute_regression_metrics(std::vector<float>(3), std::vector<float>(4), 1),
               DataError);
}

TEST(MetricsTest, MeanStd) {
  const std::vector<double> v = {1, 2, 3, 4};
  const auto m = mean_std(v);
  EXPECT_DOUBLE_EQ(m.mean, 2.5);
  EXPECT_DOUBLE_EQ(m.std, std::sqrt(1.25));
}

// ---------------------------------------------------------------------------

FeatureSet Blobs(std::size_t per_class, std::size_t dim, double separation,
                 std::uint64_t seed, std::size_t classes = 2) {
  FeatureSet fs;
  fs.dim = dim;
  const auto noise = testing::gaussian<float>(per_class * classes * dim, seed);
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t i = 0; i < per_class; ++i) {
      const std::size_t row = fs.labels.size();
      for (std::size_t e = 0; e < dim; ++e)
        fs.values.push_back(noise[row * dim + e] + (e == c ? float(separation) : 0.0f));
      fs.labels.push_back(std::uint32_t(c));
    }
  return fs;
}

TEST(KnnTest, DuplicatePointWithKOne) {
  FeatureSet train;
  train.dim = 2;
  train.values = {0, 0, 5, 5, 9, 1};
  train.labels = {3, 1, 2};
  FeatureSet test;
  test.dim = 2;
  test.values = {5, 5, 9, 1};
  test.labels = {1, 2};
  EXPECT_EQ(knn_probe(train, test, 1), 1.0);
}

TEST(KnnTest, SeparatedBlobsAndConstantLabels) {
  const auto train = Blobs(50, 4, 20.0, 1);
  const auto test = Blobs(30, 4, 20.0, 2);
  EXPECT_EQ(knn_probe(train, test, 20), 1.0);

  auto same = train;
  std::fill(same.labels.begin(), same.labels.end(), 1u);
  EXPECT_DOUBLE_EQ(knn_probe(same, test, 20), 0.5);
}

TEST(KnnTest, TieBreaks) {
  FeatureSet train;
  train.dim = 1;
  // Two votes each; class 1 voters are nearer in total.
  train.values = {-3, 3, 1, -1};
  train.labels = {0, 0, 1, 1};
  FeatureSet test;
  test.dim = 1;
  test.values = {0};
  test.labels = {1};
  EXPECT_EQ(knn_probe(train, test, 4), 1.0);
  // Equal votes and equal distances: lowest class id.
  train.values = {-1, 1};
  train.labels = {2, 1};
  EXPECT_EQ(knn_probe(train, test, 2), 1.0);
  test.labels = {2};
  EXPECT_EQ(knn_probe(train, test, 2), 0.0);
}

TEST(KnnTest, ErrorsAndPurity) {
  const auto train = Blobs(5, 3, 1.0, 3);
  const auto test = Blobs(5, 3, 1.0, 4);
  EXPECT_THROW(knn_probe(train, test, 11), ConfigError);
  EXPECT_THROW(knn_probe(train, test, 0), ConfigError);
  const auto train_copy = train, test_copy = test;
  knn_probe(train, test, 3);
  linear_probe(train, test);
  EXPECT_EQ(train.values, train_copy.values);
  EXPECT_EQ(test.values, test_copy.values);
  EXPECT_EQ(train.labels, train_copy.labels);
}

TEST(LinearProbeTest, SeparableBlobs) {
  const auto r = linear_probe(Blobs(50, 6, 6.0, 5), Blobs(40, 6, 6.0, 6));
  EXPECT_GE(r.map, 0.99);
  EXPECT_EQ(r.report.num_examples, 80u);
}

TEST(LinearProbeTest, RandomFeaturesAreAtChance) {
  std::vector<double> maps;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    auto train = Blobs(100, 16, 0.0, 10 + seed, 5);
    auto test = Blobs(100, 16, 0.0, 20 + seed, 5);
    maps.push_back(linear_probe(train, test).map);
  }
  EXPECT_NEAR(mean_std(maps).mean, 0.2, 0.05);
}

TEST(LinearProbeTest, DuplicatedColumns) {
  const auto train = Blobs(60, 5, 1.5, 7, 3);
  const auto test = Blobs(60, 5, 1.5, 8, 3);
  auto widen = [](const FeatureSet& fs) {
    FeatureSet out;
    out.dim = 2 * fs.dim;
    out.labels = fs.labels;
    for (std::size_t i = 0; i < fs.size(); ++i)
      for (int rep = 0; rep < 2; ++rep)
        for (const float v : fs.row(i)) out.values.push_back(v);
    return out;
  };
  const double base = linear_probe(train, test).map;
  EXPECT_NEAR(linear_probe(widen(train), widen(test)).map, base, 0.01);
}

TEST(LinearProbeTest, SingleClassIsRejected) {
  auto train = Blobs(10, 2, 1.0, 9);
  std::fill(train.labels.begin(), train.labels.end(), 0u);
  EXPECT_THROW(linear_probe(train, Blobs(5, 2, 1.0, 10)), DataError);
}

}  // namespace
}  // namespace specmae
