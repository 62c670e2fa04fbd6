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

// Windowed multichannel signal datasets: in-memory representation, the
// on-disk directory format, and the preprocessing operations applied before
// training (standardization, windowing, splitting, label subsampling).

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "specmae/common.hpp"

namespace specmae {

enum class TaskKind { kClassification, kRegression };

struct Task {
  TaskKind kind = TaskKind::kClassification;
  std::size_t num_classes = 0;  // classification only
  std::size_t target_dim = 0;   // regression only

  static Task classification(std::size_t k) {
    return {TaskKind::kClassification, k, 0};
  }
  static Task regression(std::size_t dim) {
    return {TaskKind::kRegression, 0, dim};
  }
  bool is_classification() const { return kind == TaskKind::kClassification; }
  bool operator==(const Task&) const = default;
};

// One windowed example. `samples` is [n_time x n_channels], time-major.
struct SignalRecord {
  std::size_t n_time = 0;
  std::size_t n_channels = 0;
  std::vector<float> samples;
  std::uint32_t class_id = 0;  // meaningful for classification datasets
  std::vector<float> target;   // meaningful for regression datasets

  float at(std::size_t t, std::size_t c) const {
    return samples[t * n_channels + c];
  }
};

struct Dataset {
  std::string name = "dataset";
  Task task;
  double sample_rate_hz = 1.0;
  std::vector<SignalRecord> records;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
  std::size_t n_time() const { return records.empty() ? 0 : records[0].n_time; }
  std::size_t n_channels() const {
    return records.empty() ? 0 : records[0].n_channels;
  }

  // Throws DataError naming the first offending record.
  void validate() const {
    if (!(sample_rate_hz > 0)) throw DataError("sample_rate_hz must be > 0");
    if (task.is_classification() && task.num_classes == 0)
      throw DataError("classification task needs num_classes >= 1");
    if (!task.is_classification() && task.target_dim == 0)
      throw DataError("regression task needs target_dim >= 1");
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& r = records[i];
      const std::string where = "record " + std::to_string(i) + ": ";
      if (r.n_time < 1 || r.n_channels < 1)
        throw DataError(where + "empty shape");
      if (r.n_time != n_time() || r.n_channels != n_channels())
        throw DataError(where + "shape differs from record 0");
      if (r.samples.size() != r.n_time * r.n_channels)
        throw DataError(where + "sample buffer size mismatch");
      for (std::size_t k = 0; k < r.samples.size(); ++k) {
        if (!std::isfinite(r.samples[k]))
          throw DataError(where + "non-finite sample at t=" +
                          std::to_string(k / r.n_channels) +
                          " c=" + std::to_string(k % r.n_channels));
      }
      if (task.is_classification()) {
        if (r.class_id >= task.num_classes)
          throw DataError(where + "class id out of range (" +
                          std::to_string(r.class_id) + " >= " +
                          std::to_string(task.num_classes) + ")");
      } else {
        if (r.target.size() != task.target_dim)
          throw DataError(where + "regression target dim mismatch");
        if (!all_finite<float>(r.target))
          throw DataError(where + "non-finite regression target");
      }
    }
  }

  Dataset subset(std::span<const std::size_t> indices) const {
    Dataset out;
    out.name = name;
    out.task = task;
    out.sample_rate_hz = sample_rate_hz;
    out.records.reserve(indices.size());
    for (const auto i : indices) out.records.push_back(records.at(i));
    return out;
  }
};

// ---------------------------------------------------------------------------
// On-disk format

namespace detail {

inline void write_le32(std::ofstream& out, std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) |
        (v >> 24);
  }
  out.write(reinterpret_cast<const char*>(&v), 4);
}

inline std::uint32_t read_le32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
         (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}

inline void write_f32(std::ofstream& out, float f) {
  write_le32(out, std::bit_cast<std::uint32_t>(f));
}

inline std::vector<unsigned char> read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("missing file: " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  ds.validate();
  std::filesystem::create_directories(dir);
  nlohmann::json meta = {
      {"name", ds.name},
      {"num_records", ds.size()},
      {"n_time", ds.n_time()},
      {"n_channels", ds.n_channels()},
      {"sample_rate_hz", ds.sample_rate_hz},
      {"task", ds.task.is_classification() ? "classification" : "regression"},
  };
  if (ds.task.is_classification())
    meta["num_classes"] = ds.task.num_classes;
  else
    meta["target_dim"] = ds.task.target_dim;
  std::ofstream(dir / "meta.json") << meta.dump(2) << "\n";

  std::ofstream data(dir / "data.f32", std::ios::binary);
  for (const auto& r : ds.records)
    for (const float v : r.samples) detail::write_f32(data, v);
  if (!data) throw DataError("write failed: " + (dir / "data.f32").string());

  if (ds.task.is_classification()) {
    std::ofstream labels(dir / "labels.u32", std::ios::binary);
    for (const auto& r : ds.records) detail::write_le32(labels, r.class_id);
  } else {
    std::ofstream labels(dir / "labels.f32", std::ios::binary);
    for (const auto& r : ds.records)
      for (const float v : r.target) detail::write_f32(labels, v);
  }
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  const auto meta_path = dir / "meta.json";
  if (!std::filesystem::exists(meta_path))
    throw DataError("missing file: " + meta_path.string());
  nlohmann::json meta;
  try {
    std::ifstream(meta_path) >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed meta.json: " + std::string(e.what()));
  }

  Dataset ds;
  std::size_t n = 0, n_time = 0, n_channels = 0;
  try {
    ds.name = meta.value("name", std::string("dataset"));
    n = meta.at("num_records").get<std::size_t>();
    n_time = meta.at("n_time").get<std::size_t>();
    n_channels = meta.at("n_channels").get<std::size_t>();
    ds.sample_rate_hz = meta.at("sample_rate_hz").get<double>();
    const auto task = meta.at("task").get<std::string>();
    if (task == "classification") {
      ds.task = Task::classification(meta.at("num_classes").get<std::size_t>());
    } else if (task == "regression") {
      ds.task = Task::regression(meta.at("target_dim").get<std::size_t>());
    } else {
      throw DataError("meta.json: unknown task '" + task + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("meta.json: " + std::string(e.what()));
  }
  if (n_time == 0 || n_channels == 0)
    throw DataError("meta.json: n_time and n_channels must be >= 1");

  const auto data = detail::read_file(dir / "data.f32");
  const std::size_t per_record = n_time * n_channels;
  if (data.size() != n * per_record * 4)
    throw DataError("data.f32: payload length mismatch (expected " +
                    std::to_string(n * per_record * 4) + " bytes, got " +
                    std::to_string(data.size()) + ")");

  std::vector<unsigned char> labels;
  if (ds.task.is_classification()) {
    labels = detail::read_file(dir / "labels.u32");
    if (labels.size() != n * 4)
      throw DataError("labels.u32: payload length mismatch");
  } else {
    labels = detail::read_file(dir / "labels.f32");
    if (labels.size() != n * ds.task.target_dim * 4)
      throw DataError("labels.f32: payload length mismatch");
  }

  ds.records.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& r = ds.records[i];
    r.n_time = n_time;
    r.n_channels = n_channels;
    r.samples.resize(per_record);
    const unsigned char* p = data.data() + i * per_record * 4;
    for (std::size_t k = 0; k < per_record; ++k)
      r.samples[k] = std::bit_cast<float>(detail::read_le32(p + 4 * k));
    if (ds.task.is_classification()) {
      r.class_id = detail::read_le32(labels.data() + 4 * i);
    } else {
      const std::size_t dim = ds.task.target_dim;
      r.target.resize(dim);
      for (std::size_t k = 0; k < dim; ++k)
        r.target[k] = std::bit_cast<float>(
            detail::read_le32(labels.data() + 4 * (i * dim + k)));
    }
  }
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Preprocessing

inline constexpr double kDegenerateStd = 1e-8;

// Per-channel z-scoring with population std. Channels whose std falls below
// kDegenerateStd are only mean-centered.
inline std::vector<float> standardize(std::span<const float> samples,
                                      std::size_t n_time,
                                      std::size_t n_channels) {
  std::vector<float> out(samples.size());
  for (std::size_t c = 0; c < n_channels; ++c) {
    double mean = 0;
    for (std::size_t t = 0; t < n_time; ++t) mean += samples[t * n_channels + c];
    mean /= double(n_time);
    double var = 0;
    for (std::size_t t = 0; t < n_time; ++t) {
      const double d = samples[t * n_channels + c] - mean;
      var += d * d;
    }
    const double sd = std::sqrt(var / double(n_time));
    const double inv = sd < kDegenerateStd ? 1.0 : 1.0 / sd;
    for (std::size_t t = 0; t < n_time; ++t)
      out[t * n_channels + c] =
          static_cast<float>((samples[t * n_channels + c] - mean) * inv);
  }
  return out;
}

inline Dataset standardized(Dataset ds) {
  for (auto& r : ds.records)
    r.samples = standardize(r.samples, r.n_time, r.n_channels);
  return ds;
}

// Per-sample labels of a long recording: class ids, or [T x dim] targets.
struct LongLabels {
  std::vector<std::uint32_t> classes;
  std::vector<float> targets;
  std::size_t target_dim = 0;

  bool is_classification() const { return target_dim == 0; }
};

// Windows start at 0, stride, 2*stride, ...; the class label of a window is
// its most frequent per-sample label (ties go to the label seen first), and a
// regression label is the per-dimension mean over the window.
inline std::vector<SignalRecord> sliding_window(std::span<const float> signal,
                                                std::size_t n_time,
                                                std::size_t n_channels,
                                                const LongLabels& labels,
                                                std::size_t win,
                                                std::size_t stride) {
  if (win == 0 || win > n_time)
    throw ConfigError("sliding_window: win must be in [1, T] (win=" +
                      std::to_string(win) + ", T=" + std::to_string(n_time) +
                      ")");
  if (stride == 0) throw ConfigError("sliding_window: stride must be >= 1");
  if (signal.size() != n_time * n_channels)
    throw DataError("sliding_window: signal size mismatch");
  if (labels.is_classification() ? labels.classes.size() != n_time
                                 : labels.targets.size() !=
                                       n_time * labels.target_dim)
    throw DataError("sliding_window: label length mismatch");

  const std::size_t count = (n_time - win) / stride + 1;
  std::vector<SignalRecord> out;
  out.reserve(count);
  for (std::size_t w = 0; w < count; ++w) {
    const std::size_t start = w * stride;
    SignalRecord r;
    r.n_time = win;
    r.n_channels = n_channels;
    r.samples.assign(signal.begin() + start * n_channels,
                     signal.begin() + (start + win) * n_channels);
    if (labels.is_classification()) {
      // first-seen order is kept so ties resolve to the earliest label
      std::vector<std::pair<std::uint32_t, std::size_t>> counts;
      for (std::size_t t = start; t < start + win; ++t) {
        const auto id = labels.classes[t];
        auto it = std::find_if(counts.begin(), counts.end(),
                               [id](const auto& p) { return p.first == id; });
        if (it == counts.end())
          counts.emplace_back(id, 1);
        else
          ++it->second;
      }
      std::size_t best = 0;
      for (std::size_t k = 1; k < counts.size(); ++k)
        if (counts[k].second > counts[best].second) best = k;
      r.class_id = counts[best].first;
    } else {
      const std::size_t dim = labels.target_dim;
      std::vector<double> acc(dim, 0.0);
      for (std::size_t t = start; t < start + win; ++t)
        for (std::size_t k = 0; k < dim; ++k)
          acc[k] += labels.targets[t * dim + k];
      r.target.resize(dim);
      for (std::size_t k = 0; k < dim; ++k)
        r.target[k] = static_cast<float>(acc[k] / double(win));
    }
    out.push_back(std::move(r));
  }
  return out;
}

struct SplitSpec {
  double train_frac = 0.8;
  double val_frac_of_train = 0.2;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(train_frac > 0 && train_frac < 1))
      throw ConfigError("split: train_frac must be in (0, 1)");
    if (!(val_frac_of_train >= 0 && val_frac_of_train < 1))
      throw ConfigError("split: val_frac_of_train must be in [0, 1)");
  }
};

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

struct Splits {
  Dataset train, val, test;
};

inline SplitIndices split_indices(std::size_t n, const SplitSpec& spec) {
  spec.validate();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(spec.seed, 0x5eed5117));
  shuffle(order.begin(), order.end(), rng);

  const auto n_test =
      static_cast<std::size_t>(std::llround((1.0 - spec.train_frac) * double(n)));
  const std::size_t n_trainval = n - std::min(n_test, n);
  const auto n_val = static_cast<std::size_t>(
      std::llround(spec.val_frac_of_train * double(n_trainval)));
  if (n_test == 0 || n_test >= n || n_val >= n_trainval ||
      (spec.val_frac_of_train > 0 && n_val == 0))
    throw DataError("split: " + std::to_string(n) +
                    " records are too few for the requested fractions");

  SplitIndices out;
  out.test.assign(order.begin(), order.begin() + n_test);
  out.val.assign(order.begin() + n_test, order.begin() + n_test + n_val);
  out.train.assign(order.begin() + n_test + n_val, order.end());
  return out;
}

inline Splits split(const Dataset& ds, const SplitSpec& spec) {
  const auto idx = split_indices(ds.size(), spec);
  return {ds.subset(idx.train), ds.subset(idx.val), ds.subset(idx.test)};
}

// Keeps max(1, round(fraction * n)) records, drawn without replacement.
// Classification draws are stratified: per-class quotas follow the class
// proportions (largest remainder), and every class gets at least one record
// when the budget allows. Selected records keep their original order.
inline Dataset subsample_labels(const Dataset& train, double fraction,
                                std::uint64_t seed) {
  if (!(fraction > 0 && fraction <= 1))
    throw ConfigError("subsample_labels: fraction must be in (0, 1]");
  const std::size_t n = train.size();
  if (n == 0) return train;
  const std::size_t budget = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(fraction * double(n))));
  if (budget >= n) return train;

  Rng rng(derive_seed(seed, 0x50b5a3e1));
  std::vector<std::size_t> chosen;

  if (!train.task.is_classification()) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order.begin(), order.end(), rng);
    chosen.assign(order.begin(), order.begin() + budget);
  } else {
    std::map<std::uint32_t, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < n; ++i)
      by_class[train.records[i].class_id].push_back(i);

    struct Quota {
      std::uint32_t cls;
      std::size_t available;
      std::size_t take;
      double remainder;
    };
    std::vector<Quota> quotas;
    std::size_t assigned = 0;
    for (const auto& [cls, members] : by_class) {
      const double ideal = double(budget) * double(members.size()) / double(n);
      const auto take = std::min(members.size(), std::size_t(std::floor(ideal)));
      quotas.push_back({cls, members.size(), take, ideal - std::floor(ideal)});
      assigned += take;
    }
    // Largest remainder, then lowest class id.
    std::vector<std::size_t> order(quotas.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
      return quotas[a].remainder > quotas[b].remainder;
    });
    for (std::size_t k = 0; assigned < budget && k < 2 * order.size(); ++k) {
      auto& q = quotas[order[k % order.size()]];
      if (q.take < q.available) {
        ++q.take;
        ++assigned;
      }
    }
    if (budget >= quotas.size()) {
      for (auto& q : quotas) {
        if (q.take > 0) continue;
        auto donor = std::max_element(
            quotas.begin(), quotas.end(),
            [](const Quota& a, const Quota& b) { return a.take < b.take; });
        --donor->take;
        q.take = 1;
      }
    }
    for (const auto& q : quotas) {
      auto members = by_class[q.cls];
      shuffle(members.begin(), members.end(), rng);
      chosen.insert(chosen.end(), members.begin(), members.begin() + q.take);
    }
  }
  std::sort(chosen.begin(), chosen.end());
  return train.subset(chosen);
}

// ---------------------------------------------------------------------------
// Synthetic band-limited data

struct Band {
  double lo_hz = 0;
  double hi_hz = 0;
};

// Narrow equal-width bands separated by small gaps. Close bands make the
// classes hard to separate from a few labels, which leaves headroom for
// pre-training to matter.
inline std::vector<Band> spaced_bands(std::size_t count, double start_hz = 15.0,
                                      double width_hz = 0.4, double gap_hz = 0.2) {
  std::vector<Band> out(count);
  for (std::size_t k = 0; k < count; ++k) {
    const double lo = start_hz + double(k) * (width_hz + gap_hz);
    out[k] = {lo, lo + width_hz};
  }
  return out;
}

struct SyntheticSpec {
  std::string name = "synthetic";
  std::size_t num_examples = 2500;
  std::size_t n_time = 256;
  std::size_t n_channels = 3;
  std::size_t num_classes = 5;
  double sample_rate_hz = 100.0;
  std::vector<Band> bands;  // one per class; empty means spaced_bands()
  double noise_std = 0.5;
  std::uint64_t seed = 0;
  // When set, labels are regression targets: each channel's drawn frequency
  // divided by the Nyquist frequency. Signals are identical to the
  // classification variant under the same seed.
  bool regression_targets = false;

  std::vector<Band> effective_bands() const {
    return bands.empty() ? spaced_bands(num_classes) : bands;
  }

  void validate() const {
    if (num_examples == 0) throw ConfigError("num_examples must be >= 1");
    if (n_time == 0) throw ConfigError("n_time must be >= 1");
    if (n_channels == 0) throw ConfigError("n_channels must be >= 1");
    if (num_classes == 0) throw ConfigError("num_classes must be >= 1");
    if (!(sample_rate_hz > 0)) throw ConfigError("sample_rate_hz must be > 0");
    if (!(noise_std >= 0)) throw ConfigError("noise_std must be >= 0");
    const auto resolved = effective_bands();
    if (resolved.size() != num_classes)
      throw ConfigError("bands: expected " + std::to_string(num_classes) +
                        " bands, got " + std::to_string(resolved.size()));
    const double nyquist = sample_rate_hz / 2;
    for (std::size_t k = 0; k < resolved.size(); ++k) {
      const auto& b = resolved[k];
      const std::string where = "bands[" + std::to_string(k) + "]";
      if (!(b.lo_hz >= 0 && b.lo_hz <= b.hi_hz))
        throw ConfigError(where + ": need 0 <= lo <= hi");
      if (!(b.hi_hz < nyquist))
        throw ConfigError(where + ": band exceeds Nyquist (" +
                          std::to_string(nyquist) + " Hz)");
    }
    std::vector<Band> sorted = resolved;
    std::sort(sorted.begin(), sorted.end(),
              [](const Band& a, const Band& b) { return a.lo_hz < b.lo_hz; });
    for (std::size_t k = 1; k < sorted.size(); ++k)
      if (sorted[k].lo_hz <= sorted[k - 1].hi_hz)
        throw ConfigError("bands: bands must be disjoint");
  }
};

// Record i belongs to class i % num_classes, so classes are balanced.
inline Dataset gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.name = spec.name;
  ds.sample_rate_hz = spec.sample_rate_hz;
  ds.task = spec.regression_targets ? Task::regression(spec.n_channels)
                                    : Task::classification(spec.num_classes);
  ds.records.resize(spec.num_examples);
  const auto bands = spec.effective_bands();
  Rng rng(derive_seed(spec.seed, 0x5f17e71c));
  const double nyquist = spec.sample_rate_hz / 2;
  for (std::size_t i = 0; i < spec.num_examples; ++i) {
    auto& r = ds.records[i];
    r.n_time = spec.n_time;
    r.n_channels = spec.n_channels;
    r.class_id = static_cast<std::uint32_t>(i % spec.num_classes);
    r.samples.assign(spec.n_time * spec.n_channels, 0.0f);
    const Band& band = bands[r.class_id];
    std::vector<double> freqs(spec.n_channels);
    for (std::size_t c = 0; c < spec.n_channels; ++c) {
      const double f = band.lo_hz + (band.hi_hz - band.lo_hz) * uniform01(rng);
      const double phase = 2.0 * M_PI * uniform01(rng);
      freqs[c] = f;
      for (std::size_t t = 0; t < spec.n_time; ++t) {
        const double s =
            std::sin(2.0 * M_PI * f * double(t) / spec.sample_rate_hz + phase);
        r.samples[t * spec.n_channels + c] = static_cast<float>(s);
      }
    }
    if (spec.noise_std > 0)
      for (auto& v : r.samples)
        v += static_cast<float>(spec.noise_std * normal01(rng));
    if (spec.regression_targets) {
      r.target.resize(spec.n_channels);
      for (std::size_t c = 0; c < spec.n_channels; ++c)
        r.target[c] = static_cast<float>(freqs[c] / nyquist);
    }
  }
  return ds;
}

}  // namespace specmae
