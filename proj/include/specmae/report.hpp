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


// Report serialization: JSON documents, aligned plain-text tables and loss
// curves as CSV.

#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "specmae/common.hpp"
#include "specmae/metrics.hpp"
#include "specmae/pipeline.hpp"

namespace specmae {

inline std::string format_number(double v, int precision = 4) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

// Columns are left-aligned and padded to the widest cell.
inline std::string format_table(const std::vector<std::string>& header,
                                const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.size() && c < width.size(); ++c)
      width[c] = std::max(width[c], r[c].size());
  std::string out;
  auto emit = [&](const std::vector<std::string>& cells) {
    std::string line;
    for (std::size_t c = 0; c < width.size(); ++c) {
      const std::string& cell = c < cells.size() ? cells[c] : std::string();
      line += cell;
      if (c + 1 < width.size()) line += std::string(width[c] - cell.size() + 2, ' ');
    }
    out += line + "\n";
  };
  emit(header);
  std::size_t total = 0;
  for (const auto w : width) total += w + 2;
  out += std::string(total - 2, '-') + "\n";
  for (const auto& r : rows) emit(r);
  return out;
}

inline std::string loss_csv(const std::vector<double>& losses) {
  std::string out = "epoch,mean_loss\n";
  char buf[64];
  for (std::size_t e = 0; e < losses.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g\n", e + 1, losses[e]);
    out += buf;
  }
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& s) {
  std::ofstream out(path, std::ios::binary);
  out << s;
  if (!out) throw DataError("cannot write " + path.string());
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  write_text(path, j.dump(2) + "\n");
}

inline std::string eval_table(const EvalReport& r) {
  if (r.task == TaskKind::kRegression)
    return format_table({"metric", "value"},
                        {{"mse", format_number(r.mse, 6)},
                         {"mae", format_number(r.mae, 6)},
                         {"examples", std::to_string(r.num_examples)}});
  std::string out = format_table({"metric", "value"},
                                 {{"acc", format_number(r.acc)},
                                  {"mAP", format_number(r.map)},
                                  {"macro_f1", format_number(r.macro_f1)},
                                  {"examples", std::to_string(r.num_examples)}});
  std::vector<std::vector<std::string>> rows;
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    const auto& m = r.per_class[c];
    rows.push_back({std::to_string(c), format_number(m.precision),
                    format_number(m.recall), format_number(m.f1),
                    format_number(m.ap), std::to_string(m.support)});
  }
  return out + "\n" +
         format_table({"class", "precision", "recall", "f1", "ap", "support"}, rows);
}

inline nlohmann::json to_json(const MeanStd& m) {
  return {{"mean", m.mean}, {"std", m.std}};
}

inline nlohmann::json semi_json(const std::vector<SemiSupervisedRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& rep : r.reports) runs.push_back(to_json(rep));
    out.push_back({{"fraction", r.fraction},
                   {"condition", r.condition},
                   {"acc", to_json(r.acc)},
                   {"runs", runs}});
  }
  return out;
}

inline std::string semi_table(const std::vector<SemiSupervisedRow>& rows) {
  std::vector<std::vector<std::string>> cells;
  for (const auto& r : rows)
    cells.push_back({format_number(r.fraction, 3), r.condition,
                     format_number(r.acc.mean), format_number(r.acc.std),
                     std::to_string(r.reports.size())});
  return format_table({"fraction", "condition", "acc_mean", "acc_std", "seeds"},
                      cells);
}

inline nlohmann::json ablation_json(const std::vector<AblationRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows)
    out.push_back({{"mode", to_string(r.mode)},
                   {"ratio", r.ratio},
                   {"acc", to_json(r.acc)},
                   {"runs", r.accs}});
  return out;
}

inline std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::vector<std::vector<std::string>> cells;
  for (const auto& r : rows)
    cells.push_back({to_string(r.mode), format_number(r.ratio, 2),
                     format_number(r.acc.mean), format_number(r.acc.std),
                     std::to_string(r.accs.size())});
  return format_table({"mode", "ratio", "acc_mean", "acc_std", "seeds"}, cells);
}

}  // namespace specmae
