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

// Checkpoint directory: manifest.json (config, metadata, tensor table with
// byte offsets) and weights.f32 (little-endian f32 payload, manifest order).

#pragma once

#include <bit>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>

#include "json.hpp"
#include "specmae/common.hpp"
#include "specmae/model.hpp"
#include "specmae/optim.hpp"
#include "specmae/signal_io.hpp"

namespace specmae {

struct Checkpoint {
  ModelConfig config;
  Params<float> params;
  nlohmann::json metadata = nlohmann::json::object();
  std::optional<OptState<float>> optimizer;
};

inline constexpr const char* kCheckpointFormat = "specmae-checkpoint";

inline void save_checkpoint(const Checkpoint& ck,
                            const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json tensors = nlohmann::json::array();
  std::ofstream weights(dir / "weights.f32", std::ios::binary);
  std::size_t offset = 0;
  auto emit = [&](const std::string& name, const Tensor<float>& t) {
    tensors.push_back({{"name", name},
                       {"shape", t.shape},
                       {"dtype", "f32"},
                       {"offset", offset},
                       {"size", t.size()}});
    for (const float v : t.values) detail::write_f32(weights, v);
    offset += t.size() * 4;
  };
  for_each_tensor(ck.params, [&](const TensorInfo& info, const Tensor<float>& t) {
    emit(info.name, t);
  });
  nlohmann::json manifest = {{"format", kCheckpointFormat},
                             {"version", 1},
                             {"config", to_json(ck.config)},
                             {"metadata", ck.metadata}};
  if (ck.optimizer) {
    for_each_tensor(ck.optimizer->first_moment,
                    [&](const TensorInfo& info, const Tensor<float>& t) {
                      emit("optimizer.m/" + info.name, t);
                    });
    for_each_tensor(ck.optimizer->second_moment,
                    [&](const TensorInfo& info, const Tensor<float>& t) {
                      emit("optimizer.v/" + info.name, t);
                    });
    manifest["optimizer"] = {{"step", ck.optimizer->step}};
  }
  manifest["tensors"] = tensors;
  if (!weights) throw DataError("write failed: " + (dir / "weights.f32").string());
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << "\n";
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path))
    throw DataError("missing checkpoint manifest: " + manifest_path.string());
  nlohmann::json manifest;
  try {
    std::ifstream(manifest_path) >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest.json: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != kCheckpointFormat)
    throw DataError("manifest.json: not a specmae checkpoint");

  Checkpoint ck;
  update_from_json(ck.config, manifest.at("config"));
  ck.config.validate();
  ck.metadata = manifest.value("metadata", nlohmann::json::object());
  ck.params = zero_params<float>(ck.config);

  const auto payload = detail::read_file(dir / "weights.f32");
  struct Entry {
    std::vector<std::size_t> shape;
    std::size_t offset;
    std::size_t size;
  };
  std::map<std::string, Entry> entries;
  for (const auto& t : manifest.at("tensors")) {
    Entry e{t.at("shape").get<std::vector<std::size_t>>(),
            t.at("offset").get<std::size_t>(), t.at("size").get<std::size_t>()};
    if (t.value("dtype", "") != "f32")
      throw DataError("tensor " + t.at("name").get<std::string>() +
                      ": unsupported dtype");
    if (e.offset + e.size * 4 > payload.size())
      throw DataError("tensor " + t.at("name").get<std::string>() +
                      ": payload length mismatch");
    entries[t.at("name").get<std::string>()] = std::move(e);
  }

  auto fill = [&](const std::string& name, Tensor<float>& t) {
    auto it = entries.find(name);
    if (it == entries.end()) throw DataError("checkpoint is missing tensor " + name);
    if (it->second.shape != t.shape)
      throw DataError("tensor " + name + ": shape " +
                      shape_string(it->second.shape) + " does not match config " +
                      shape_string(t.shape));
    const unsigned char* p = payload.data() + it->second.offset;
    for (std::size_t k = 0; k < t.size(); ++k)
      t.values[k] = std::bit_cast<float>(detail::read_le32(p + 4 * k));
    if (!all_finite<float>(t.span()))
      throw DataError("tensor " + name + ": non-finite values");
    entries.erase(it);
  };
  for_each_tensor(ck.params, [&](const TensorInfo& info, Tensor<float>& t) {
    fill(info.name, t);
  });
  if (manifest.contains("optimizer")) {
    OptState<float> st = OptState<float>::zeros(ck.config);
    st.step = manifest["optimizer"].at("step").get<std::size_t>();
    for_each_tensor(st.first_moment, [&](const TensorInfo& info, Tensor<float>& t) {
      fill("optimizer.m/" + info.name, t);
    });
    for_each_tensor(st.second_moment, [&](const TensorInfo& info, Tensor<float>& t) {
      fill("optimizer.v/" + info.name, t);
    });
    ck.optimizer = std::move(st);
  }
  if (!entries.empty())
    throw DataError("checkpoint has unexpected tensor " + entries.begin()->first);
  return ck;
}

}  // namespace specmae
