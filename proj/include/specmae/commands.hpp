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


// Command-line front end. `run_cli` is the whole program minus main() so the
// test suite can drive it in-process.
//
// Settings resolve as: built-in defaults, then the JSON file given by
// --config, then flags. Everything is validated before any output is
// written.

#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "specmae/checkpoint.hpp"
#include "specmae/common.hpp"
#include "specmae/fourier.hpp"
#include "specmae/metrics.hpp"
#include "specmae/model.hpp"
#include "specmae/pipeline.hpp"
#include "specmae/probes.hpp"
#include "specmae/report.hpp"
#include "specmae/signal_io.hpp"

namespace specmae::cli {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int {
  kOk = 0,
  kUnexpected = 1,
  kConfig = 2,
  kData = 3,
  kNumeric = 4,
};

// ---------------------------------------------------------------------------
// Flag storage. Optional values only override when given.

struct Flags {
  std::string config;
  std::string out;
  std::string data;
  std::string checkpoint;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  bool deterministic = false;

  // gen-data
  std::optional<std::string> name;
  std::optional<std::size_t> num_examples, n_time, channels, classes;
  std::optional<double> sample_rate, noise_std;
  std::optional<std::string> bands;
  bool regression = false;

  // model
  std::optional<std::size_t> patch_size, embed_dim, blocks, heads, ffn_dim;

  // training
  std::optional<std::string> target;
  std::optional<double> mask_ratio;
  std::optional<std::size_t> epochs, batch_size, ft_epochs;
  std::optional<double> lr, dropout, weight_decay;

  // evaluation
  std::optional<double> labels;
  bool random_init = false;
  std::optional<std::size_t> k;

  // runners
  std::optional<std::string> fractions, seeds, ratios, modes;

  // reconstruct
  std::optional<std::size_t> index;
  std::optional<std::uint64_t> mask_seed;
  bool svg = false;
};

// ---------------------------------------------------------------------------
// Config file

inline json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
  static const std::vector<std::string> kTop = {
      "seed", "threads", "data", "out", "checkpoint", "synthetic", "split",
      "model", "pretrain", "finetune", "probe", "semi", "ablate", "reconstruct"};
  for (const auto& [key, _] : j.items())
    if (std::find(kTop.begin(), kTop.end(), key) == kTop.end())
      throw ConfigError("config: unknown key '" + key + "'");
  return j;
}

inline const json& section(const json& root, const char* name,
                           std::initializer_list<const char*> allowed) {
  static const json kEmpty = json::object();
  if (!root.contains(name)) return kEmpty;
  const json& s = root.at(name);
  if (!s.is_object()) throw ConfigError(std::string("config: '") + name + "' must be an object");
  for (const auto& [key, _] : s.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(std::string("config: unknown key '") + name + "." + key + "'");
  }
  return s;
}

template <typename T>
void read_field(const json& s, const char* sec, const char* key, T& dst) {
  if (!s.contains(key)) return;
  try {
    dst = s.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string(sec) + "." + key + ": wrong value type");
  }
}

template <typename T>
void apply(const std::optional<T>& flag, T& dst) {
  if (flag) dst = *flag;
}

inline std::vector<double> parse_doubles(const std::string& s, const char* what) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ConfigError(std::string(what) + ": cannot parse '" + tok + "'");
    }
  }
  if (out.empty()) throw ConfigError(std::string(what) + ": empty list");
  return out;
}

inline std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  for (const double v : parse_doubles(s, "seeds")) {
    if (v < 0 || v != std::floor(v)) throw ConfigError("seeds: must be non-negative integers");
    out.push_back(static_cast<std::uint64_t>(v));
  }
  return out;
}

inline std::vector<Band> parse_bands(const std::string& s) {
  std::vector<Band> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    const auto colon = tok.find(':');
    if (colon == std::string::npos)
      throw ConfigError("bands: expected lo:hi pairs, got '" + tok + "'");
    const auto lo = parse_doubles(tok.substr(0, colon), "bands");
    const auto hi = parse_doubles(tok.substr(colon + 1), "bands");
    out.push_back({lo[0], hi[0]});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Resolved settings

struct Settings {
  json root;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string data, out, checkpoint;
  SyntheticSpec synthetic;
  SplitSpec split;
  ModelConfig model;
  bool seq_len_set = false;
  bool in_channels_set = false;
  PretrainConfig pretrain;
  FinetuneConfig finetune;
  LinearProbeConfig linear;
  std::size_t k = 20;
  std::vector<double> fractions = {0.01, 0.1, 0.2, 0.5};
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::vector<double> ratios = {0.1, 0.2, 0.3, 0.4, 0.6};
  std::vector<TargetMode> modes = {TargetMode::kSpatiotemporal, TargetMode::kFourier,
                                   TargetMode::kInvFourier};
  std::optional<double> labels;
  std::size_t index = 0;
  std::uint64_t mask_seed = 0;
  std::optional<double> reconstruct_ratio;
  bool random_init = false;
  bool svg = false;
};

inline Settings resolve(const Flags& f, const std::string& command) {
  Settings s;
  s.root = load_config_file(f.config);
  const json& root = s.root;
  read_field(root, "config", "seed", s.seed);
  read_field(root, "config", "threads", s.threads);
  read_field(root, "config", "data", s.data);
  read_field(root, "config", "out", s.out);
  read_field(root, "config", "checkpoint", s.checkpoint);
  apply(f.seed, s.seed);
  apply(f.threads, s.threads);
  if (f.deterministic) s.threads = 1;
  if (s.threads < 1) throw ConfigError("threads must be >= 1");
  if (!f.data.empty()) s.data = f.data;
  if (!f.out.empty()) s.out = f.out;
  if (!f.checkpoint.empty()) s.checkpoint = f.checkpoint;

  // synthetic
  {
    const json& j = section(root, "synthetic",
                            {"name", "num_examples", "n_time", "n_channels",
                             "num_classes", "sample_rate_hz", "bands", "noise_std",
                             "seed", "regression_targets"});
    auto& y = s.synthetic;
    y.seed = s.seed;
    read_field(j, "synthetic", "name", y.name);
    read_field(j, "synthetic", "num_examples", y.num_examples);
    read_field(j, "synthetic", "n_time", y.n_time);
    read_field(j, "synthetic", "n_channels", y.n_channels);
    read_field(j, "synthetic", "num_classes", y.num_classes);
    read_field(j, "synthetic", "sample_rate_hz", y.sample_rate_hz);
    read_field(j, "synthetic", "noise_std", y.noise_std);
    read_field(j, "synthetic", "seed", y.seed);
    read_field(j, "synthetic", "regression_targets", y.regression_targets);
    if (j.contains("bands")) {
      std::vector<std::vector<double>> raw;
      read_field(j, "synthetic", "bands", raw);
      y.bands.clear();
      for (const auto& b : raw) {
        if (b.size() != 2) throw ConfigError("synthetic.bands: each band needs [lo, hi]");
        y.bands.push_back({b[0], b[1]});
      }
    }
    apply(f.name, y.name);
    apply(f.num_examples, y.num_examples);
    apply(f.n_time, y.n_time);
    apply(f.channels, y.n_channels);
    apply(f.classes, y.num_classes);
    apply(f.sample_rate, y.sample_rate_hz);
    apply(f.noise_std, y.noise_std);
    if (f.seed) y.seed = *f.seed;
    if (f.bands) y.bands = parse_bands(*f.bands);
    if (f.regression) y.regression_targets = true;
  }

  // split
  {
    const json& j = section(root, "split", {"train_frac", "val_frac_of_train", "seed"});
    read_field(j, "split", "train_frac", s.split.train_frac);
    read_field(j, "split", "val_frac_of_train", s.split.val_frac_of_train);
    read_field(j, "split", "seed", s.split.seed);
  }

  // model
  {
    const json& j = section(root, "model",
                            {"patch_size", "embed_dim", "num_blocks", "num_heads",
                             "ffn_dim", "dropout_rate", "in_channels", "seq_len",
                             "rel_pos_in_block1"});
    update_from_json(s.model, j);
    s.seq_len_set = j.contains("seq_len");
    s.in_channels_set = j.contains("in_channels");
    apply(f.patch_size, s.model.patch_size);
    apply(f.embed_dim, s.model.embed_dim);
    apply(f.blocks, s.model.num_blocks);
    apply(f.heads, s.model.num_heads);
    apply(f.ffn_dim, s.model.ffn_dim);
  }

  // pretrain / finetune: shared flags go to the stage the command trains
  const bool flags_to_pretrain = command == "pretrain" || command == "ablate";
  {
    const json& j = section(root, "pretrain",
                            {"target_mode", "mask_ratio", "epochs", "batch_size",
                             "base_lr", "dropout", "weight_decay", "warmup_frac",
                             "magnitude_weight", "phase_weight"});
    auto& p = s.pretrain;
    p.seed = s.seed;
    std::string mode = to_string(p.mode);
    read_field(j, "pretrain", "target_mode", mode);
    read_field(j, "pretrain", "mask_ratio", p.mask_ratio);
    read_field(j, "pretrain", "epochs", p.epochs);
    read_field(j, "pretrain", "batch_size", p.batch_size);
    read_field(j, "pretrain", "base_lr", p.base_lr);
    read_field(j, "pretrain", "dropout", p.dropout);
    read_field(j, "pretrain", "weight_decay", p.weight_decay);
    read_field(j, "pretrain", "warmup_frac", p.warmup_frac);
    read_field(j, "pretrain", "magnitude_weight", p.fourier_weights.magnitude);
    read_field(j, "pretrain", "phase_weight", p.fourier_weights.phase);
    if (f.target) mode = *f.target;
    p.mode = target_mode_from_string(mode);
    apply(f.mask_ratio, p.mask_ratio);
    if (flags_to_pretrain) {
      apply(f.epochs, p.epochs);
      apply(f.batch_size, p.batch_size);
      apply(f.lr, p.base_lr);
      apply(f.dropout, p.dropout);
      apply(f.weight_decay, p.weight_decay);
    }
  }
  {
    const json& j = section(root, "finetune",
                            {"epochs", "batch_size", "base_lr", "dropout",
                             "weight_decay", "warmup_frac"});
    auto& t = s.finetune;
    t.seed = s.seed;
    read_field(j, "finetune", "epochs", t.epochs);
    read_field(j, "finetune", "batch_size", t.batch_size);
    read_field(j, "finetune", "base_lr", t.base_lr);
    read_field(j, "finetune", "dropout", t.dropout);
    read_field(j, "finetune", "weight_decay", t.weight_decay);
    read_field(j, "finetune", "warmup_frac", t.warmup_frac);
    if (!flags_to_pretrain) {
      apply(f.epochs, t.epochs);
      apply(f.batch_size, t.batch_size);
      apply(f.lr, t.base_lr);
      apply(f.dropout, t.dropout);
      apply(f.weight_decay, t.weight_decay);
    }
    apply(f.ft_epochs, t.epochs);
  }

  // probes and runners
  {
    const json& j = section(root, "probe", {"k", "l2", "learning_rate", "iterations"});
    read_field(j, "probe", "k", s.k);
    read_field(j, "probe", "l2", s.linear.l2);
    read_field(j, "probe", "learning_rate", s.linear.learning_rate);
    read_field(j, "probe", "iterations", s.linear.iterations);
    apply(f.k, s.k);
  }
  {
    const json& j = section(root, "semi", {"fractions", "seeds"});
    read_field(j, "semi", "fractions", s.fractions);
    if (command == "semi") read_field(j, "semi", "seeds", s.seeds);
  }
  {
    const json& j = section(root, "ablate", {"ratios", "modes", "seeds"});
    read_field(j, "ablate", "ratios", s.ratios);
    if (j.contains("modes")) {
      std::vector<std::string> names;
      read_field(j, "ablate", "modes", names);
      s.modes.clear();
      for (const auto& n : names) s.modes.push_back(target_mode_from_string(n));
    }
    if (command == "ablate") read_field(j, "ablate", "seeds", s.seeds);
  }
  if (f.fractions) s.fractions = parse_doubles(*f.fractions, "fractions");
  if (f.ratios) s.ratios = parse_doubles(*f.ratios, "ratios");
  if (f.seeds) s.seeds = parse_seeds(*f.seeds);
  if (f.modes) {
    s.modes.clear();
    std::stringstream ss(*f.modes);
    std::string tok;
    while (std::getline(ss, tok, ',')) s.modes.push_back(target_mode_from_string(tok));
  }
  {
    const json& j = section(root, "reconstruct", {"index", "mask_seed", "mask_ratio"});
    read_field(j, "reconstruct", "index", s.index);
    read_field(j, "reconstruct", "mask_seed", s.mask_seed);
    if (j.contains("mask_ratio")) {
      double r = 0;
      read_field(j, "reconstruct", "mask_ratio", r);
      s.reconstruct_ratio = r;
    }
    apply(f.index, s.index);
    apply(f.mask_seed, s.mask_seed);
    if (command == "reconstruct" && f.mask_ratio) s.reconstruct_ratio = f.mask_ratio;
  }
  s.random_init = f.random_init;
  s.svg = f.svg;
  if (s.random_init && !s.checkpoint.empty())
    throw ConfigError("--random-init and --checkpoint are mutually exclusive");
  s.labels = f.labels;
  if (s.labels && !(*s.labels > 0 && *s.labels <= 1))
    throw ConfigError("labels: fraction must be in (0, 1]");
  for (const double fr : s.fractions)
    if (!(fr > 0 && fr <= 1)) throw ConfigError("fractions: each must be in (0, 1]");
  if (s.seeds.empty()) throw ConfigError("seeds: at least one seed is required");
  return s;
}

// ---------------------------------------------------------------------------
// Shared steps

inline void require(const std::string& value, const char* flag) {
  if (value.empty()) throw ConfigError(std::string("missing required ") + flag);
}

inline Dataset load_data(const Settings& s) {
  require(s.data, "--data");
  auto ds = load_dataset(s.data);
  ds.validate();
  return ds;
}

inline Checkpoint load_ckpt(const Settings& s) {
  require(s.checkpoint, "--checkpoint (or --random-init where supported)");
  return load_checkpoint(s.checkpoint);
}

// Fills in the input shape from the dataset unless the config pinned it, in
// which case a mismatch is an error.
inline ModelConfig model_for(const Settings& s, const Dataset& ds) {
  ModelConfig cfg = s.model;
  if (s.seq_len_set && cfg.seq_len != ds.n_time())
    throw ConfigError("model.seq_len=" + std::to_string(cfg.seq_len) +
                      " does not match dataset n_time=" + std::to_string(ds.n_time()));
  if (s.in_channels_set && cfg.in_channels != ds.n_channels())
    throw ConfigError("model.in_channels=" + std::to_string(cfg.in_channels) +
                      " does not match dataset n_channels=" +
                      std::to_string(ds.n_channels()));
  cfg.seq_len = ds.n_time();
  cfg.in_channels = ds.n_channels();
  cfg.validate();
  return cfg;
}

inline void check_checkpoint_shape(const Checkpoint& ck, const Dataset& ds) {
  if (ck.config.seq_len != ds.n_time() || ck.config.in_channels != ds.n_channels())
    throw ConfigError("checkpoint input shape [" + std::to_string(ck.config.seq_len) +
                      " x " + std::to_string(ck.config.in_channels) +
                      "] does not match dataset [" + std::to_string(ds.n_time()) +
                      " x " + std::to_string(ds.n_channels()) + "]");
}

inline fs::path prepare_out(const Settings& s) {
  require(s.out, "--out");
  const fs::path dir(s.out);
  std::error_code ec;
  if (fs::exists(dir, ec) && !fs::is_directory(dir, ec))
    throw DataError("output path exists and is not a directory: " + dir.string());
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

inline RunOptions run_options(const Settings& s, std::ostream& log) {
  RunOptions opt;
  opt.threads = s.threads;
  opt.log = [&log](const std::string& m) { log << m << "\n"; };
  return opt;
}

inline json report_header(const char* command, const Settings& s) {
  return {{"command", command}, {"seed", s.seed}};
}

// ---------------------------------------------------------------------------
// Commands

inline int cmd_gen_data(const Settings& s, std::ostream& out) {
  s.synthetic.validate();
  const fs::path dir = prepare_out(s);
  const Dataset ds = gen_synthetic(s.synthetic);
  save_dataset(ds, dir);
  out << "wrote " << ds.size() << " records [" << ds.n_time() << " x "
      << ds.n_channels() << "] "
      << (ds.task.is_classification()
              ? std::to_string(ds.task.num_classes) + " classes"
              : "regression dim " + std::to_string(ds.task.target_dim))
      << " to " << dir.string() << "\n";
  return kOk;
}

inline int cmd_pretrain(const Settings& s, std::ostream& out, std::ostream& log) {
  s.pretrain.validate();
  const Dataset ds = load_data(s);
  const ModelConfig cfg = model_for(s, ds);
  const Splits parts = split(ds, s.split);
  const fs::path dir = prepare_out(s);
  auto result = pretrain(parts.train, cfg, s.pretrain, run_options(s, log));
  save_checkpoint(result.checkpoint, dir);
  write_text(dir / "loss.csv", loss_csv(result.epoch_losses));
  out << "pretrained " << to_string(s.pretrain.mode) << " on " << parts.train.size()
      << " records, final loss " << result.epoch_losses.back() << ", checkpoint "
      << dir.string() << "\n";
  return kOk;
}

inline Dataset maybe_subsample(const Settings& s, const Dataset& train) {
  return s.labels ? subsample_labels(train, *s.labels, s.seed) : train;
}

inline int cmd_finetune(const Settings& s, std::ostream& out, std::ostream& log) {
  s.finetune.validate();
  const Dataset ds = load_data(s);
  std::optional<Checkpoint> ck;
  if (!s.random_init) {
    ck = load_ckpt(s);
    check_checkpoint_shape(*ck, ds);
  }
  const ModelConfig cfg = ck ? ck->config : model_for(s, ds);
  const Splits parts = split(ds, s.split);
  const Dataset train = maybe_subsample(s, parts.train);
  const fs::path dir = prepare_out(s);
  auto r = finetune(ck ? &*ck : nullptr, train, parts.test, cfg, s.finetune,
                    run_options(s, log));
  save_checkpoint(r.checkpoint, dir / "model");
  write_text(dir / "loss.csv", loss_csv(r.epoch_losses));
  json j = report_header("finetune", s);
  j["init"] = ck ? "checkpoint" : "random";
  j["labels_fraction"] = s.labels.value_or(1.0);
  j["train_examples"] = train.size();
  j["report"] = to_json(r.report);
  write_json(dir / "report.json", j);
  const std::string table = eval_table(r.report);
  write_text(dir / "report.txt", table);
  out << table;
  return kOk;
}

inline int cmd_probe(const Settings& s, std::ostream& out) {
  const Dataset ds = load_data(s);
  if (!ds.task.is_classification())
    throw ConfigError("probe: requires a classification dataset");
  std::optional<Checkpoint> ck;
  if (!s.random_init) {
    ck = load_ckpt(s);
    check_checkpoint_shape(*ck, ds);
  }
  const ModelConfig cfg = ck ? ck->config : model_for(s, ds);
  const Params<float> params = ck ? ck->params : init_params<float>(cfg, s.seed);
  const Splits parts = split(ds, s.split);
  const Dataset train = maybe_subsample(s, parts.train);
  if (s.k < 1 || s.k > train.size())
    throw ConfigError("probe.k must be in [1, " + std::to_string(train.size()) + "]");
  const fs::path dir = prepare_out(s);
  const auto ftr = extract_features(cfg, params, train);
  const auto fte = extract_features(cfg, params, parts.test);
  const double knn = knn_probe(ftr, fte, s.k);
  auto lin = linear_probe(ftr, fte, s.linear);
  lin.report.seed = s.seed;
  json j = report_header("probe", s);
  j["init"] = ck ? "checkpoint" : "random";
  j["labels_fraction"] = s.labels.value_or(1.0);
  j["train_examples"] = train.size();
  j["knn"] = {{"k", s.k}, {"acc", knn}};
  j["linear"] = {{"mAP", lin.map}, {"report", to_json(lin.report)}};
  write_json(dir / "report.json", j);
  const std::string table =
      format_table({"probe", "metric", "value"},
                   {{"knn (k=" + std::to_string(s.k) + ")", "acc", format_number(knn)},
                    {"linear", "mAP", format_number(lin.map)}});
  write_text(dir / "report.txt", table);
  out << table;
  return kOk;
}

inline int cmd_semi(const Settings& s, std::ostream& out, std::ostream& log) {
  s.finetune.validate();
  const Dataset ds = load_data(s);
  const Checkpoint ck = load_ckpt(s);
  check_checkpoint_shape(ck, ds);
  const Splits parts = split(ds, s.split);
  const fs::path dir = prepare_out(s);
  const auto rows = run_semi_supervised(ck, parts.train, parts.test, s.fractions,
                                        s.seeds, s.finetune, run_options(s, log));
  json j = report_header("semi", s);
  j["rows"] = semi_json(rows);
  write_json(dir / "report.json", j);
  const std::string table = semi_table(rows);
  write_text(dir / "report.txt", table);
  out << table;
  return kOk;
}

inline int cmd_ablate(const Settings& s, std::ostream& out, std::ostream& log) {
  s.pretrain.validate();
  s.finetune.validate();
  for (const double r : s.ratios)
    if (!(r > 0 && r < 1)) throw ConfigError("ratios: each must be in (0, 1)");
  const Dataset ds = load_data(s);
  const ModelConfig cfg = model_for(s, ds);
  const Splits parts = split(ds, s.split);
  const fs::path dir = prepare_out(s);
  const auto rows = run_mask_ablation(parts.train, parts.test, cfg, s.pretrain,
                                      s.finetune, s.ratios, s.modes, s.seeds,
                                      run_options(s, log));
  json j = report_header("ablate", s);
  j["rows"] = ablation_json(rows);
  write_json(dir / "report.json", j);
  const std::string table = ablation_table(rows);
  write_text(dir / "report.txt", table);
  out << table;
  return kOk;
}

inline int cmd_transfer(const Settings& s, std::ostream& out, std::ostream& log) {
  s.finetune.validate();
  const Dataset ds = load_data(s);
  const Checkpoint ck = load_ckpt(s);
  const Splits parts = split(ds, s.split);
  check_checkpoint_shape(ck, ds);
  const fs::path dir = prepare_out(s);
  auto r = run_transfer(ck, parts.train, parts.test, s.finetune, run_options(s, log));
  save_checkpoint(r.checkpoint, dir / "model");
  write_text(dir / "loss.csv", loss_csv(r.epoch_losses));
  json j = report_header("transfer", s);
  j["source_stage"] = ck.metadata.value("stage", "unknown");
  j["report"] = to_json(r.report);
  write_json(dir / "report.json", j);
  const std::string table = eval_table(r.report);
  write_text(dir / "report.txt", table);
  out << table;
  return kOk;
}

// Two-panel line plot: channel 0 in time, magnitude of channel 0 by bin.
inline std::string reconstruction_svg(std::span<const double> original,
                                      std::span<const double> recon,
                                      std::span<const double> true_mag,
                                      std::span<const double> pred_mag) {
  const double W = 800, H = 220, pad = 20;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\""
      << 2 * H << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  auto panel = [&](std::span<const double> a, std::span<const double> b, double top,
                   const char* title) {
    double lo = 0, hi = 0;
    for (const auto* v : {&a, &b})
      for (const double x : *v) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
      }
    if (hi - lo < 1e-12) hi = lo + 1;
    auto line = [&](std::span<const double> v, const char* color) {
      svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1\" points=\"";
      for (std::size_t i = 0; i < v.size(); ++i) {
        const double x = pad + (W - 2 * pad) * double(i) / double(std::max<std::size_t>(1, v.size() - 1));
        const double y = top + pad + (H - 2 * pad) * (1 - (v[i] - lo) / (hi - lo));
        svg << x << "," << y << " ";
      }
      svg << "\"/>\n";
    };
    svg << "<text x=\"" << pad << "\" y=\"" << top + 14 << "\" font-size=\"12\">" << title
        << " (black: original, red: predicted)</text>\n";
    line(a, "black");
    line(b, "red");
  };
  panel(original, recon, 0, "channel 0, time domain");
  panel(true_mag, pred_mag, H, "channel 0, magnitude spectrum");
  svg << "</svg>\n";
  return svg.str();
}

inline int cmd_reconstruct(const Settings& s, std::ostream& out) {
  const Dataset ds = load_data(s);
  const Checkpoint ck = load_ckpt(s);
  check_checkpoint_shape(ck, ds);
  if (ck.config.decoder != DecoderKind::kFourier)
    throw ConfigError("reconstruct: checkpoint has no Fourier decoder (pre-train with "
                      "--target fourier or inv-fourier)");
  if (s.index >= ds.size())
    throw ConfigError("reconstruct: index " + std::to_string(s.index) +
                      " out of range for " + std::to_string(ds.size()) + " records");
  double ratio = 0.3;
  if (ck.metadata.contains("pretrain"))
    ratio = ck.metadata["pretrain"].value("mask_ratio", ratio);
  if (s.reconstruct_ratio) ratio = *s.reconstruct_ratio;
  if (!(ratio >= 0 && ratio < 1)) throw ConfigError("reconstruct: mask_ratio must be in [0, 1)");
  const fs::path dir = prepare_out(s);

  const ModelConfig& cfg = ck.config;
  const auto& rec = ds.records[s.index];
  const auto x = pad_signal<double, float>(
      cfg, standardize(rec.samples, rec.n_time, rec.n_channels));
  const auto params = cast_params<double>(ck.params, cfg);
  Rng rng(derive_seed(s.mask_seed, 0x3a5c));
  const MaskPlan plan = sample_mask(cfg.num_patches(), ratio, rng);
  EncoderTrace<double> tr;
  encoder_forward<double>(cfg, params, x, plan, {}, tr);
  const auto fd = decode_fourier<double>(cfg, params, tr.output);
  const DftPlan<double> dft(cfg.padded_len());
  const auto xhat = denoise_reconstruct(dft, fd.polar);
  const auto truth = to_polar(rdft<double>(dft, x, cfg.in_channels));

  const std::size_t n = cfg.padded_len(), C = cfg.in_channels, bins = cfg.spectrum_bins();
  std::ostringstream sig, spec;
  sig.precision(9);
  spec.precision(9);
  sig << "t";
  for (std::size_t c = 0; c < C; ++c) sig << ",original_" << c << ",reconstructed_" << c;
  sig << "\n";
  double err = 0, energy = 0;
  for (std::size_t t = 0; t < n; ++t) {
    sig << t;
    for (std::size_t c = 0; c < C; ++c) {
      const double a = x[t * C + c], b = xhat[t * C + c];
      sig << "," << a << "," << b;
      err += (a - b) * (a - b);
      energy += a * a;
    }
    sig << "\n";
  }
  spec << "bin";
  for (std::size_t c = 0; c < C; ++c)
    spec << ",true_mag_" << c << ",pred_mag_" << c << ",true_phase_" << c << ",pred_phase_" << c;
  spec << "\n";
  for (std::size_t m = 0; m < bins; ++m) {
    spec << m;
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t k = m * C + c;
      spec << "," << truth.magnitude[k] << "," << fd.polar.magnitude[k] << ","
           << truth.phase[k] << "," << fd.polar.phase[k];
    }
    spec << "\n";
  }
  write_text(dir / "signal.csv", sig.str());
  write_text(dir / "spectrum.csv", spec.str());
  if (s.svg) {
    std::vector<double> o(n), r(n), tm(bins), pm(bins);
    for (std::size_t t = 0; t < n; ++t) {
      o[t] = x[t * C];
      r[t] = xhat[t * C];
    }
    for (std::size_t m = 0; m < bins; ++m) {
      tm[m] = truth.magnitude[m * C];
      pm[m] = fd.polar.magnitude[m * C];
    }
    write_text(dir / "reconstruction.svg", reconstruction_svg(o, r, tm, pm));
  }
  out << "record " << s.index << ": masked " << plan.size() << "/" << cfg.num_patches()
      << " patches, reconstruction mse " << err / double(n * C) << ", signal energy "
      << energy / double(n * C) << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// Entry point

inline void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "JSON config file (flags override it)");
  sub->add_option("--seed", f.seed, "Seed for every random stream");
  sub->add_option("--out", f.out, "Output directory");
  sub->add_flag("--deterministic", f.deterministic, "Force sequential execution");
  sub->add_option("--threads", f.threads, "Gradient worker threads");
}

inline void add_model(CLI::App* sub, Flags& f) {
  sub->add_option("--patch-size", f.patch_size);
  sub->add_option("--embed-dim", f.embed_dim);
  sub->add_option("--blocks", f.blocks);
  sub->add_option("--heads", f.heads);
  sub->add_option("--ffn-dim", f.ffn_dim);
}

inline void add_training(CLI::App* sub, Flags& f) {
  sub->add_option("--epochs", f.epochs);
  sub->add_option("--batch-size", f.batch_size);
  sub->add_option("--lr", f.lr, "Base learning rate");
  sub->add_option("--dropout", f.dropout);
  sub->add_option("--weight-decay", f.weight_decay);
}

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"Masked Fourier-spectrum pre-training for multichannel signals", "specmae"};
  app.require_subcommand(1);
  Flags f;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic band-classification dataset");
  add_common(gen, f);
  gen->add_option("--name", f.name);
  gen->add_option("--num-examples", f.num_examples);
  gen->add_option("--n-time", f.n_time);
  gen->add_option("--channels", f.channels);
  gen->add_option("--classes", f.classes);
  gen->add_option("--sample-rate", f.sample_rate);
  gen->add_option("--noise-std", f.noise_std);
  gen->add_option("--bands", f.bands, "Comma-separated lo:hi pairs in Hz");
  gen->add_flag("--regression", f.regression, "Emit per-channel frequency targets");

  auto* pre = app.add_subcommand("pretrain", "Masked pre-training");
  add_common(pre, f);
  add_model(pre, f);
  add_training(pre, f);
  pre->add_option("--data", f.data, "Dataset directory");
  pre->add_option("--target", f.target, "spatio|fourier|inv-fourier");
  pre->add_option("--mask-ratio", f.mask_ratio);

  auto* ft = app.add_subcommand("finetune", "Supervised fine-tuning and test report");
  add_common(ft, f);
  add_model(ft, f);
  add_training(ft, f);
  ft->add_option("--data", f.data);
  ft->add_option("--checkpoint", f.checkpoint);
  ft->add_flag("--random-init", f.random_init, "Train from random weights");
  ft->add_option("--labels", f.labels, "Fraction of training labels to keep");

  auto* probe = app.add_subcommand("probe", "kNN and linear probes on frozen features");
  add_common(probe, f);
  add_model(probe, f);
  probe->add_option("--data", f.data);
  probe->add_option("--checkpoint", f.checkpoint);
  probe->add_flag("--random-init", f.random_init);
  probe->add_option("--labels", f.labels);
  probe->add_option("--k", f.k, "Neighbours for the kNN probe");

  auto* ablate = app.add_subcommand("ablate", "Masking ratio x target grid");
  add_common(ablate, f);
  add_model(ablate, f);
  add_training(ablate, f);
  ablate->add_option("--data", f.data);
  ablate->add_option("--ratios", f.ratios);
  ablate->add_option("--modes", f.modes);
  ablate->add_option("--seeds", f.seeds);
  ablate->add_option("--ft-epochs", f.ft_epochs, "Fine-tuning epochs per cell");

  auto* semi = app.add_subcommand("semi", "Label-fraction sweep against random init");
  add_common(semi, f);
  add_training(semi, f);
  semi->add_option("--data", f.data);
  semi->add_option("--checkpoint", f.checkpoint);
  semi->add_option("--fractions", f.fractions);
  semi->add_option("--seeds", f.seeds);

  auto* transfer = app.add_subcommand("transfer", "Fine-tune a checkpoint on another task");
  add_common(transfer, f);
  add_training(transfer, f);
  transfer->add_option("--data", f.data, "Destination dataset directory");
  transfer->add_option("--checkpoint", f.checkpoint, "Source checkpoint");

  auto* recon = app.add_subcommand("reconstruct", "Export a masked reconstruction");
  add_common(recon, f);
  recon->add_option("--data", f.data);
  recon->add_option("--checkpoint", f.checkpoint);
  recon->add_option("--index", f.index, "Record index");
  recon->add_option("--mask-seed", f.mask_seed);
  recon->add_option("--mask-ratio", f.mask_ratio);
  recon->add_flag("--svg", f.svg, "Also write reconstruction.svg");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kConfig;
  }

  try {
    const std::string command = app.get_subcommands().front()->get_name();
    const Settings s = resolve(f, command);
    if (command == "gen-data") return cmd_gen_data(s, out);
    if (command == "pretrain") return cmd_pretrain(s, out, err);
    if (command == "finetune") return cmd_finetune(s, out, err);
    if (command == "probe") return cmd_probe(s, out);
    if (command == "semi") return cmd_semi(s, out, err);
    if (command == "ablate") return cmd_ablate(s, out, err);
    if (command == "transfer") return cmd_transfer(s, out, err);
    return cmd_reconstruct(s, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const nlohmann::json::exception& e) {
    err << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUnexpected;
  }
}

}  // namespace specmae::cli
