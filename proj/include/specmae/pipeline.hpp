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

// Masked pre-training with spatiotemporal / Fourier / inverse-Fourier
// targets, supervised fine-tuning, frozen-feature probes, and the
// semi-supervised, transfer and masking-ratio experiment runners.

#pragma once

#include <cstdio>
#include <exception>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "specmae/checkpoint.hpp"
#include "specmae/common.hpp"
#include "specmae/fourier.hpp"
#include "specmae/metrics.hpp"
#include "specmae/model.hpp"
#include "specmae/optim.hpp"
#include "specmae/probes.hpp"
#include "specmae/signal_io.hpp"

namespace specmae {

enum class TargetMode { kSpatiotemporal, kFourier, kInvFourier };

inline std::string to_string(TargetMode m) {
  switch (m) {
    case TargetMode::kSpatiotemporal: return "spatiotemporal";
    case TargetMode::kFourier: return "fourier";
    default: return "inv_fourier";
  }
}

// Accepts both the CLI spellings (spatio, inv-fourier) and the canonical
// names.
inline TargetMode target_mode_from_string(const std::string& s) {
  if (s == "spatio" || s == "spatiotemporal") return TargetMode::kSpatiotemporal;
  if (s == "fourier") return TargetMode::kFourier;
  if (s == "inv-fourier" || s == "inv_fourier") return TargetMode::kInvFourier;
  throw ConfigError("unknown target mode '" + s +
                    "' (expected spatio|fourier|inv-fourier)");
}

struct LossWeights {
  double magnitude = 1.0;
  double phase = 1.0;
};

struct PretrainConfig {
  TargetMode mode = TargetMode::kInvFourier;
  double mask_ratio = 0.3;
  std::size_t epochs = 50;
  std::size_t batch_size = 256;
  double base_lr = 3e-3;
  double dropout = 0.1;
  double weight_decay = 1e-2;
  double warmup_frac = 0.05;
  LossWeights fourier_weights;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(mask_ratio > 0 && mask_ratio < 1))
      throw ConfigError("pretrain.mask_ratio must be in (0, 1)");
    if (epochs < 1) throw ConfigError("pretrain.epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("pretrain.batch_size must be >= 1");
    if (!(base_lr > 0)) throw ConfigError("pretrain.base_lr must be > 0");
    if (!(dropout >= 0 && dropout < 1))
      throw ConfigError("pretrain.dropout must be in [0, 1)");
    if (!(warmup_frac >= 0 && warmup_frac < 1))
      throw ConfigError("pretrain.warmup_frac must be in [0, 1)");
    if (!(fourier_weights.magnitude >= 0 && fourier_weights.phase >= 0))
      throw ConfigError("pretrain.fourier_weights must be >= 0");
  }
};

struct FinetuneConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 128;
  double base_lr = 3e-4;
  double dropout = 0.2;
  double weight_decay = 1e-2;
  double warmup_frac = 0.05;
  std::uint64_t seed = 0;
  // When set, the training data must carry exactly this task.
  std::optional<Task> task;

  void validate() const {
    if (epochs < 1) throw ConfigError("finetune.epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("finetune.batch_size must be >= 1");
    if (!(base_lr > 0)) throw ConfigError("finetune.base_lr must be > 0");
    if (!(dropout >= 0 && dropout < 1))
      throw ConfigError("finetune.dropout must be in [0, 1)");
    if (!(warmup_frac >= 0 && warmup_frac < 1))
      throw ConfigError("finetune.warmup_frac must be in [0, 1)");
  }
};

struct RunOptions {
  // Worker threads for gradient shards. Results do not depend on this value:
  // shards are fixed and reduced in order.
  std::size_t threads = 1;
  std::function<void(const std::string&)> log;

  void info(const std::string& msg) const {
    if (log) log(msg);
  }
};

inline constexpr std::size_t kGradShards = 4;

inline std::string config_hash(const nlohmann::json& j) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const char c : j.dump()) h = (h ^ std::uint8_t(c)) * 1099511628211ULL;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline nlohmann::json to_json(const PretrainConfig& c) {
  return {{"target_mode", to_string(c.mode)},
          {"mask_ratio", c.mask_ratio},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"base_lr", c.base_lr},
          {"dropout", c.dropout},
          {"weight_decay", c.weight_decay},
          {"warmup_frac", c.warmup_frac},
          {"magnitude_weight", c.fourier_weights.magnitude},
          {"phase_weight", c.fourier_weights.phase},
          {"seed", c.seed}};
}

inline nlohmann::json to_json(const FinetuneConfig& c) {
  return {{"epochs", c.epochs},           {"batch_size", c.batch_size},
          {"base_lr", c.base_lr},         {"dropout", c.dropout},
          {"weight_decay", c.weight_decay}, {"warmup_frac", c.warmup_frac},
          {"seed", c.seed}};
}

// ---------------------------------------------------------------------------
// Loss functions on decoder outputs. Each returns the loss and, when the
// gradient spans are non-empty, writes dL/d(prediction) into them.

// Mean squared error over masked patches only: [|plan| x P*C] predictions
// against the matching rows of the padded standardized signal.
template <typename T>
T spatiotemporal_loss(const ModelConfig& cfg, std::span<const T> pred,
                      std::span<const T> padded, const MaskPlan& plan,
                      std::span<T> dpred = {}) {
  const std::size_t W = cfg.patch_width();
  const std::size_t count = plan.size() * W;
  if (pred.size() != count)
    throw DataError("spatiotemporal_loss: prediction shape mismatch");
  T loss = 0;
  for (std::size_t k = 0; k < plan.size(); ++k) {
    const T* target = padded.data() + plan.masked[k] * W;
    for (std::size_t e = 0; e < W; ++e) {
      const T diff = pred[k * W + e] - target[e];
      loss += diff * diff;
      if (!dpred.empty()) dpred[k * W + e] = T(2) * diff / T(count);
    }
  }
  return loss / T(count);
}

template <typename T>
T fourier_loss(const PolarSpectrum<T>& pred, const PolarSpectrum<T>& target,
               const LossWeights& w, std::span<T> dmag = {},
               std::span<T> dphase = {}) {
  const std::size_t n = pred.magnitude.size();
  if (target.magnitude.size() != n || pred.phase.size() != n)
    throw DataError("fourier_loss: spectrum shape mismatch");
  T mag = 0, ph = 0;
  const T wm = T(w.magnitude), wp = T(w.phase);
  for (std::size_t k = 0; k < n; ++k) {
    const T dm = pred.magnitude[k] - target.magnitude[k];
    const T dp = pred.phase[k] - target.phase[k];
    mag += dm * dm;
    ph += dp * dp;
    if (!dmag.empty()) dmag[k] = wm * T(2) * dm / T(n);
    if (!dphase.empty()) dphase[k] = wp * T(2) * dp / T(n);
  }
  return wm * mag / T(n) + wp * ph / T(n);
}

// MSE between denoise_reconstruct(pred) and the padded original signal.
template <typename T>
T inv_fourier_loss(const DftPlan<T>& plan, const PolarSpectrum<T>& pred,
                   std::span<const T> padded, std::span<T> dmag = {},
                   std::span<T> dphase = {}) {
  const auto recon = denoise_reconstruct(plan, pred);
  if (recon.size() != padded.size())
    throw DataError("inv_fourier_loss: signal shape mismatch");
  const std::size_t n = recon.size();
  T loss = 0;
  std::vector<T> dx(n);
  for (std::size_t k = 0; k < n; ++k) {
    const T diff = recon[k] - padded[k];
    loss += diff * diff;
    dx[k] = T(2) * diff / T(n);
  }
  if (!dmag.empty()) {
    std::fill(dmag.begin(), dmag.end(), T(0));
    std::fill(dphase.begin(), dphase.end(), T(0));
    denoise_reconstruct_vjp<T>(plan, pred, dx, dmag, dphase);
  }
  return loss / T(n);
}

// ---------------------------------------------------------------------------
// Per-example forward (+ optional backward)

template <typename T>
struct PretrainInputs {
  const ModelConfig* cfg;
  const DftPlan<T>* dft;
  TargetMode mode;
  LossWeights weights;
};

// Loss of one example; when `grads` is non-null, adds scale * dL/dtheta.
// `target` is the polar spectrum of `padded` (required for kFourier).
template <typename T>
T pretrain_example(const PretrainInputs<T>& in, const Params<T>& p,
                   std::span<const T> padded, const PolarSpectrum<T>* target,
                   const MaskPlan& plan, const DropoutContext& dc,
                   EncoderTrace<T>& tr, Params<T>* grads, T scale = T(1)) {
  const ModelConfig& cfg = *in.cfg;
  encoder_forward<T>(cfg, p, padded, plan, dc, tr);
  const std::span<const T> out = tr.output;
  std::vector<T> dout;
  if (grads) dout.assign(out.size(), T(0));
  T loss = 0;

  if (in.mode == TargetMode::kSpatiotemporal) {
    const auto pred = decode_spatiotemporal<T>(cfg, p, out, plan);
    std::vector<T> dpred(grads ? pred.size() : 0);
    loss = spatiotemporal_loss<T>(cfg, pred, padded, plan, dpred);
    if (grads) {
      for (auto& v : dpred) v *= scale;
      decode_spatiotemporal_vjp<T>(cfg, p, out, plan, dpred, *grads, dout);
    }
  } else {
    const auto fd = decode_fourier<T>(cfg, p, out);
    const std::size_t nb = fd.polar.magnitude.size();
    std::vector<T> dmag(grads ? nb : 0), dphase(grads ? nb : 0);
    if (in.mode == TargetMode::kFourier) {
      if (!target) throw ConfigError("pretrain_example: Fourier target missing");
      loss = fourier_loss<T>(fd.polar, *target, in.weights, dmag, dphase);
    } else {
      loss = inv_fourier_loss<T>(*in.dft, fd.polar, padded, dmag, dphase);
    }
    if (grads) {
      for (auto& v : dmag) v *= scale;
      for (auto& v : dphase) v *= scale;
      decode_fourier_vjp<T>(cfg, p, out, fd, dmag, dphase, *grads, dout);
    }
  }
  if (grads) encoder_backward<T>(cfg, p, tr, dout, *grads);
  return loss;
}

// Label of one supervised example.
struct SupervisedTarget {
  std::uint32_t class_id = 0;
  std::span<const float> values;  // regression
};

// Cross-entropy on head_classify or MSE on head_regress, no masking.
// Writes class probabilities / regression outputs into `outputs` if given.
template <typename T>
T supervised_example(const ModelConfig& cfg, const Params<T>& p,
                     std::span<const T> padded, const SupervisedTarget& y,
                     const DropoutContext& dc, EncoderTrace<T>& tr,
                     Params<T>* grads, T scale = T(1),
                     std::span<float> outputs = {}) {
  static const MaskPlan kNoMask{};
  encoder_forward<T>(cfg, p, padded, kNoMask, dc, tr);
  const std::span<const T> out = tr.output;
  std::vector<T> dout;
  if (grads) dout.assign(out.size(), T(0));
  T loss = 0;
  if (cfg.num_classes > 0) {
    auto probs = head_classify<T>(cfg, p, out);
    kernels::softmax<T>(probs);
    loss = -std::log(std::max(probs[y.class_id], T(1e-30)));
    for (std::size_t c = 0; c < probs.size() && c < outputs.size(); ++c)
      outputs[c] = static_cast<float>(probs[c]);
    if (grads) {
      std::vector<T> dlogit(probs);
      dlogit[y.class_id] -= T(1);
      for (auto& v : dlogit) v *= scale;
      head_vjp<T>(cfg.embed_dim, out, p.class_weight, cfg.num_classes, dlogit,
                  grads->class_weight, grads->class_bias, dout);
    }
  } else {
    const auto pred = head_regress<T>(cfg, p, out);
    const std::size_t D = pred.size();
    std::vector<T> dpred(D);
    for (std::size_t k = 0; k < D; ++k) {
      const T diff = pred[k] - T(y.values[k]);
      loss += diff * diff;
      dpred[k] = scale * T(2) * diff / T(D);
      if (k < outputs.size()) outputs[k] = static_cast<float>(pred[k]);
    }
    loss /= T(D);
    if (grads)
      head_vjp<T>(cfg.embed_dim, out, p.regress_weight, D, dpred,
                  grads->regress_weight, grads->regress_bias, dout);
  }
  if (grads) encoder_backward<T>(cfg, p, tr, dout, *grads);
  return loss;
}

// ---------------------------------------------------------------------------
// Batch-level losses (mean over examples), dropout off.

template <typename T>
T loss_spatiotemporal(const ModelConfig& cfg, const Params<T>& p,
                      const std::vector<std::vector<T>>& batch,
                      const std::vector<MaskPlan>& plans) {
  const DftPlan<T> dft(cfg.padded_len());
  const PretrainInputs<T> in{&cfg, &dft, TargetMode::kSpatiotemporal, {}};
  EncoderTrace<T> tr;
  T total = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (plans[i].empty())
      throw ConfigError("loss_spatiotemporal: empty mask plan for example " +
                        std::to_string(i));
    total += pretrain_example<T>(in, p, batch[i], nullptr, plans[i], {}, tr, nullptr);
  }
  return total / T(batch.size());
}

template <typename T>
T loss_fourier(const ModelConfig& cfg, const Params<T>& p,
               const std::vector<std::vector<T>>& batch,
               const std::vector<MaskPlan>& plans, const LossWeights& w = {}) {
  const DftPlan<T> dft(cfg.padded_len());
  const PretrainInputs<T> in{&cfg, &dft, TargetMode::kFourier, w};
  EncoderTrace<T> tr;
  T total = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto target = to_polar(rdft<T>(dft, batch[i], cfg.in_channels));
    total += pretrain_example<T>(in, p, batch[i], &target, plans[i], {}, tr, nullptr);
  }
  return total / T(batch.size());
}

template <typename T>
T loss_inv_fourier(const ModelConfig& cfg, const Params<T>& p,
                   const std::vector<std::vector<T>>& batch,
                   const std::vector<MaskPlan>& plans) {
  const DftPlan<T> dft(cfg.padded_len());
  const PretrainInputs<T> in{&cfg, &dft, TargetMode::kInvFourier, {}};
  EncoderTrace<T> tr;
  T total = 0;
  for (std::size_t i = 0; i < batch.size(); ++i)
    total += pretrain_example<T>(in, p, batch[i], nullptr, plans[i], {}, tr, nullptr);
  return total / T(batch.size());
}

// ---------------------------------------------------------------------------
// Training loop

namespace detail {

template <typename T>
void zero_grads(Params<T>& g) {
  for_each_tensor(g, [](const TensorInfo&, Tensor<T>& t) { t.fill(T(0)); });
}

template <typename T>
void add_grads(Params<T>& dst, const Params<T>& src) {
  auto d = tensor_list(dst);
  const auto s = tensor_list(src);
  for (std::size_t i = 0; i < d.size(); ++i) {
    auto& dv = d[i].tensor->values;
    const auto& sv = s[i].tensor->values;
    for (std::size_t k = 0; k < dv.size(); ++k) dv[k] += sv[k];
  }
}

// Standardized, right-zero-padded inputs for every record.
inline std::vector<std::vector<float>> prepare_inputs(const ModelConfig& cfg,
                                                      const Dataset& ds) {
  std::vector<std::vector<float>> out;
  out.reserve(ds.size());
  for (const auto& r : ds.records) {
    const auto z = standardize(r.samples, r.n_time, r.n_channels);
    out.push_back(pad_signal<float, float>(cfg, z));
  }
  return out;
}

inline void check_shape(const ModelConfig& cfg, const Dataset& ds,
                        const char* what) {
  if (ds.empty()) throw DataError(std::string(what) + ": dataset is empty");
  if (ds.n_time() != cfg.seq_len || ds.n_channels() != cfg.in_channels)
    throw ConfigError(std::string(what) + ": dataset shape [" +
                      std::to_string(ds.n_time()) + " x " +
                      std::to_string(ds.n_channels()) +
                      "] does not match model config [" +
                      std::to_string(cfg.seq_len) + " x " +
                      std::to_string(cfg.in_channels) + "]");
}

struct LoopSettings {
  std::size_t epochs;
  std::size_t batch_size;
  double base_lr;
  double weight_decay;
  double warmup_frac;
  std::uint64_t seed;
};

// ExampleFn: (epoch, record, grads, scale, trace) -> loss
template <typename ExampleFn>
std::vector<double> train_loop(const ModelConfig& cfg, Params<float>& params,
                               OptState<float>& state, std::size_t n,
                               const LoopSettings& s, ExampleFn&& example,
                               const RunOptions& opt) {
  const std::size_t steps_per_epoch = (n + s.batch_size - 1) / s.batch_size;
  AdamWConfig adam;
  adam.base_lr = s.base_lr;
  adam.weight_decay = s.weight_decay;
  adam.total_steps = s.epochs * steps_per_epoch;
  adam.warmup_steps =
      static_cast<std::size_t>(std::floor(s.warmup_frac * double(adam.total_steps)));
  adam.validate();

  Params<float> grads = zero_params<float>(cfg);
  std::vector<Params<float>> shard_grads(kGradShards, zero_params<float>(cfg));
  std::vector<EncoderTrace<float>> traces(kGradShards);
  std::vector<double> losses(s.batch_size);
  std::vector<std::size_t> order(n);
  std::vector<double> epoch_losses;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < s.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(s.seed, 0x5f1ff1e, epoch));
    shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_sum = 0;
    for (std::size_t start = 0; start < n; start += s.batch_size, ++step) {
      const std::size_t bsz = std::min(s.batch_size, n - start);
      const float scale = 1.0f / float(bsz);
      auto run_shard = [&](std::size_t sh) {
        const std::size_t lo = sh * bsz / kGradShards;
        const std::size_t hi = (sh + 1) * bsz / kGradShards;
        zero_grads(shard_grads[sh]);
        for (std::size_t b = lo; b < hi; ++b)
          losses[b] = example(epoch, order[start + b], &shard_grads[sh], scale,
                              traces[sh]);
      };
      if (opt.threads > 1) {
        std::vector<std::thread> workers;
        std::vector<std::exception_ptr> errors(kGradShards);
        for (std::size_t w = 0; w < std::min(opt.threads, kGradShards); ++w) {
          workers.emplace_back([&, w] {
            for (std::size_t sh = w; sh < kGradShards;
                 sh += std::min(opt.threads, kGradShards)) {
              try {
                run_shard(sh);
              } catch (...) {
                errors[sh] = std::current_exception();
              }
            }
          });
        }
        for (auto& t : workers) t.join();
        for (auto& e : errors)
          if (e) std::rethrow_exception(e);
      } else {
        for (std::size_t sh = 0; sh < kGradShards; ++sh) run_shard(sh);
      }
      zero_grads(grads);
      for (std::size_t sh = 0; sh < kGradShards; ++sh)
        add_grads(grads, shard_grads[sh]);
      double batch_loss = 0;
      for (std::size_t b = 0; b < bsz; ++b) batch_loss += losses[b];
      batch_loss /= double(bsz);
      if (!std::isfinite(batch_loss))
        throw NumericError("non-finite loss at step " + std::to_string(step));
      epoch_sum += batch_loss * double(bsz);
      const double lr = cosine_lr(step, adam);
      if (lr > 0) adamw_step(params, grads, state, adam, lr);
    }
    epoch_losses.push_back(epoch_sum / double(n));
    char buf[96];
    std::snprintf(buf, sizeof buf, "epoch %zu/%zu loss %.6f", epoch + 1,
                  s.epochs, epoch_losses.back());
    opt.info(buf);
  }
  return epoch_losses;
}

}  // namespace detail

struct PretrainResult {
  Checkpoint checkpoint;
  std::vector<double> epoch_losses;
};

// Model config fields seq_len/in_channels must match the dataset; the decoder
// is chosen from the target mode and task heads are dropped.
inline PretrainResult pretrain(const Dataset& ds, ModelConfig cfg,
                               const PretrainConfig& pc,
                               const RunOptions& opt = {}) {
  pc.validate();
  cfg.decoder = pc.mode == TargetMode::kSpatiotemporal
                    ? DecoderKind::kSpatiotemporal
                    : DecoderKind::kFourier;
  cfg.num_classes = 0;
  cfg.target_dim = 0;
  cfg.dropout_rate = pc.dropout;
  cfg.validate();
  detail::check_shape(cfg, ds, "pretrain");

  const auto inputs = detail::prepare_inputs(cfg, ds);
  const DftPlan<float> dft(cfg.padded_len());
  std::vector<PolarSpectrum<float>> targets;
  if (pc.mode == TargetMode::kFourier) {
    targets.reserve(inputs.size());
    for (const auto& x : inputs)
      targets.push_back(to_polar(rdft<float>(dft, x, cfg.in_channels)));
  }
  const PretrainInputs<float> in{&cfg, &dft, pc.mode, pc.fourier_weights};

  PretrainResult result;
  result.checkpoint.config = cfg;
  result.checkpoint.params = init_params<float>(cfg, pc.seed);
  OptState<float> state = OptState<float>::zeros(cfg);
  const std::size_t L = cfg.num_patches();

  auto example = [&](std::size_t epoch, std::size_t rec, Params<float>* g,
                     float scale, EncoderTrace<float>& tr) {
    Rng mask_rng(derive_seed(pc.seed, 0x3a5c, epoch, rec));
    Rng drop_rng(derive_seed(pc.seed, 0xd509, epoch, rec));
    const MaskPlan plan = sample_mask(L, pc.mask_ratio, mask_rng);
    const DropoutContext dc{pc.dropout, &drop_rng};
    return double(pretrain_example<float>(
        in, result.checkpoint.params, inputs[rec],
        targets.empty() ? nullptr : &targets[rec], plan, dc, tr, g, scale));
  };
  const detail::LoopSettings ls{pc.epochs,       pc.batch_size, pc.base_lr,
                                pc.weight_decay, pc.warmup_frac, pc.seed};
  result.epoch_losses = detail::train_loop(cfg, result.checkpoint.params, state,
                                           ds.size(), ls, example, opt);
  result.checkpoint.optimizer = std::move(state);
  result.checkpoint.metadata = {{"stage", "pretrain"},
                                {"dataset", ds.name},
                                {"pretrain", to_json(pc)}};
  return result;
}

struct Predictions {
  std::vector<float> outputs;  // [n x num_classes] probabilities or [n x dim]
  EvalReport report;
};

// Forward every record without masking or dropout and score the head.
inline Predictions evaluate(const ModelConfig& cfg, const Params<float>& p,
                            const Dataset& ds) {
  detail::check_shape(cfg, ds, "evaluate");
  const auto inputs = detail::prepare_inputs(cfg, ds);
  const std::size_t width = cfg.num_classes > 0 ? cfg.num_classes : cfg.target_dim;
  if (width == 0) throw ConfigError("evaluate: model has no task head");
  if (ds.task.is_classification() != (cfg.num_classes > 0))
    throw ConfigError("evaluate: task/head mismatch");
  Predictions out;
  out.outputs.resize(ds.size() * width);
  EncoderTrace<float> tr;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& r = ds.records[i];
    supervised_example<float>(cfg, p, inputs[i], {r.class_id, r.target}, {}, tr,
                              nullptr, 1.0f,
                              std::span<float>(out.outputs).subspan(i * width, width));
  }
  if (cfg.num_classes > 0) {
    std::vector<std::uint32_t> labels(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) labels[i] = ds.records[i].class_id;
    out.report = compute_classification_metrics(out.outputs, labels, cfg.num_classes);
  } else {
    std::vector<float> targets;
    for (const auto& r : ds.records)
      targets.insert(targets.end(), r.target.begin(), r.target.end());
    out.report = compute_regression_metrics(out.outputs, targets, cfg.target_dim);
  }
  return out;
}

struct FinetuneResult {
  Checkpoint checkpoint;
  EvalReport report;
  std::vector<double> epoch_losses;
};

// Head config for a dataset's task on top of an encoder architecture.
inline ModelConfig task_config(ModelConfig cfg, const Task& task) {
  cfg.decoder = DecoderKind::kNone;
  cfg.num_classes = task.is_classification() ? task.num_classes : 0;
  cfg.target_dim = task.is_classification() ? 0 : task.target_dim;
  return cfg;
}

// Full-model supervised training. With `init`, encoder tensors are copied
// from the checkpoint (its architecture wins over `cfg`) and the task head
// is freshly initialized; without it, everything starts from random init.
inline FinetuneResult finetune(const Checkpoint* init, const Dataset& train,
                               const Dataset& test, ModelConfig cfg,
                               const FinetuneConfig& fc,
                               const RunOptions& opt = {}) {
  fc.validate();
  if (fc.task && *fc.task != train.task)
    throw ConfigError("finetune: dataset task does not match the requested head");
  if (!(test.task == train.task))
    throw ConfigError("finetune: train/test task mismatch");
  if (init) cfg = init->config;
  cfg = task_config(cfg, train.task);
  cfg.dropout_rate = fc.dropout;
  cfg.validate();
  detail::check_shape(cfg, train, "finetune");
  detail::check_shape(cfg, test, "finetune");

  FinetuneResult result;
  result.checkpoint.config = cfg;
  result.checkpoint.params = init_params<float>(cfg, fc.seed);
  if (init) copy_matching(init->params, result.checkpoint.params, /*encoder_only=*/true);

  const auto inputs = detail::prepare_inputs(cfg, train);
  OptState<float> state = OptState<float>::zeros(cfg);
  auto example = [&](std::size_t epoch, std::size_t rec, Params<float>* g,
                     float scale, EncoderTrace<float>& tr) {
    Rng drop_rng(derive_seed(fc.seed, 0xd509, epoch, rec));
    const DropoutContext dc{fc.dropout, &drop_rng};
    const auto& r = train.records[rec];
    return double(supervised_example<float>(cfg, result.checkpoint.params,
                                            inputs[rec], {r.class_id, r.target},
                                            dc, tr, g, scale));
  };
  const detail::LoopSettings ls{fc.epochs,       fc.batch_size, fc.base_lr,
                                fc.weight_decay, fc.warmup_frac, fc.seed};
  result.epoch_losses = detail::train_loop(cfg, result.checkpoint.params, state,
                                           train.size(), ls, example, opt);
  result.report = evaluate(cfg, result.checkpoint.params, test).report;
  result.report.seed = fc.seed;
  result.report.config_hash =
      config_hash({{"model", to_json(cfg)}, {"finetune", to_json(fc)},
                   {"init", init ? "checkpoint" : "random"}});
  result.checkpoint.metadata = {{"stage", "finetune"},
                                {"dataset", train.name},
                                {"init", init ? "checkpoint" : "random"},
                                {"finetune", to_json(fc)}};
  return result;
}

// Class-token representation of every record, no masking, dropout off.
inline FeatureSet extract_features(const ModelConfig& cfg, const Params<float>& p,
                                   const Dataset& ds) {
  detail::check_shape(cfg, ds, "extract_features");
  const auto inputs = detail::prepare_inputs(cfg, ds);
  FeatureSet fs;
  fs.dim = cfg.embed_dim;
  fs.values.resize(ds.size() * cfg.embed_dim);
  fs.labels.resize(ds.size());
  const MaskPlan none{};
  EncoderTrace<float> tr;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    encoder_forward<float>(cfg, p, inputs[i], none, {}, tr);
    std::copy(tr.output.begin(), tr.output.begin() + cfg.embed_dim,
              fs.values.begin() + i * cfg.embed_dim);
    fs.labels[i] = ds.records[i].class_id;
  }
  return fs;
}

// ---------------------------------------------------------------------------
// Experiment runners

struct SemiSupervisedRow {
  double fraction = 1.0;
  std::string condition;  // "pretrained" | "random_init"
  MeanStd acc;
  std::vector<EvalReport> reports;  // one per seed
};

inline std::vector<SemiSupervisedRow> run_semi_supervised(
    const Checkpoint& pretrained, const Dataset& train, const Dataset& test,
    const std::vector<double>& fractions, const std::vector<std::uint64_t>& seeds,
    FinetuneConfig fc, const RunOptions& opt = {}) {
  if (seeds.empty()) throw ConfigError("semi: at least one seed is required");
  std::vector<SemiSupervisedRow> rows;
  for (const double f : fractions) {
    for (const bool use_ckpt : {true, false}) {
      SemiSupervisedRow row;
      row.fraction = f;
      row.condition = use_ckpt ? "pretrained" : "random_init";
      std::vector<double> accs;
      for (const auto seed : seeds) {
        const Dataset sub = subsample_labels(train, f, seed);
        fc.seed = seed;
        char buf[96];
        std::snprintf(buf, sizeof buf, "semi: fraction %.3f %s seed %llu (%zu labels)",
                      f, row.condition.c_str(),
                      static_cast<unsigned long long>(seed), sub.size());
        opt.info(buf);
        auto r = finetune(use_ckpt ? &pretrained : nullptr, sub, test,
                          pretrained.config, fc, opt);
        accs.push_back(r.report.acc);
        row.reports.push_back(std::move(r.report));
      }
      row.acc = mean_std(accs);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

// Loads the encoder from a checkpoint trained on another task, attaches a
// fresh head for the destination task, and fine-tunes.
inline FinetuneResult run_transfer(const Checkpoint& source, const Dataset& train,
                                   const Dataset& test, const FinetuneConfig& fc,
                                   const RunOptions& opt = {}) {
  if (train.n_time() != source.config.seq_len ||
      train.n_channels() != source.config.in_channels)
    throw ConfigError("transfer: checkpoint input shape [" +
                      std::to_string(source.config.seq_len) + " x " +
                      std::to_string(source.config.in_channels) +
                      "] does not match destination dataset [" +
                      std::to_string(train.n_time()) + " x " +
                      std::to_string(train.n_channels()) + "]");
  return finetune(&source, train, test, source.config, fc, opt);
}

struct AblationRow {
  TargetMode mode = TargetMode::kInvFourier;
  double ratio = 0;
  MeanStd acc;
  std::vector<double> accs;
};

inline std::vector<AblationRow> run_mask_ablation(
    const Dataset& train, const Dataset& test, const ModelConfig& cfg,
    PretrainConfig pc, FinetuneConfig fc, const std::vector<double>& ratios,
    const std::vector<TargetMode>& modes, const std::vector<std::uint64_t>& seeds,
    const RunOptions& opt = {}) {
  if (seeds.empty()) throw ConfigError("ablate: at least one seed is required");
  for (const double r : ratios) {
    pc.mask_ratio = r;
    pc.validate();
  }
  std::vector<AblationRow> rows;
  for (const auto mode : modes) {
    for (const double r : ratios) {
      AblationRow row{mode, r, {}, {}};
      for (const auto seed : seeds) {
        pc.mode = mode;
        pc.mask_ratio = r;
        pc.seed = seed;
        fc.seed = seed;
        char buf[96];
        std::snprintf(buf, sizeof buf, "ablate: %s ratio %.2f seed %llu",
                      to_string(mode).c_str(), r,
                      static_cast<unsigned long long>(seed));
        opt.info(buf);
        const auto pre = pretrain(train, cfg, pc, opt);
        const auto ft = finetune(&pre.checkpoint, train, test, cfg, fc, opt);
        row.accs.push_back(ft.report.acc);
      }
      row.acc = mean_std(row.accs);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

}  // namespace specmae
