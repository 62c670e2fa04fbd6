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

// Patch-embedding transformer encoder with a class token, a shared mask
// token, and linear pre-training decoders / downstream heads.
//
// Every forward op has a matching backward that accumulates into a Params
// structure of the same shape, so the gradient of any head can be computed
// without a tape. Scalar type is a template parameter: training runs in
// float, gradient verification in double.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"
#include "specmae/common.hpp"
#include "specmae/fourier.hpp"
#include "specmae/kernels.hpp"

namespace specmae {

enum class DecoderKind { kNone, kSpatiotemporal, kFourier };

inline std::string to_string(DecoderKind k) {
  switch (k) {
    case DecoderKind::kSpatiotemporal: return "spatiotemporal";
    case DecoderKind::kFourier: return "fourier";
    default: return "none";
  }
}

inline DecoderKind decoder_kind_from_string(const std::string& s) {
  if (s == "none") return DecoderKind::kNone;
  if (s == "spatiotemporal") return DecoderKind::kSpatiotemporal;
  if (s == "fourier") return DecoderKind::kFourier;
  throw ConfigError("unknown decoder kind '" + s + "'");
}

struct ModelConfig {
  std::size_t patch_size = 4;
  std::size_t embed_dim = 128;
  std::size_t num_blocks = 4;
  std::size_t num_heads = 4;
  std::size_t ffn_dim = 512;
  double dropout_rate = 0.1;
  std::size_t in_channels = 16;
  std::size_t seq_len = 50;
  bool rel_pos_in_block1 = true;
  // Which pre-training decoder and downstream heads are allocated.
  DecoderKind decoder = DecoderKind::kNone;
  std::size_t num_classes = 0;
  std::size_t target_dim = 0;

  std::size_t num_patches() const {
    return (seq_len + patch_size - 1) / patch_size;
  }
  std::size_t num_tokens() const { return num_patches() + 1; }
  std::size_t padded_len() const { return num_patches() * patch_size; }
  std::size_t spectrum_bins() const { return half_bins(padded_len()); }
  std::size_t patch_width() const { return patch_size * in_channels; }
  std::size_t head_dim() const { return embed_dim / num_heads; }
  bool has_rel_pos() const { return rel_pos_in_block1 && num_blocks > 0; }

  void validate() const {
    if (patch_size < 1) throw ConfigError("model.patch_size must be >= 1");
    if (embed_dim < 1) throw ConfigError("model.embed_dim must be >= 1");
    if (num_heads < 1 || embed_dim % num_heads != 0)
      throw ConfigError("model.embed_dim must be divisible by model.num_heads");
    if (num_blocks > 0 && ffn_dim < 1)
      throw ConfigError("model.ffn_dim must be >= 1");
    if (!(dropout_rate >= 0 && dropout_rate < 1))
      throw ConfigError("model.dropout_rate must be in [0, 1)");
    if (in_channels < 1) throw ConfigError("model.in_channels must be >= 1");
    if (seq_len < 1) throw ConfigError("model.seq_len must be >= 1");
  }

  bool operator==(const ModelConfig&) const = default;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"patch_size", c.patch_size},
          {"embed_dim", c.embed_dim},
          {"num_blocks", c.num_blocks},
          {"num_heads", c.num_heads},
          {"ffn_dim", c.ffn_dim},
          {"dropout_rate", c.dropout_rate},
          {"in_channels", c.in_channels},
          {"seq_len", c.seq_len},
          {"rel_pos_in_block1", c.rel_pos_in_block1},
          {"decoder", to_string(c.decoder)},
          {"num_classes", c.num_classes},
          {"target_dim", c.target_dim}};
}

// Missing keys keep the values already present in `c`.
inline void update_from_json(ModelConfig& c, const nlohmann::json& j) {
  try {
    c.patch_size = j.value("patch_size", c.patch_size);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.num_blocks = j.value("num_blocks", c.num_blocks);
    c.num_heads = j.value("num_heads", c.num_heads);
    c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
    c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
    c.in_channels = j.value("in_channels", c.in_channels);
    c.seq_len = j.value("seq_len", c.seq_len);
    c.rel_pos_in_block1 = j.value("rel_pos_in_block1", c.rel_pos_in_block1);
    if (j.contains("decoder"))
      c.decoder = decoder_kind_from_string(j.at("decoder").get<std::string>());
    c.num_classes = j.value("num_classes", c.num_classes);
    c.target_dim = j.value("target_dim", c.target_dim);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("model config: " + std::string(e.what()));
  }
}

// ---------------------------------------------------------------------------
// Parameters

template <typename T>
struct BlockParams {
  Tensor<T> norm1_scale, norm1_offset;
  Tensor<T> qkv_weight, qkv_bias;  // [d, 3d]: q | k | v column blocks
  Tensor<T> out_weight, out_bias;
  Tensor<T> rel_pos_bias;  // [2L-1, H]; only allocated in the first block
  Tensor<T> norm2_scale, norm2_offset;
  Tensor<T> ffn1_weight, ffn1_bias;
  Tensor<T> ffn2_weight, ffn2_bias;
};

template <typename T>
struct Params {
  Tensor<T> patch_weight;  // [P, C, d]
  Tensor<T> patch_bias;
  Tensor<T> cls_token;
  Tensor<T> mask_token;
  Tensor<T> pos_embed;  // [L+1, d]
  std::vector<BlockParams<T>> blocks;

  Tensor<T> spatial_weight, spatial_bias;      // d -> P*C
  Tensor<T> magnitude_weight, magnitude_bias;  // L*d -> bins*C
  Tensor<T> phase_weight, phase_bias;
  Tensor<T> class_weight, class_bias;      // d -> num_classes
  Tensor<T> regress_weight, regress_bias;  // d -> target_dim
};

// Decay follows the usual grouping: matrices decay; norms, biases, tokens
// and positional tables do not.
struct TensorInfo {
  std::string name;
  bool decay = false;
  bool head = false;  // decoder or downstream head, not encoder
};

// Calls f(info, tensor) for every allocated tensor in a fixed order.
template <typename P, typename F>
void for_each_tensor(P& p, F&& f) {
  auto visit = [&](const std::string& name, auto& t, bool decay, bool head) {
    if (!t.empty()) f(TensorInfo{name, decay, head}, t);
  };
  visit("patch_embed.weight", p.patch_weight, true, false);
  visit("patch_embed.bias", p.patch_bias, false, false);
  visit("cls_token", p.cls_token, false, false);
  visit("mask_token", p.mask_token, false, false);
  visit("pos_embed", p.pos_embed, false, false);
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    auto& bp = p.blocks[b];
    const std::string pre = "blocks." + std::to_string(b) + ".";
    visit(pre + "norm1.scale", bp.norm1_scale, false, false);
    visit(pre + "norm1.offset", bp.norm1_offset, false, false);
    visit(pre + "attn.qkv.weight", bp.qkv_weight, true, false);
    visit(pre + "attn.qkv.bias", bp.qkv_bias, false, false);
    visit(pre + "attn.out.weight", bp.out_weight, true, false);
    visit(pre + "attn.out.bias", bp.out_bias, false, false);
    visit(pre + "attn.rel_pos_bias", bp.rel_pos_bias, false, false);
    visit(pre + "norm2.scale", bp.norm2_scale, false, false);
    visit(pre + "norm2.offset", bp.norm2_offset, false, false);
    visit(pre + "ffn.fc1.weight", bp.ffn1_weight, true, false);
    visit(pre + "ffn.fc1.bias", bp.ffn1_bias, false, false);
    visit(pre + "ffn.fc2.weight", bp.ffn2_weight, true, false);
    visit(pre + "ffn.fc2.bias", bp.ffn2_bias, false, false);
  }
  visit("decoder.spatial.weight", p.spatial_weight, true, true);
  visit("decoder.spatial.bias", p.spatial_bias, false, true);
  visit("decoder.magnitude.weight", p.magnitude_weight, true, true);
  visit("decoder.magnitude.bias", p.magnitude_bias, false, true);
  visit("decoder.phase.weight", p.phase_weight, true, true);
  visit("decoder.phase.bias", p.phase_bias, false, true);
  visit("head.classify.weight", p.class_weight, true, true);
  visit("head.classify.bias", p.class_bias, false, true);
  visit("head.regress.weight", p.regress_weight, true, true);
  visit("head.regress.bias", p.regress_bias, false, true);
}

template <typename TensorT>
struct NamedTensor {
  TensorInfo info;
  TensorT* tensor;
};

// Flat inventory in for_each_tensor order; constness follows `p`.
template <typename P>
auto tensor_list(P& p) {
  using TensorT = std::remove_reference_t<decltype((p.patch_weight))>;
  std::vector<NamedTensor<TensorT>> out;
  for_each_tensor(p, [&](const TensorInfo& info, TensorT& t) {
    out.push_back({info, &t});
  });
  return out;
}

// Zero-filled parameters with the shapes implied by `cfg`.
template <typename T>
Params<T> zero_params(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.embed_dim, L = cfg.num_patches(), H = cfg.num_heads,
                    F = cfg.ffn_dim, P = cfg.patch_size, C = cfg.in_channels;
  Params<T> p;
  p.patch_weight = Tensor<T>({P, C, d});
  p.patch_bias = Tensor<T>({d});
  p.cls_token = Tensor<T>({d});
  p.mask_token = Tensor<T>({d});
  p.pos_embed = Tensor<T>({L + 1, d});
  p.blocks.resize(cfg.num_blocks);
  for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
    auto& bp = p.blocks[b];
    bp.norm1_scale = Tensor<T>({d});
    bp.norm1_offset = Tensor<T>({d});
    bp.qkv_weight = Tensor<T>({d, 3 * d});
    bp.qkv_bias = Tensor<T>({3 * d});
    bp.out_weight = Tensor<T>({d, d});
    bp.out_bias = Tensor<T>({d});
    if (b == 0 && cfg.has_rel_pos()) bp.rel_pos_bias = Tensor<T>({2 * L - 1, H});
    bp.norm2_scale = Tensor<T>({d});
    bp.norm2_offset = Tensor<T>({d});
    bp.ffn1_weight = Tensor<T>({d, F});
    bp.ffn1_bias = Tensor<T>({F});
    bp.ffn2_weight = Tensor<T>({F, d});
    bp.ffn2_bias = Tensor<T>({d});
  }
  const std::size_t bins_c = cfg.spectrum_bins() * C;
  if (cfg.decoder == DecoderKind::kSpatiotemporal) {
    p.spatial_weight = Tensor<T>({d, P * C});
    p.spatial_bias = Tensor<T>({P * C});
  } else if (cfg.decoder == DecoderKind::kFourier) {
    p.magnitude_weight = Tensor<T>({L * d, bins_c});
    p.magnitude_bias = Tensor<T>({bins_c});
    p.phase_weight = Tensor<T>({L * d, bins_c});
    p.phase_bias = Tensor<T>({bins_c});
  }
  if (cfg.num_classes > 0) {
    p.class_weight = Tensor<T>({d, cfg.num_classes});
    p.class_bias = Tensor<T>({cfg.num_classes});
  }
  if (cfg.target_dim > 0) {
    p.regress_weight = Tensor<T>({d, cfg.target_dim});
    p.regress_bias = Tensor<T>({cfg.target_dim});
  }
  return p;
}

// Xavier-uniform for matrices, N(0, 0.02) for tokens and positional
// embeddings, zeros for biases, task heads and the relative-position table,
// unit norm scales.
template <typename T>
void init_tensor(const TensorInfo& info, Tensor<T>& t, Rng& rng) {
  const auto& name = info.name;
  auto ends_with = [&](const char* s) {
    const std::string suf(s);
    return name.size() >= suf.size() &&
           name.compare(name.size() - suf.size(), suf.size(), suf) == 0;
  };
  if (ends_with(".scale")) {
    t.fill(T(1));
  } else if (name.starts_with("head.")) {
    // Task heads start at zero: an untrained model predicts uniformly and
    // its accuracy is chance regardless of what the encoder features carry.
    t.fill(T(0));
  } else if (name == "cls_token" || name == "mask_token" ||
             name == "pos_embed") {
    for (auto& v : t.values) v = static_cast<T>(0.02 * normal01(rng));
  } else if (info.decay) {
    // fan_in is the product of all leading dims, fan_out the last dim.
    const std::size_t fan_out = t.shape.back();
    const std::size_t fan_in = t.size() / fan_out;
    const double a = std::sqrt(6.0 / double(fan_in + fan_out));
    for (auto& v : t.values) v = static_cast<T>(a * (2.0 * uniform01(rng) - 1.0));
  } else {
    t.fill(T(0));
  }
}

template <typename T>
Params<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  Params<T> p = zero_params<T>(cfg);
  for_each_tensor(p, [&](const TensorInfo& info, Tensor<T>& t) {
    // Per-tensor streams keep encoder init independent of which heads exist.
    std::uint64_t h = 1469598103934665603ULL;
    for (const char ch : info.name) h = (h ^ std::uint8_t(ch)) * 1099511628211ULL;
    Rng rng(derive_seed(seed, h));
    init_tensor(info, t, rng);
  });
  return p;
}

template <typename U, typename T>
Params<U> cast_params(const Params<T>& src, const ModelConfig& cfg) {
  Params<U> out = zero_params<U>(cfg);
  auto dst_list = tensor_list(out);
  const auto src_list = tensor_list(src);
  if (dst_list.size() != src_list.size())
    throw ConfigError("cast_params: tensor inventory mismatch");
  for (std::size_t i = 0; i < dst_list.size(); ++i) {
    auto& d = dst_list[i].tensor->values;
    const auto& s = src_list[i].tensor->values;
    for (std::size_t k = 0; k < d.size(); ++k) d[k] = static_cast<U>(s[k]);
  }
  return out;
}

// Encoder inventory: patch embedding, tokens, positional tables and blocks.
// Decoders and heads are counted by head_param_count.
inline std::size_t param_count(const ModelConfig& cfg) {
  const auto p = zero_params<float>(cfg);
  std::size_t n = 0;
  for_each_tensor(p, [&](const TensorInfo& info, const Tensor<float>& t) {
    if (!info.head) n += t.size();
  });
  return n;
}

inline std::size_t head_param_count(const ModelConfig& cfg) {
  const auto p = zero_params<float>(cfg);
  std::size_t n = 0;
  for_each_tensor(p, [&](const TensorInfo& info, const Tensor<float>& t) {
    if (info.head) n += t.size();
  });
  return n;
}

// Copies every tensor whose name exists in both inventories with identical
// shape. Returns the number of tensors copied.
template <typename T>
std::size_t copy_matching(const Params<T>& src, Params<T>& dst,
                          bool encoder_only) {
  const auto src_list = tensor_list(src);
  std::size_t copied = 0;
  for_each_tensor(dst, [&](const TensorInfo& info, Tensor<T>& t) {
    if (encoder_only && info.head) return;
    for (const auto& s : src_list) {
      if (s.info.name == info.name && s.tensor->shape == t.shape) {
        t.values = s.tensor->values;
        ++copied;
      }
    }
  });
  return copied;
}

// ---------------------------------------------------------------------------
// Masking

struct MaskPlan {
  std::vector<std::size_t> masked;  // sorted, unique, < L
  double ratio = 0;

  bool empty() const { return masked.empty(); }
  std::size_t size() const { return masked.size(); }
};

inline std::size_t mask_count(std::size_t num_patches, double ratio) {
  if (ratio <= 0) return 0;
  const auto k = static_cast<std::size_t>(std::llround(ratio * double(num_patches)));
  return std::min(num_patches, std::max<std::size_t>(1, k));
}

// Uniform sample of mask_count(L, r) patch indices without replacement.
inline MaskPlan sample_mask(std::size_t num_patches, double ratio, Rng& rng) {
  if (!(ratio >= 0 && ratio <= 1))
    throw ConfigError("mask ratio must be in [0, 1]");
  MaskPlan plan;
  plan.ratio = ratio;
  const std::size_t k = mask_count(num_patches, ratio);
  // partial Fisher-Yates over the first k slots
  std::vector<std::size_t> idx(num_patches);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + uniform_index(rng, num_patches - i);
    std::swap(idx[i], idx[j]);
  }
  plan.masked.assign(idx.begin(), idx.begin() + k);
  std::sort(plan.masked.begin(), plan.masked.end());
  return plan;
}

inline std::vector<char> mask_flags(const MaskPlan& plan, std::size_t num_patches) {
  std::vector<char> flags(num_patches, 0);
  for (const auto i : plan.masked) {
    if (i >= num_patches) throw ConfigError("mask index out of range");
    flags[i] = 1;
  }
  return flags;
}

// ---------------------------------------------------------------------------
// Forward with trace

// Right-zero-pads an [N x C] signal to [L*P x C].
template <typename T, typename S>
std::vector<T> pad_signal(const ModelConfig& cfg, std::span<const S> x) {
  if (x.size() != cfg.seq_len * cfg.in_channels)
    throw DataError("input shape " + std::to_string(x.size()) +
                    " does not match seq_len*in_channels=" +
                    std::to_string(cfg.seq_len * cfg.in_channels));
  std::vector<T> out(cfg.padded_len() * cfg.in_channels, T(0));
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<T>(x[i]);
  return out;
}

template <typename T>
struct BlockTrace {
  std::vector<T> input;
  std::vector<T> norm1_hat, norm1_rstd, h1;
  std::vector<T> qkv;
  std::vector<T> probs;      // [H, T, T] softmax output before dropout
  std::vector<T> attn_keep;  // dropout scale per prob; empty when off
  std::vector<T> concat;
  std::vector<T> mid;  // residual stream after attention
  std::vector<T> norm2_hat, norm2_rstd, h2;
  std::vector<T> fc1, act, fc2;
  std::vector<T> ffn_keep;
};

template <typename T>
struct EncoderTrace {
  std::vector<T> patches;  // [L, P*C]
  std::vector<T> pre_act;  // [L, d] before GELU
  std::vector<T> embed;    // [L, d]
  std::vector<char> masked;
  std::vector<BlockTrace<T>> blocks;
  std::vector<T> output;  // [L+1, d]
};

struct DropoutContext {
  double rate = 0;
  Rng* rng = nullptr;
  bool active() const { return rng != nullptr && rate > 0; }
};

template <typename T>
void fill_keep(std::vector<T>& keep, std::size_t n, const DropoutContext& dc) {
  if (!dc.active()) {
    keep.clear();
    return;
  }
  keep.resize(n);
  const T scale = T(1.0 / (1.0 - dc.rate));
  for (auto& k : keep) k = uniform01(*dc.rng) < dc.rate ? T(0) : scale;
}

// E[i] = GELU(patch_i * W + b) over non-overlapping patches of the padded
// signal.
template <typename T>
void embed_patches_traced(const ModelConfig& cfg, const Params<T>& p,
                          std::span<const T> padded, EncoderTrace<T>& tr) {
  const std::size_t L = cfg.num_patches(), d = cfg.embed_dim,
                    W = cfg.patch_width();
  // [L*P x C] time-major is already [L x (P*C)] row-major.
  tr.patches.assign(padded.begin(), padded.end());
  tr.pre_act.resize(L * d);
  tr.embed.resize(L * d);
  kernels::linear<T>(tr.patches, L, W, p.patch_weight.span(),
                     p.patch_bias.span(), d, tr.pre_act);
  for (std::size_t i = 0; i < L * d; ++i)
    tr.embed[i] = kernels::gelu(tr.pre_act[i]);
}

template <typename T>
std::vector<T> embed_patches(const ModelConfig& cfg, const Params<T>& p,
                             std::span<const T> padded) {
  EncoderTrace<T> tr;
  embed_patches_traced(cfg, p, padded, tr);
  return tr.embed;
}

// Masked slots take the mask token, the class token is prepended, then the
// absolute positional embedding is added to every slot.
template <typename T>
std::vector<T> assemble_tokens(const ModelConfig& cfg, const Params<T>& p,
                               std::span<const T> embed, const MaskPlan& plan) {
  const std::size_t L = cfg.num_patches(), d = cfg.embed_dim;
  const auto flags = mask_flags(plan, L);
  std::vector<T> tokens((L + 1) * d);
  std::copy(p.cls_token.values.begin(), p.cls_token.values.end(), tokens.begin());
  for (std::size_t i = 0; i < L; ++i) {
    const T* src = flags[i] ? p.mask_token.data() : embed.data() + i * d;
    std::copy(src, src + d, tokens.begin() + (i + 1) * d);
  }
  for (std::size_t k = 0; k < tokens.size(); ++k) tokens[k] += p.pos_embed[k];
  return tokens;
}

template <typename T>
void block_forward(const ModelConfig& cfg, const BlockParams<T>& bp,
                   std::span<const T> x, const DropoutContext& dc,
                   BlockTrace<T>& tr, std::span<T> out) {
  const std::size_t Tn = cfg.num_tokens(), d = cfg.embed_dim,
                    H = cfg.num_heads, dh = cfg.head_dim(), F = cfg.ffn_dim,
                    L = cfg.num_patches();
  tr.input.assign(x.begin(), x.end());
  tr.norm1_hat.resize(Tn * d);
  tr.norm1_rstd.resize(Tn);
  tr.h1.resize(Tn * d);
  kernels::layer_norm<T>(x, Tn, d, bp.norm1_scale.span(), bp.norm1_offset.span(),
                         tr.norm1_hat, tr.norm1_rstd, tr.h1);
  tr.qkv.resize(Tn * 3 * d);
  kernels::linear<T>(tr.h1, Tn, d, bp.qkv_weight.span(), bp.qkv_bias.span(),
                     3 * d, tr.qkv);

  const T scale = T(1) / std::sqrt(T(dh));
  tr.probs.resize(H * Tn * Tn);
  fill_keep(tr.attn_keep, H * Tn * Tn, dc);
  tr.concat.assign(Tn * d, T(0));
  const bool rel = !bp.rel_pos_bias.empty();
  for (std::size_t h = 0; h < H; ++h) {
    for (std::size_t i = 0; i < Tn; ++i) {
      const T* q = tr.qkv.data() + i * 3 * d + h * dh;
      T* row = tr.probs.data() + (h * Tn + i) * Tn;
      for (std::size_t j = 0; j < Tn; ++j) {
        const T* k = tr.qkv.data() + j * 3 * d + d + h * dh;
        T s = 0;
        for (std::size_t e = 0; e < dh; ++e) s += q[e] * k[e];
        s *= scale;
        if (rel && i > 0 && j > 0)
          s += bp.rel_pos_bias[(i + L - 1 - j) * H + h];
        row[j] = s;
      }
      kernels::softmax<T>(std::span<T>(row, Tn));
      T* o = tr.concat.data() + i * d + h * dh;
      for (std::size_t j = 0; j < Tn; ++j) {
        const T a = tr.attn_keep.empty()
                        ? row[j]
                        : row[j] * tr.attn_keep[(h * Tn + i) * Tn + j];
        if (a == T(0)) continue;
        const T* v = tr.qkv.data() + j * 3 * d + 2 * d + h * dh;
        for (std::size_t e = 0; e < dh; ++e) o[e] += a * v[e];
      }
    }
  }
  tr.mid.resize(Tn * d);
  kernels::linear<T>(tr.concat, Tn, d, bp.out_weight.span(), bp.out_bias.span(),
                     d, tr.mid);
  for (std::size_t k = 0; k < Tn * d; ++k) tr.mid[k] += x[k];

  tr.norm2_hat.resize(Tn * d);
  tr.norm2_rstd.resize(Tn);
  tr.h2.resize(Tn * d);
  kernels::layer_norm<T>(tr.mid, Tn, d, bp.norm2_scale.span(),
                         bp.norm2_offset.span(), tr.norm2_hat, tr.norm2_rstd,
                         tr.h2);
  tr.fc1.resize(Tn * F);
  kernels::linear<T>(tr.h2, Tn, d, bp.ffn1_weight.span(), bp.ffn1_bias.span(),
                     F, tr.fc1);
  tr.act.resize(Tn * F);
  for (std::size_t k = 0; k < Tn * F; ++k) tr.act[k] = kernels::gelu(tr.fc1[k]);
  tr.fc2.resize(Tn * d);
  kernels::linear<T>(tr.act, Tn, F, bp.ffn2_weight.span(), bp.ffn2_bias.span(),
                     d, tr.fc2);
  fill_keep(tr.ffn_keep, Tn * d, dc);
  for (std::size_t k = 0; k < Tn * d; ++k) {
    const T f = tr.ffn_keep.empty() ? tr.fc2[k] : tr.fc2[k] * tr.ffn_keep[k];
    out[k] = tr.mid[k] + f;
  }
}

// Runs the block stack over assembled tokens. Throws NumericError naming the
// first block whose output is not finite.
template <typename T>
void encode_traced(const ModelConfig& cfg, const Params<T>& p,
                   std::span<const T> tokens, const DropoutContext& dc,
                   EncoderTrace<T>& tr) {
  tr.blocks.resize(cfg.num_blocks);
  std::vector<T> cur(tokens.begin(), tokens.end());
  std::vector<T> next(cur.size());
  for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
    block_forward<T>(cfg, p.blocks[b], cur, dc, tr.blocks[b], next);
    if (!all_finite<T>(next))
      throw NumericError("non-finite activation in encoder block " +
                         std::to_string(b));
    std::swap(cur, next);
  }
  tr.output = std::move(cur);
}

template <typename T>
std::vector<T> encode(const ModelConfig& cfg, const Params<T>& p,
                      std::span<const T> tokens, const DropoutContext& dc = {}) {
  EncoderTrace<T> tr;
  encode_traced(cfg, p, tokens, dc, tr);
  return tr.output;
}

// Patch embedding, token assembly and encoding in one traced pass.
template <typename T>
void encoder_forward(const ModelConfig& cfg, const Params<T>& p,
                     std::span<const T> padded, const MaskPlan& plan,
                     const DropoutContext& dc, EncoderTrace<T>& tr) {
  embed_patches_traced(cfg, p, padded, tr);
  tr.masked = mask_flags(plan, cfg.num_patches());
  const auto tokens = assemble_tokens<T>(cfg, p, tr.embed, plan);
  encode_traced<T>(cfg, p, tokens, dc, tr);
}

// ---------------------------------------------------------------------------
// Backward

template <typename T>
void block_backward(const ModelConfig& cfg, const BlockParams<T>& bp,
                    const BlockTrace<T>& tr, std::span<const T> dout,
                    BlockParams<T>& g, std::span<T> dx) {
  const std::size_t Tn = cfg.num_tokens(), d = cfg.embed_dim,
                    H = cfg.num_heads, dh = cfg.head_dim(), F = cfg.ffn_dim,
                    L = cfg.num_patches();
  std::vector<T> dmid(dout.begin(), dout.end());

  // FFN branch
  std::vector<T> dfc2(Tn * d);
  for (std::size_t k = 0; k < Tn * d; ++k)
    dfc2[k] = tr.ffn_keep.empty() ? dout[k] : dout[k] * tr.ffn_keep[k];
  std::vector<T> dact(Tn * F);
  kernels::linear_vjp<T>(tr.act, Tn, F, bp.ffn2_weight.span(), d, dfc2,
                         g.ffn2_weight.span(), g.ffn2_bias.span(), dact);
  for (std::size_t k = 0; k < Tn * F; ++k) dact[k] *= kernels::gelu_grad(tr.fc1[k]);
  std::vector<T> dh2(Tn * d);
  kernels::linear_vjp<T>(tr.h2, Tn, d, bp.ffn1_weight.span(), F, dact,
                         g.ffn1_weight.span(), g.ffn1_bias.span(), dh2);
  kernels::layer_norm_vjp<T>(tr.norm2_hat, tr.norm2_rstd, Tn, d,
                             bp.norm2_scale.span(), dh2, g.norm2_scale.span(),
                             g.norm2_offset.span(), dmid);

  // Attention branch
  std::vector<T> dconcat(Tn * d);
  kernels::linear_vjp<T>(tr.concat, Tn, d, bp.out_weight.span(), d, dmid,
                         g.out_weight.span(), g.out_bias.span(), dconcat);
  std::vector<T> dqkv(Tn * 3 * d, T(0));
  std::vector<T> dp(Tn);
  const T scale = T(1) / std::sqrt(T(dh));
  const bool rel = !bp.rel_pos_bias.empty();
  for (std::size_t h = 0; h < H; ++h) {
    for (std::size_t i = 0; i < Tn; ++i) {
      const T* row = tr.probs.data() + (h * Tn + i) * Tn;
      const T* keep =
          tr.attn_keep.empty() ? nullptr : tr.attn_keep.data() + (h * Tn + i) * Tn;
      const T* go = dconcat.data() + i * d + h * dh;
      for (std::size_t j = 0; j < Tn; ++j) {
        const T* v = tr.qkv.data() + j * 3 * d + 2 * d + h * dh;
        T* dv = dqkv.data() + j * 3 * d + 2 * d + h * dh;
        const T a = keep ? row[j] * keep[j] : row[j];
        T s = 0;
        for (std::size_t e = 0; e < dh; ++e) {
          s += go[e] * v[e];
          dv[e] += a * go[e];
        }
        dp[j] = keep ? s * keep[j] : s;
      }
      kernels::softmax_vjp<T>(std::span<const T>(row, Tn), dp);
      const T* q = tr.qkv.data() + i * 3 * d + h * dh;
      T* dq = dqkv.data() + i * 3 * d + h * dh;
      for (std::size_t j = 0; j < Tn; ++j) {
        const T gl = dp[j];
        if (rel && i > 0 && j > 0) g.rel_pos_bias[(i + L - 1 - j) * H + h] += gl;
        const T gs = gl * scale;
        const T* k = tr.qkv.data() + j * 3 * d + d + h * dh;
        T* dk = dqkv.data() + j * 3 * d + d + h * dh;
        for (std::size_t e = 0; e < dh; ++e) {
          dq[e] += gs * k[e];
          dk[e] += gs * q[e];
        }
      }
    }
  }
  std::vector<T> dh1(Tn * d);
  kernels::linear_vjp<T>(tr.h1, Tn, d, bp.qkv_weight.span(), 3 * d, dqkv,
                         g.qkv_weight.span(), g.qkv_bias.span(), dh1);
  std::copy(dmid.begin(), dmid.end(), dx.begin());
  kernels::layer_norm_vjp<T>(tr.norm1_hat, tr.norm1_rstd, Tn, d,
                             bp.norm1_scale.span(), dh1, g.norm1_scale.span(),
                             g.norm1_offset.span(), dx);
}

// Accumulates encoder parameter gradients given dL/d(output) [L+1, d].
template <typename T>
void encoder_backward(const ModelConfig& cfg, const Params<T>& p,
                      const EncoderTrace<T>& tr, std::span<const T> doutput,
                      Params<T>& g) {
  const std::size_t L = cfg.num_patches(), d = cfg.embed_dim,
                    W = cfg.patch_width();
  std::vector<T> cur(doutput.begin(), doutput.end());
  std::vector<T> prev(cur.size());
  for (std::size_t b = cfg.num_blocks; b-- > 0;) {
    block_backward<T>(cfg, p.blocks[b], tr.blocks[b], cur, g.blocks[b], prev);
    std::swap(cur, prev);
  }
  // cur = dL/dtokens
  for (std::size_t k = 0; k < cur.size(); ++k) g.pos_embed[k] += cur[k];
  for (std::size_t e = 0; e < d; ++e) g.cls_token[e] += cur[e];
  std::vector<T> dpre(L * d, T(0));
  for (std::size_t i = 0; i < L; ++i) {
    const T* src = cur.data() + (i + 1) * d;
    if (tr.masked[i]) {
      for (std::size_t e = 0; e < d; ++e) g.mask_token[e] += src[e];
    } else {
      for (std::size_t e = 0; e < d; ++e)
        dpre[i * d + e] = src[e] * kernels::gelu_grad(tr.pre_act[i * d + e]);
    }
  }
  kernels::linear_vjp<T>(tr.patches, L, W, p.patch_weight.span(), d, dpre,
                         g.patch_weight.span(), g.patch_bias.span(), {});
}

// ---------------------------------------------------------------------------
// Decoders and heads

// One [P x C] prediction per masked patch, in plan order: [|plan|, P*C].
template <typename T>
std::vector<T> decode_spatiotemporal(const ModelConfig& cfg, const Params<T>& p,
                                     std::span<const T> encoded,
                                     const MaskPlan& plan) {
  if (plan.empty()) throw ConfigError("decode_spatiotemporal: empty mask plan");
  if (p.spatial_weight.empty())
    throw ConfigError("decode_spatiotemporal: model has no spatial decoder");
  const std::size_t d = cfg.embed_dim, W = cfg.patch_width();
  std::vector<T> out(plan.size() * W);
  for (std::size_t k = 0; k < plan.size(); ++k) {
    const std::size_t row = plan.masked[k] + 1;
    kernels::linear<T>(encoded.subspan(row * d, d), 1, d, p.spatial_weight.span(),
                       p.spatial_bias.span(), W,
                       std::span<T>(out).subspan(k * W, W));
  }
  return out;
}

template <typename T>
void decode_spatiotemporal_vjp(const ModelConfig& cfg, const Params<T>& p,
                               std::span<const T> encoded, const MaskPlan& plan,
                               std::span<const T> dpred, Params<T>& g,
                               std::span<T> dencoded) {
  const std::size_t d = cfg.embed_dim, W = cfg.patch_width();
  std::vector<T> drow(d);
  for (std::size_t k = 0; k < plan.size(); ++k) {
    const std::size_t row = plan.masked[k] + 1;
    kernels::linear_vjp<T>(encoded.subspan(row * d, d), 1, d,
                           p.spatial_weight.span(), W, dpred.subspan(k * W, W),
                           g.spatial_weight.span(), g.spatial_bias.span(), drow);
    for (std::size_t e = 0; e < d; ++e) dencoded[row * d + e] += drow[e];
  }
}

template <typename T>
struct FourierDecoded {
  PolarSpectrum<T> polar;
  std::vector<T> magnitude_logits;  // before softplus
};

// Flattened patch rows (class token excluded) -> magnitude (softplus) and
// phase over the padded sequence's half spectrum.
template <typename T>
FourierDecoded<T> decode_fourier(const ModelConfig& cfg, const Params<T>& p,
                                 std::span<const T> encoded) {
  if (p.magnitude_weight.empty())
    throw ConfigError("decode_fourier: model has no Fourier decoder");
  const std::size_t L = cfg.num_patches(), d = cfg.embed_dim,
                    C = cfg.in_channels, out = cfg.spectrum_bins() * C;
  const auto flat = encoded.subspan(d, L * d);
  FourierDecoded<T> r;
  r.polar.n_time = cfg.padded_len();
  r.polar.n_channels = C;
  r.magnitude_logits.resize(out);
  r.polar.magnitude.resize(out);
  r.polar.phase.resize(out);
  kernels::linear<T>(flat, 1, L * d, p.magnitude_weight.span(),
                     p.magnitude_bias.span(), out, r.magnitude_logits);
  for (std::size_t k = 0; k < out; ++k)
    r.polar.magnitude[k] = kernels::softplus(r.magnitude_logits[k]);
  kernels::linear<T>(flat, 1, L * d, p.phase_weight.span(), p.phase_bias.span(),
                     out, r.polar.phase);
  return r;
}

template <typename T>
void decode_fourier_vjp(const ModelConfig& cfg, const Params<T>& p,
                        std::span<const T> encoded, const FourierDecoded<T>& fd,
                        std::span<const T> dmag, std::span<const T> dphase,
                        Params<T>& g, std::span<T> dencoded) {
  const std::size_t L = cfg.num_patches(), d = cfg.embed_dim,
                    out = cfg.spectrum_bins() * cfg.in_channels;
  const auto flat = encoded.subspan(d, L * d);
  std::vector<T> dlogit(out);
  for (std::size_t k = 0; k < out; ++k)
    dlogit[k] = dmag[k] * kernels::sigmoid(fd.magnitude_logits[k]);
  std::vector<T> dflat(L * d);
  kernels::linear_vjp<T>(flat, 1, L * d, p.magnitude_weight.span(), out, dlogit,
                         g.magnitude_weight.span(), g.magnitude_bias.span(),
                         dflat);
  for (std::size_t k = 0; k < L * d; ++k) dencoded[d + k] += dflat[k];
  kernels::linear_vjp<T>(flat, 1, L * d, p.phase_weight.span(), out, dphase,
                         g.phase_weight.span(), g.phase_bias.span(), dflat);
  for (std::size_t k = 0; k < L * d; ++k) dencoded[d + k] += dflat[k];
}

// Linear map of the class-token representation (row 0).
template <typename T>
std::vector<T> head_classify(const ModelConfig& cfg, const Params<T>& p,
                             std::span<const T> encoded) {
  if (p.class_weight.empty())
    throw ConfigError("head_classify: model has no classification head");
  std::vector<T> logits(cfg.num_classes);
  kernels::linear<T>(encoded.first(cfg.embed_dim), 1, cfg.embed_dim,
                     p.class_weight.span(), p.class_bias.span(),
                     cfg.num_classes, logits);
  return logits;
}

template <typename T>
std::vector<T> head_regress(const ModelConfig& cfg, const Params<T>& p,
                            std::span<const T> encoded) {
  if (p.regress_weight.empty())
    throw ConfigError("head_regress: model has no regression head");
  std::vector<T> values(cfg.target_dim);
  kernels::linear<T>(encoded.first(cfg.embed_dim), 1, cfg.embed_dim,
                     p.regress_weight.span(), p.regress_bias.span(),
                     cfg.target_dim, values);
  return values;
}

// Shared backward for both class-token heads.
template <typename T>
void head_vjp(std::size_t d, std::span<const T> encoded,
              const Tensor<T>& weight, std::size_t out, std::span<const T> dy,
              Tensor<T>& gw, Tensor<T>& gb, std::span<T> dencoded) {
  std::vector<T> drow(d);
  kernels::linear_vjp<T>(encoded.first(d), 1, d, weight.span(), out, dy,
                         gw.span(), gb.span(), drow);
  for (std::size_t e = 0; e < d; ++e) dencoded[e] += drow[e];
}

}  // namespace specmae
