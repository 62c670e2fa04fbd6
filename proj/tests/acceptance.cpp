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


// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails. The synthetic-learning criteria train
// real models and take several minutes on one core.

#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "specmae/commands.hpp"
#include "specmae/fourier.hpp"
#include "specmae/metrics.hpp"
#include "specmae/optim.hpp"
#include "specmae/pipeline.hpp"
#include "specmae/probes.hpp"
#include "test_util.hpp"

namespace specmae {
namespace {

namespace fs = std::filesystem;
using cld = std::complex<long double>;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void note(const std::string& msg) { std::cerr << "  .. " << msg << std::endl; }

// ---------------------------------------------------------------------------
// 1. rdft against direct summation, and the float round trip.

// Direct long-double DFT of one column at the requested bins.
std::vector<cld> direct_bins(const std::vector<float>& x, std::size_t n, std::size_t C,
                             std::size_t c, const std::vector<std::size_t>& bins,
                             const std::vector<long double>& cos_t,
                             const std::vector<long double>& sin_t) {
  std::vector<cld> out;
  for (const auto m : bins) {
    long double re = 0, im = 0;
    for (std::size_t t = 0; t < n; ++t) {
      const std::size_t k = (m * t) % n;
      re += x[t * C + c] * cos_t[k];
      im -= x[t * C + c] * sin_t[k];
    }
    out.emplace_back(re, im);
  }
  return out;
}

Verdict FourierOracle() {
  const std::vector<std::size_t> lengths = {4, 50, 178, 3000};
  double worst_rel = 0, worst_rt = 0;
  std::size_t signals = 0;
  Rng pick(17);
  for (std::size_t i = 0; i < 1000; ++i, ++signals) {
    const std::size_t n = lengths[i % 4];
    const std::size_t C = (i / 4) % 2 ? 16 : 1;
    const DftPlan<float> plan(n);
    const auto x = testing::gaussian<float>(n * C, 1000 + i);
    const auto s = rdft<float>(plan, x, C);

    std::vector<long double> cos_t(n), sin_t(n);
    const long double two_pi = 2.0L * std::acos(-1.0L);
    for (std::size_t k = 0; k < n; ++k) {
      cos_t[k] = std::cos(two_pi * k / n);
      sin_t[k] = std::sin(two_pi * k / n);
    }
    // Every bin for the short lengths; 40 sampled bins at N = 3000.
    std::vector<std::size_t> bins;
    if (n < 3000) {
      for (std::size_t m = 0; m < s.num_bins(); ++m) bins.push_back(m);
    } else {
      bins = {0, n / 2};
      while (bins.size() < 40) bins.push_back(uniform_index(pick, s.num_bins()));
    }
    for (std::size_t c = 0; c < C; ++c) {
      const auto oracle = direct_bins(x, n, C, c, bins, cos_t, sin_t);
      long double scale = 0, err = 0;
      for (std::size_t b = 0; b < bins.size(); ++b) {
        const auto got = s.at(bins[b], c);
        scale = std::max(scale, std::abs(oracle[b]));
        err = std::max(err, std::abs(cld(got.real(), got.imag()) - oracle[b]));
      }
      worst_rel = std::max(worst_rel, double(err / scale));
    }
    const auto back = idft(plan, s);
    for (std::size_t k = 0; k < x.size(); ++k)
      worst_rt = std::max(worst_rt, double(std::abs(back[k] - x[k])));
  }
  return {worst_rel <= 1e-6 && worst_rt <= 1e-5,
          fmt("%zu float signals, N in {4,50,178,3000}, C in {1,16}: max rel err %.2e "
              "(<= 1e-6), round-trip max abs %.2e (<= 1e-5)",
              signals, worst_rel, worst_rt)};
}

// ---------------------------------------------------------------------------
// 2. Full spectrum from the stored half.

Verdict HalfSpectrumCompleteness() {
  double worst = 0;
  std::size_t cases = 0;
  for (const std::size_t n : {1u, 2u, 3u, 4u, 9u, 50u, 64u, 178u, 255u, 256u}) {
    for (const std::size_t C : {1u, 16u}) {
      const auto x = testing::gaussian<double>(n * C, 7 * n + C);
      const auto full = full_spectrum(rdft<double>(x, n, C));
      for (std::size_t c = 0; c < C; ++c) {
        const auto oracle = testing::direct_dft(testing::column(x, n, C, c));
        long double scale = 1e-300L, err = 0;
        for (std::size_t m = 0; m < n; ++m) {
          const auto& v = full[m * C + c];
          scale = std::max(scale, std::abs(oracle[m]));
          err = std::max(err, std::abs(cld(v.real(), v.imag()) - oracle[m]));
        }
        worst = std::max(worst, double(err / scale));
        ++cases;
      }
    }
  }
  return {worst <= 1e-6,
          fmt("%zu columns, max rel err of all N bins vs direct DFT %.2e (<= 1e-6)", cases,
              worst)};
}

// ---------------------------------------------------------------------------
// 3. Gradient check on d=8, L=4, one block, one head.

Verdict GradientCheck() {
  ModelConfig c;
  c.seq_len = 8;
  c.patch_size = 2;
  c.in_channels = 2;
  c.embed_dim = 8;
  c.num_heads = 1;
  c.num_blocks = 1;
  c.ffn_dim = 16;
  std::vector<std::vector<double>> batch;
  std::vector<MaskPlan> plans;
  Rng rng(3);
  for (std::size_t i = 0; i < 2; ++i) {
    batch.push_back(testing::gaussian<double>(16, 40 + i));
    plans.push_back(sample_mask(c.num_patches(), 0.5, rng));
  }
  std::string detail;
  bool pass = true;
  for (const auto mode :
       {TargetMode::kSpatiotemporal, TargetMode::kFourier, TargetMode::kInvFourier}) {
    ModelConfig mc = c;
    mc.decoder = mode == TargetMode::kSpatiotemporal ? DecoderKind::kSpatiotemporal
                                                     : DecoderKind::kFourier;
    auto p = init_params<double>(mc, 9);
    for (auto* t : {&p.cls_token, &p.mask_token, &p.pos_embed, &p.blocks[0].rel_pos_bias})
      for (auto& v : t->values) v *= 25;
    const DftPlan<double> dft(mc.padded_len());
    const PretrainInputs<double> in{&mc, &dft, mode, {}};
    auto loss = [&](const Params<double>& q, Params<double>* g) {
      EncoderTrace<double> tr;
      double total = 0;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto target = to_polar(rdft<double>(dft, batch[i], mc.in_channels));
        total += pretrain_example<double>(in, q, batch[i], &target, plans[i], {}, tr, g, 0.5);
      }
      return total * 0.5;
    };
    GradCheckOptions opt;
    opt.step = 1e-4;
    opt.abs_floor = 1e-8;
    const auto r = grad_check(loss, p, mc, opt);
    pass = pass && r.max_rel_err <= 1e-4;
    detail += fmt("%s %.1e (%s) ", to_string(mode).c_str(), r.max_rel_err,
                  r.worst_tensor.c_str());
  }
  return {pass, "max rel err per loss, <= 1e-4: " + detail};
}

// ---------------------------------------------------------------------------
// 4. Parameter count of the Ninapro transformer.

Verdict ParamCount() {
  ModelConfig c;
  c.in_channels = 16;
  c.seq_len = 50;
  c.patch_size = 4;
  c.embed_dim = 128;
  c.num_blocks = 4;
  c.ffn_dim = 512;
  const double n = double(param_count(c));
  const double rel = std::abs(n - 0.798e6) / 0.798e6;
  return {rel <= 0.03, fmt("%.0f parameters vs 0.798e6, off by %.2f%% (<= 3%%)", n, 100 * rel)};
}

// ---------------------------------------------------------------------------
// 5. Mask sampling statistics.

Verdict MaskStatistics() {
  Rng rng(5);
  std::vector<std::size_t> hits(10, 0);
  bool exact = true;
  const std::size_t draws = 100000;
  for (std::size_t i = 0; i < draws; ++i) {
    const auto plan = sample_mask(10, 0.3, rng);
    exact = exact && plan.size() == 3;
    for (const auto m : plan.masked) ++hits[m];
  }
  double lo = 1, hi = 0;
  for (const auto h : hits) {
    lo = std::min(lo, double(h) / draws);
    hi = std::max(hi, double(h) / draws);
  }
  return {exact && lo >= 0.29 && hi <= 0.31,
          fmt("1e5 draws, count always 3: %s, index frequency in [%.4f, %.4f]",
              exact ? "yes" : "no", lo, hi)};
}

// ---------------------------------------------------------------------------
// 6-8. Synthetic learning, semi-supervised gap, probes.

struct SeedResult {
  double ft_pre = 0, ft_rand = 0;        // fraction 1.0
  double semi_pre = 0, semi_rand = 0;    // fraction 0.1
  double knn_pre = 0, knn_rand = 0;
  double untrained = 0;
};

ModelConfig CompactModel() {
  ModelConfig c;
  c.seq_len = 256;
  c.in_channels = 3;
  c.patch_size = 16;
  c.embed_dim = 32;
  c.num_blocks = 1;
  c.num_heads = 2;
  c.ffn_dim = 64;
  return c;
}

SeedResult RunSeed(std::uint64_t seed) {
  SyntheticSpec spec;  // 2500 examples, N=256, C=3, 5 classes, noise 0.5
  spec.seed = seed;
  const Dataset ds = gen_synthetic(spec);
  const Splits parts = split(ds, SplitSpec{0.8, 0.0, seed});
  const ModelConfig cfg = CompactModel();
  RunOptions quiet;
  SeedResult r;

  PretrainConfig pc;  // inv_fourier, r = 0.3, batch 256, lr 3e-3
  pc.epochs = 50;
  pc.seed = seed;
  const auto t0 = std::chrono::steady_clock::now();
  const auto pre = pretrain(parts.train, cfg, pc, quiet);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  note(fmt("seed %llu: %zu train / %zu test, pretrain loss %.4f -> %.4f in %.0f s",
           (unsigned long long)seed, parts.train.size(), parts.test.size(),
           pre.epoch_losses.front(), pre.epoch_losses.back(), secs));

  FinetuneConfig fc;  // 40 epochs, batch 128, lr 3e-4
  fc.seed = seed;
  r.ft_pre = finetune(&pre.checkpoint, parts.train, parts.test, cfg, fc, quiet).report.acc;
  r.ft_rand = finetune(nullptr, parts.train, parts.test, cfg, fc, quiet).report.acc;
  const Dataset sub = subsample_labels(parts.train, 0.1, seed);
  r.semi_pre = finetune(&pre.checkpoint, sub, parts.test, cfg, fc, quiet).report.acc;
  r.semi_rand = finetune(nullptr, sub, parts.test, cfg, fc, quiet).report.acc;
  note(fmt("seed %llu: finetune pre %.3f rand %.3f | 10%% labels (%zu) pre %.3f rand %.3f",
           (unsigned long long)seed, r.ft_pre, r.ft_rand, sub.size(), r.semi_pre,
           r.semi_rand));

  const auto& enc = pre.checkpoint;
  r.knn_pre = knn_probe(extract_features(enc.config, enc.params, parts.train),
                        extract_features(enc.config, enc.params, parts.test), 20);
  const auto random = init_params<float>(enc.config, seed);
  r.knn_rand = knn_probe(extract_features(enc.config, random, parts.train),
                         extract_features(enc.config, random, parts.test), 20);

  const ModelConfig head = task_config(cfg, ds.task);
  r.untrained = evaluate(head, init_params<float>(head, seed), parts.test).report.acc;
  note(fmt("seed %llu: knn pre %.3f rand %.3f | untrained model acc %.3f",
           (unsigned long long)seed, r.knn_pre, r.knn_rand, r.untrained));
  return r;
}

std::vector<SeedResult>& Synthetic() {
  static std::vector<SeedResult> results = [] {
    std::vector<SeedResult> out;
    for (const std::uint64_t seed : {0, 1, 2}) out.push_back(RunSeed(seed));
    return out;
  }();
  return results;
}

double Mean(const std::vector<SeedResult>& rs, double SeedResult::*field) {
  double s = 0;
  for (const auto& r : rs) s += r.*field;
  return s / double(rs.size());
}

Verdict EndToEnd() {
  const auto& rs = Synthetic();
  const double pre = Mean(rs, &SeedResult::ft_pre), rand = Mean(rs, &SeedResult::ft_rand);
  return {pre - rand >= 0.05,
          fmt("3 seeds: pretrained %.3f vs random init %.3f, gap %+.1f points (>= 5)", pre,
              rand, 100 * (pre - rand))};
}

Verdict SemiSupervised() {
  const auto& rs = Synthetic();
  const double gap01 = Mean(rs, &SeedResult::semi_pre) - Mean(rs, &SeedResult::semi_rand);
  const double gap10 = Mean(rs, &SeedResult::ft_pre) - Mean(rs, &SeedResult::ft_rand);
  return {gap01 >= gap10,
          fmt("3 seeds: gap at 10%% labels %+.1f points >= gap at 100%% %+.1f points",
              100 * gap01, 100 * gap10)};
}

Verdict Probes() {
  const auto& rs = Synthetic();
  const double pre = Mean(rs, &SeedResult::knn_pre), rand = Mean(rs, &SeedResult::knn_rand);
  double worst_chance = 0;
  for (const auto& r : rs) worst_chance = std::max(worst_chance, std::abs(r.untrained - 0.2));
  return {pre - rand >= 0.05 && worst_chance <= 0.05,
          fmt("kNN(k=20) pretrained %.3f vs random init %.3f, gap %+.1f points (>= 5); "
              "untrained model acc within %.3f of 0.2 (<= 0.05)",
              pre, rand, 100 * (pre - rand), worst_chance)};
}

// ---------------------------------------------------------------------------
// 9. Byte-identical CLI pretrain runs.

std::string Slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

int Cli(std::vector<std::string> args) {
  args.insert(args.begin(), "specmae");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run_cli(int(argv.size()), argv.data(), out, err);
  if (code != 0) std::cerr << err.str();
  return code;
}

Verdict Determinism() {
  const auto root = testing::scratch_dir("acceptance_determinism");
  const std::string data = (root / "data").string();
  if (Cli({"gen-data", "--out", data, "--num-examples", "400", "--seed", "3"}) != 0)
    return {false, "gen-data failed"};
  for (const char* run : {"a", "b"}) {
    if (Cli({"pretrain", "--data", data, "--out", (root / run).string(), "--deterministic",
             "--seed", "11", "--epochs", "4", "--patch-size", "16", "--embed-dim", "32",
             "--blocks", "1", "--heads", "2", "--ffn-dim", "64", "--batch-size", "64"}) != 0)
      return {false, "pretrain failed"};
  }
  bool same = true;
  std::string detail;
  for (const char* f : {"weights.f32", "manifest.json", "loss.csv"}) {
    const auto a = Slurp(root / "a" / f), b = Slurp(root / "b" / f);
    same = same && !a.empty() && a == b;
    detail += fmt("%s %zu bytes %s; ", f, a.size(), a == b ? "identical" : "DIFFER");
  }
  return {same, "two --deterministic pretrain runs: " + detail};
}

// ---------------------------------------------------------------------------
// 10. Worked metric examples.

Verdict Metrics() {
  const std::vector<std::uint32_t> labels = {0, 1, 0, 1};
  const auto single = compute_classification_metrics_from_predictions(
      std::vector<std::uint32_t>{0, 0, 0, 0}, labels, 2);
  const std::vector<std::uint32_t> five = {0, 1, 2, 3, 4, 2, 1};
  const auto perfect = compute_classification_metrics_from_predictions(five, five, 5);
  const bool pass = single.acc == 0.5 && single.macro_f1 == 1.0 / 3.0 && perfect.acc == 1.0 &&
                    perfect.macro_f1 == 1.0 && perfect.map == 1.0;
  return {pass, fmt("single-class predictor acc %.17g macro-F1 %.17g; perfect acc %g "
                    "macro-F1 %g mAP %g",
                    single.acc, single.macro_f1, perfect.acc, perfect.macro_f1, perfect.map)};
}

}  // namespace
}  // namespace specmae

int main() {
  using namespace specmae;
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"fourier oracle equivalence", FourierOracle},
      {"half-spectrum completeness", HalfSpectrumCompleteness},
      {"gradient verification", GradientCheck},
      {"parameter count", ParamCount},
      {"masking statistics", MaskStatistics},
      {"end-to-end synthetic learning", EndToEnd},
      {"semi-supervised trend", SemiSupervised},
      {"probe sanity", Probes},
      {"determinism", Determinism},
      {"metric correctness", Metrics},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    if (!v.pass) ++failed;
    std::cout << (v.pass ? "PASS" : "FAIL") << " [" << i + 1 << "] " << criteria[i].first
              << ": " << v.detail << std::endl;
  }
  std::cout << criteria.size() - failed << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failed == 0 ? 0 : 1;
}
