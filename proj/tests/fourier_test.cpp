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


#include <cmath>
#include <complex>
#include <vector>

#include "gtest/gtest.h"
#include "specmae/fourier.hpp"
#include "test_util.hpp"

namespace specmae {
namespace {

using testing::cld;

constexpr double kPi = 3.14159265358979323846;

// Relative error of the stored half against the oracle, normalized by the
// largest oracle magnitude in the column.
double HalfSpectrumError(const Spectrum<double>& s, const std::vector<double>& x,
                         std::size_t n, std::size_t channels) {
  double worst = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    const auto X = testing::direct_dft(testing::column(x, n, channels, c));
    long double scale = 1e-30L;
    for (const auto& v : X) scale = std::max(scale, std::abs(v));
    for (std::size_t m = 0; m < half_bins(n); ++m) {
      const cld got(s.at(m, c).real(), s.at(m, c).imag());
      worst = std::max(worst, double(std::abs(got - X[m]) / scale));
    }
  }
  return worst;
}

TEST(RdftTest, HandExamples) {
  const std::vector<double> ones = {1, 1, 1, 1};
  auto s = rdft<double>(ones, 4, 1);
  ASSERT_EQ(s.bins.size(), 3u);
  EXPECT_NEAR(s.bins[0].real(), 4, 1e-12);
  EXPECT_NEAR(std::abs(s.bins[1]), 0, 1e-12);
  EXPECT_NEAR(std::abs(s.bins[2]), 0, 1e-12);

  const std::vector<double> cosine = {1, 0, -1, 0};
  s = rdft<double>(cosine, 4, 1);
  EXPECT_NEAR(std::abs(s.bins[0]), 0, 1e-12);
  EXPECT_NEAR(s.bins[1].real(), 2, 1e-12);
  EXPECT_NEAR(s.bins[1].imag(), 0, 1e-12);
  EXPECT_NEAR(std::abs(s.bins[2]), 0, 1e-12);

  const std::vector<double> sine = {0, 1, 0, -1};
  s = rdft<double>(sine, 4, 1);
  EXPECT_NEAR(s.bins[1].real(), 0, 1e-12);
  EXPECT_NEAR(s.bins[1].imag(), -2, 1e-12);
}

TEST(RdftTest, EdgeBinsAreReal) {
  for (const std::size_t n : {1u, 2u, 7u, 8u, 50u, 64u}) {
    const auto x = testing::gaussian<double>(n * 3, n);
    const auto s = rdft<double>(x, n, 3);
    ASSERT_EQ(s.num_bins(), n / 2 + 1);
    for (std::size_t c = 0; c < 3; ++c) {
      EXPECT_EQ(s.at(0, c).imag(), 0.0);
      if (n % 2 == 0) {
        EXPECT_EQ(s.at(n / 2, c).imag(), 0.0);
      }
    }
  }
}

TEST(RdftTest, MatchesOracleAcrossLengths) {
  for (const std::size_t n : {1u, 2u, 3u, 4u, 5u, 16u, 50u, 128u, 178u, 256u}) {
    for (const std::size_t C : {1u, 3u}) {
      const auto x = testing::gaussian<double>(n * C, 100 + n + C);
      const auto s = rdft<double>(x, n, C);
      EXPECT_LT(HalfSpectrumError(s, x, n, C), 1e-10) << "n=" << n;
    }
  }
}

TEST(RdftTest, FastPathAgreesWithDirectSummation) {
  for (const std::size_t n : {2u, 4u, 8u, 64u, 256u, 1024u}) {
    const DftPlan<double> plan(n);
    ASSERT_TRUE(plan.uses_fft());
    const auto x = testing::gaussian<double>(n, n);
    std::vector<std::complex<double>> fast(half_bins(n)), slow(half_bins(n));
    plan.forward(x, fast, true);
    plan.forward(x, slow, false);
    double scale = 0, err = 0;
    for (std::size_t m = 0; m < fast.size(); ++m) {
      scale = std::max(scale, std::abs(slow[m]));
      err = std::max(err, std::abs(fast[m] - slow[m]));
    }
    EXPECT_LT(err / scale, 1e-12) << "n=" << n;
    std::vector<double> a(n), b(n);
    plan.inverse(fast, a, true);
    plan.inverse(fast, b, false);
    for (std::size_t t = 0; t < n; ++t) EXPECT_NEAR(a[t], b[t], 1e-12);
  }
}

TEST(IdftTest, HandExamples) {
  Spectrum<double> s{4, 1, {{4, 0}, {0, 0}, {0, 0}}};
  for (const double v : idft(s)) EXPECT_NEAR(v, 1.0, 1e-12);
  s.bins = {{0, 0}, {2, 0}, {0, 0}};
  const auto x = idft(s);
  const double expect[4] = {1, 0, -1, 0};
  for (std::size_t t = 0; t < 4; ++t) EXPECT_NEAR(x[t], expect[t], 1e-12);
}

TEST(IdftTest, RoundTripFloat) {
  for (const std::size_t n : {50u, 52u, 178u, 256u, 3000u}) {
    const auto x = testing::gaussian<float>(n * 16, n);
    const auto back = idft(rdft<float>(x, n, 16));
    double err = 0;
    for (std::size_t k = 0; k < x.size(); ++k)
      err = std::max(err, double(std::abs(back[k] - x[k])));
    EXPECT_LE(err, 1e-5) << "n=" << n;
  }
}

// Expanding the stored half by conjugate symmetry and summing the full
// inverse leaves an imaginary residue that must vanish.
TEST(IdftTest, SymmetricExpansionHasNoImaginaryResidue) {
  for (const std::size_t n : {5u, 8u, 50u}) {
    const auto x = testing::gaussian<double>(n, 7 * n);
    const auto s = rdft<double>(x, n, 1);
    std::vector<cld> full(n);
    for (std::size_t m = 0; m < n; ++m) {
      const auto& b = m < s.num_bins() ? s.bins[m] : s.bins[n - m];
      full[m] = m < s.num_bins() ? cld(b.real(), b.imag()) : cld(b.real(), -b.imag());
    }
    const long double two_pi = 2.0L * std::acos(-1.0L);
    for (std::size_t t = 0; t < n; ++t) {
      cld acc = 0;
      for (std::size_t m = 0; m < n; ++m) {
        const long double a = two_pi * static_cast<long double>((m * t) % n) / n;
        acc += full[m] * cld(std::cos(a), std::sin(a));
      }
      acc /= static_cast<long double>(n);
      EXPECT_LE(std::abs(double(acc.imag())), 1e-6);
      EXPECT_NEAR(double(acc.real()), x[t], 1e-9);
    }
  }
}

TEST(FullSpectrumTest, MatchesFullDirectDft) {
  for (const std::size_t n : {1u, 2u, 7u, 8u, 50u, 178u}) {
    const std::size_t C = 2;
    const auto x = testing::gaussian<double>(n * C, 11 * n);
    const auto full = full_spectrum(rdft<double>(x, n, C));
    ASSERT_EQ(full.size(), n * C);
    for (std::size_t c = 0; c < C; ++c) {
      const auto oracle = testing::direct_dft(testing::column(x, n, C, c));
      long double scale = 1e-30L, err = 0;
      for (std::size_t m = 0; m < n; ++m) {
        const cld got(full[m * C + c].real(), full[m * C + c].imag());
        scale = std::max(scale, std::abs(oracle[m]));
        err = std::max(err, std::abs(got - oracle[m]));
      }
      EXPECT_LT(double(err / scale), 1e-10) << "n=" << n;
    }
  }
}

TEST(PolarTest, HandExamples) {
  Spectrum<double> s{4, 1, {{2, 0}, {0, -2}, {0, 0}}};
  const auto p = to_polar(s);
  EXPECT_DOUBLE_EQ(p.magnitude[0], 2);
  EXPECT_DOUBLE_EQ(p.phase[0], 0);
  EXPECT_DOUBLE_EQ(p.magnitude[1], 2);
  EXPECT_DOUBLE_EQ(p.phase[1], -kPi / 2);
  EXPECT_DOUBLE_EQ(p.magnitude[2], 0);
  EXPECT_DOUBLE_EQ(p.phase[2], 0);

  PolarSpectrum<double> q{4, 1, {2, 2, 0}, {0, -kPi / 2, 0}};
  const auto back = from_polar(q);
  EXPECT_NEAR(back.bins[0].real(), 2, 1e-15);
  EXPECT_NEAR(back.bins[1].real(), 0, 1e-15);
  EXPECT_NEAR(back.bins[1].imag(), -2, 1e-15);

  PolarSpectrum<double> dc{4, 1, {1, 0, 0}, {kPi, 0, 0}};
  const auto r = from_polar(dc);
  EXPECT_DOUBLE_EQ(r.bins[0].real(), -1);
  EXPECT_EQ(r.bins[0].imag(), 0.0);

  q.magnitude[1] = -1;
  EXPECT_THROW(from_polar(q), NumericError);
}

TEST(PolarTest, RoundTripAndRange) {
  for (const std::size_t n : {7u, 8u, 52u}) {
    const auto x = testing::gaussian<double>(n * 4, n + 1);
    const auto s = rdft<double>(x, n, 4);
    const auto p = to_polar(s);
    for (std::size_t k = 0; k < p.phase.size(); ++k) {
      EXPECT_GE(p.magnitude[k], 0);
      EXPECT_GT(p.phase[k], -kPi - 1e-15);
      EXPECT_LE(p.phase[k], kPi);
    }
    const auto back = from_polar(p);
    for (std::size_t k = 0; k < s.bins.size(); ++k)
      EXPECT_LE(std::abs(back.bins[k] - s.bins[k]), 1e-6 * (1 + std::abs(s.bins[k])));
  }
}

TEST(DenoiseTest, Examples) {
  const std::size_t n = 52, C = 16;
  const auto x = testing::gaussian<double>(n * C, 3);
  const auto p = to_polar(rdft<double>(x, n, C));
  const auto xhat = denoise_reconstruct(p);
  for (std::size_t k = 0; k < x.size(); ++k) EXPECT_NEAR(xhat[k], x[k], 1e-10);

  auto zero = p;
  std::fill(zero.magnitude.begin(), zero.magnitude.end(), 0.0);
  for (const double v : denoise_reconstruct(zero)) EXPECT_EQ(v, 0.0);

  auto flipped = p;
  flipped.phase[3 * C + 2] += kPi;
  const auto y = denoise_reconstruct(flipped);
  double gap = 0;
  for (std::size_t k = 0; k < x.size(); ++k) gap += (y[k] - x[k]) * (y[k] - x[k]);
  EXPECT_GT(gap, 1e-3);
}

TEST(DenoiseTest, VjpMatchesFiniteDifferences) {
  for (const std::size_t n : {7u, 8u}) {
    const std::size_t C = 2;
    const auto x = testing::gaussian<double>(n * C, 5 + n);
    auto p = to_polar(rdft<double>(x, n, C));
    const auto w = testing::gaussian<double>(n * C, 9 + n);
    auto loss = [&](const PolarSpectrum<double>& q) {
      const auto y = denoise_reconstruct(q);
      double s = 0;
      for (std::size_t k = 0; k < y.size(); ++k) s += w[k] * y[k];
      return s;
    };
    std::vector<double> dmag(p.magnitude.size()), dphase(p.phase.size());
    denoise_reconstruct_vjp<double>(DftPlan<double>(n), p, w, dmag, dphase);
    const double h = 1e-6;
    for (std::size_t k = 0; k < dmag.size(); ++k) {
      auto up = p, down = p;
      up.magnitude[k] += h;
      down.magnitude[k] -= h;
      EXPECT_NEAR(dmag[k], (loss(up) - loss(down)) / (2 * h), 1e-7);
      up = p;
      down = p;
      up.phase[k] += h;
      down.phase[k] -= h;
      EXPECT_NEAR(dphase[k], (loss(up) - loss(down)) / (2 * h), 1e-7);
    }
  }
}

TEST(FourierPropertyTest, Linearity) {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 100);
    const auto x = testing::gaussian<double>(n, 2 * trial);
    const auto y = testing::gaussian<double>(n, 2 * trial + 1);
    const double a = normal01(rng), b = normal01(rng);
    std::vector<double> z(n);
    for (std::size_t t = 0; t < n; ++t) z[t] = a * x[t] + b * y[t];
    const auto X = rdft<double>(x, n, 1), Y = rdft<double>(y, n, 1),
               Z = rdft<double>(z, n, 1);
    for (std::size_t m = 0; m < Z.bins.size(); ++m) {
      const auto expect = a * X.bins[m] + b * Y.bins[m];
      EXPECT_LE(std::abs(Z.bins[m] - expect), 1e-6 * (1 + std::abs(expect)));
    }
  }
}

TEST(FourierPropertyTest, Parseval) {
  Rng rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 300);
    const auto x = testing::gaussian<double>(n, 1000 + trial);
    const auto s = rdft<double>(x, n, 1);
    double time = 0, freq = 0;
    for (const double v : x) time += v * v;
    for (std::size_t m = 0; m < s.bins.size(); ++m) {
      const bool edge = m == 0 || (n % 2 == 0 && m == n / 2);
      freq += (edge ? 1.0 : 2.0) * std::norm(s.bins[m]);
    }
    EXPECT_NEAR(freq / double(n), time, 1e-5 * time);
  }
}

TEST(FourierPropertyTest, TargetSizeBound) {
  for (std::size_t n = 1; n < 200; ++n)
    for (const std::size_t C : {1u, 16u})
      EXPECT_LE(2 * half_bins(n) * C, n * C + 2 * C);
}

}  // namespace
}  // namespace specmae
