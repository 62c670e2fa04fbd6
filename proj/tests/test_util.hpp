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


// Shared helpers for the test suite: an independent direct-summation DFT in
// long double, random generators, and scratch directories.

#pragma once

#include <cmath>
#include <complex>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "specmae/common.hpp"

namespace specmae::testing {

using cld = std::complex<long double>;

// Full N-bin DFT of one real column, X_m = sum_n x_n e^{-2 pi i m n / N}.
// Angles are reduced mod N in integers so large N stays accurate.
inline std::vector<cld> direct_dft(const std::vector<long double>& x) {
  const std::size_t n = x.size();
  const long double two_pi = 2.0L * std::acos(-1.0L);
  std::vector<cld> out(n);
  for (std::size_t m = 0; m < n; ++m) {
    cld acc = 0;
    for (std::size_t t = 0; t < n; ++t) {
      const long double a = two_pi * static_cast<long double>((m * t) % n) /
                            static_cast<long double>(n);
      acc += x[t] * cld(std::cos(a), -std::sin(a));
    }
    out[m] = acc;
  }
  return out;
}

// Column c of a time-major [N x C] buffer.
template <typename T>
std::vector<long double> column(const std::vector<T>& x, std::size_t n,
                                std::size_t channels, std::size_t c) {
  std::vector<long double> col(n);
  for (std::size_t t = 0; t < n; ++t) col[t] = x[t * channels + c];
  return col;
}

template <typename T>
std::vector<T> gaussian(std::size_t count, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  std::vector<T> v(count);
  for (auto& x : v) x = static_cast<T>(scale * normal01(rng));
  return v;
}

// Fresh empty directory under the system temp path.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("specmae_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace specmae::testing
