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

// Umbrella header for the library; the CLI layer lives in commands.hpp.

#pragma once

#include "specmae/checkpoint.hpp"
#include "specmae/common.hpp"
#include "specmae/fourier.hpp"
#include "specmae/metrics.hpp"
#include "specmae/model.hpp"
#include "specmae/optim.hpp"
#include "specmae/pipeline.hpp"
#include "specmae/probes.hpp"
#include "specmae/report.hpp"
#include "specmae/signal_io.hpp"
