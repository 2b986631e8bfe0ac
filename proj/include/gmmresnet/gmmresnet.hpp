// Copyright (c) 2026 The gmmresnet Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Umbrella header.

#include "gmmresnet/config.hpp"
#include "gmmresnet/corpus_io.hpp"
#include "gmmresnet/eval.hpp"
#include "gmmresnet/gmm.hpp"
#include "gmmresnet/lfcc.hpp"
#include "gmmresnet/model.hpp"
#include "gmmresnet/multiscale.hpp"
#include "gmmresnet/pipeline.hpp"
#include "gmmresnet/tensor.hpp"
#include "gmmresnet/training.hpp"
