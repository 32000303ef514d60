// Copyright 2026 The mlcm-lab Authors
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Umbrella header for the whole library.

#pragma once

#include "mlcm/catalog.hpp"
#include "mlcm/elicitation.hpp"
#include "mlcm/fairness.hpp"
#include "mlcm/harness.hpp"
#include "mlcm/market.hpp"
#include "mlcm/mechanism.hpp"
#include "mlcm/prefgen.hpp"
#include "mlcm/reporting.hpp"
#include "mlcm/rng.hpp"
#include "mlcm/service.hpp"
#include "mlcm/valuation.hpp"
#include "mlcm/valuemodel.hpp"
