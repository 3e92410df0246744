// Copyright 2026 The adhoc-locate Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "adhoc_locate/doa.hpp"
#include "adhoc_locate/errors.hpp"
#include "adhoc_locate/experiment.hpp"
#include "adhoc_locate/fusion.hpp"
#include "adhoc_locate/geometry.hpp"
#include "adhoc_locate/metrics.hpp"
#include "adhoc_locate/nn.hpp"
#include "adhoc_locate/pipeline.hpp"
#include "adhoc_locate/room_sim.hpp"
#include "adhoc_locate/sigproc.hpp"
