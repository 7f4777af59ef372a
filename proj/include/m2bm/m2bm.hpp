// Copyright 2026 The m2bm Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include "m2bm/beamform.hpp"
#include "m2bm/error.hpp"
#include "m2bm/fcp.hpp"
#include "m2bm/io.hpp"
#include "m2bm/losses.hpp"
#include "m2bm/model.hpp"
#include "m2bm/scene.hpp"
#include "m2bm/spectral.hpp"
#include "m2bm/trainer.hpp"
#include "m2bm/wav.hpp"
