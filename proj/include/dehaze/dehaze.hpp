// SPDX-License-Identifier: Apache-2.0
//
// Umbrella header.
#pragma once

#include "dehaze/asm.hpp"
#include "dehaze/autograd.hpp"
#include "dehaze/checkpoint.hpp"
#include "dehaze/config.hpp"
#include "dehaze/convert.hpp"
#include "dehaze/dataio.hpp"
#include "dehaze/drem.hpp"
#include "dehaze/errors.hpp"
#include "dehaze/image.hpp"
#include "dehaze/inr.hpp"
#include "dehaze/kan.hpp"
#include "dehaze/kan_cid.hpp"
#include "dehaze/layers.hpp"
#include "dehaze/metrics.hpp"
#include "dehaze/network.hpp"
#include "dehaze/ops.hpp"
#include "dehaze/optim.hpp"
#include "dehaze/rng.hpp"
#include "dehaze/tensor.hpp"
#include "dehaze/training.hpp"
