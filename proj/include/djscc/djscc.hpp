// Copyright (c) 2026 The djscc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "djscc/adam.hpp"
#include "djscc/autodiff.hpp"
#include "djscc/channel.hpp"
#include "djscc/checkpoint.hpp"
#include "djscc/config.hpp"
#include "djscc/data.hpp"
#include "djscc/eval.hpp"
#include "djscc/metrics.hpp"
#include "djscc/model.hpp"
#include "djscc/ops.hpp"
#include "djscc/rng.hpp"
#include "djscc/tensor.hpp"
#include "djscc/train.hpp"
