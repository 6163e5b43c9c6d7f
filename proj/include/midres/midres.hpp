#pragma once

// Umbrella header: the tensor/autodiff core, the network builders, training
// and evaluation, dataset tooling, and the verification harness.

#include "midres/blob.hpp"
#include "midres/checkpoint.hpp"
#include "midres/dataset.hpp"
#include "midres/gradcheck.hpp"
#include "midres/model.hpp"
#include "midres/optim.hpp"
#include "midres/report.hpp"
#include "midres/run_config.hpp"
#include "midres/tape.hpp"
#include "midres/train.hpp"
