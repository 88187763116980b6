#pragma once

// Everything: the numerical core plus the training harness.

#include "mcl/augment.hpp"
#include "mcl/autodiff.hpp"
#include "mcl/gradcheck.hpp"
#include "mcl/loss.hpp"
#include "mcl/model.hpp"
#include "mcl/montage.hpp"
#include "mcl/nn.hpp"
#include "mcl/objective.hpp"
#include "mcl/ops.hpp"
#include "mcl/optim.hpp"
#include "mcl/rng.hpp"
#include "mcl/supervised.hpp"
#include "mcl/tensor.hpp"

#include "mcl/harness/ablate.hpp"
#include "mcl/harness/checkpoint.hpp"
#include "mcl/harness/config.hpp"
#include "mcl/harness/dataset.hpp"
#include "mcl/harness/gradcheck_suite.hpp"
#include "mcl/harness/image_io.hpp"
#include "mcl/harness/metrics.hpp"
#include "mcl/harness/preview.hpp"
#include "mcl/harness/probe.hpp"
#include "mcl/harness/trainer.hpp"
