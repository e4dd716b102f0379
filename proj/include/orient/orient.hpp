#pragma once

#include "orient/tensor.hpp"
#include "orient/ops.hpp"
#include "orient/autodiff.hpp"
#include "orient/gradcheck.hpp"
#include "orient/geometry.hpp"
#include "orient/attention.hpp"
#include "orient/model.hpp"
#include "orient/synth.hpp"
#include "orient/optim.hpp"
#include "orient/metrics.hpp"
#include "orient/train.hpp"
#include "orient/snapshot.hpp"
#include "orient/config.hpp"
#include "orient/io.hpp"
#include "orient/runner.hpp"
#include "orient/gradsuite.hpp"
#include "orient/acceptance.hpp"
