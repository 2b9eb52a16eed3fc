#pragma once

#include "advt/errors.hpp"
#include "advt/tensor.hpp"
#include "advt/kernels.hpp"
#include "advt/ops.hpp"
#include "advt/nn.hpp"
#include "advt/models.hpp"
#include "advt/optim.hpp"
#include "advt/checkpoint.hpp"
#include "advt/data.hpp"
#include "advt/attacks.hpp"
#include "advt/initializer.hpp"
#include "advt/schedule.hpp"
#include "advt/training.hpp"
#include "advt/metrics_io.hpp"
#include "advt/landscape.hpp"
#include "advt/experiment.hpp"
