#pragma once

#include "maxplus/tensor.hpp"
#include "maxplus/rng.hpp"
#include "maxplus/tropical.hpp"
#include "maxplus/autodiff.hpp"
#include "maxplus/heads.hpp"
#include "maxplus/metrics.hpp"
#include "maxplus/data.hpp"
#include "maxplus/evaluate.hpp"
#include "maxplus/optim.hpp"
#include "maxplus/report.hpp"
#include "maxplus/pruning.hpp"
#include "maxplus/equivalence.hpp"
#include "maxplus/gradcheck.hpp"
#include "maxplus/checkpoint.hpp"
#include "maxplus/config.hpp"
#include "maxplus/commands.hpp"
