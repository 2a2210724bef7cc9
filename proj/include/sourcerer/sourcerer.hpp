#pragma once

// Umbrella header for the whole library.

#include "sourcerer/adam.hpp"
#include "sourcerer/checkpoint.hpp"
#include "sourcerer/dann.hpp"
#include "sourcerer/dataset.hpp"
#include "sourcerer/harness.hpp"
#include "sourcerer/layers.hpp"
#include "sourcerer/methods.hpp"
#include "sourcerer/metrics.hpp"
#include "sourcerer/mme.hpp"
#include "sourcerer/model_io.hpp"
#include "sourcerer/norm_stats.hpp"
#include "sourcerer/param_set.hpp"
#include "sourcerer/regularize.hpp"
#include "sourcerer/rng.hpp"
#include "sourcerer/synthetic.hpp"
#include "sourcerer/tempcnn.hpp"
#include "sourcerer/tensor.hpp"
