#pragma once

// Umbrella header for the kernel-dependent stick-breaking clustering library.

#include "kpyp/special_math.hpp"
#include "kpyp/kernel.hpp"
#include "kpyp/stick.hpp"
#include "kpyp/urn.hpp"
#include "kpyp/gaussian.hpp"
#include "kpyp/groups.hpp"
#include "kpyp/lbfgs.hpp"
#include "kpyp/location_opt.hpp"
#include "kpyp/vb.hpp"
#include "kpyp/metrics.hpp"
#include "kpyp/dataset.hpp"
