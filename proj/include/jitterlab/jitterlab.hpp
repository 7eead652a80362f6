#pragma once

// Everything: model, quadrature, estimators, diagnostics and the experiment
// harness.

#include "jitterlab/diagnostics.hpp"
#include "jitterlab/em.hpp"
#include "jitterlab/harness/experiments.hpp"
#include "jitterlab/linear.hpp"
#include "jitterlab/sampler.hpp"
