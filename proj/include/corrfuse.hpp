#pragma once

// Umbrella header: everything in the library.  Individual headers can be
// included on their own; the dependency order below is informative only.

#include "corrfuse/errors.hpp"
#include "corrfuse/rng.hpp"
#include "corrfuse/simplex.hpp"
#include "corrfuse/types.hpp"
#include "corrfuse/logspace.hpp"
#include "corrfuse/sampling.hpp"
#include "corrfuse/density.hpp"
#include "corrfuse/mcmc.hpp"
#include "corrfuse/fusion.hpp"
#include "corrfuse/inference.hpp"
#include "corrfuse/calibration.hpp"
#include "corrfuse/datagen.hpp"
#include "corrfuse/data_io.hpp"
#include "corrfuse/parallel.hpp"
#include "corrfuse/report.hpp"
#include "corrfuse/cli.hpp"
