#pragma once

#include "drlqg/errors.hpp"
#include "drlqg/matops.hpp"
#include "drlqg/rng.hpp"
#include "drlqg/lqg_finite.hpp"
#include "drlqg/grad.hpp"
#include "drlqg/divergences.hpp"
#include "drlqg/oracles.hpp"
#include "drlqg/frank_wolfe.hpp"
#include "drlqg/stacked.hpp"
#include "drlqg/inf_horizon.hpp"
#include "drlqg/io.hpp"
#include "drlqg/experiments.hpp"
