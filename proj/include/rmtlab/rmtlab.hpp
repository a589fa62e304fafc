#pragma once

#include "rmtlab/error.hpp"
#include "rmtlab/matrix_spaces.hpp"
#include "rmtlab/rng.hpp"
#include "rmtlab/stats.hpp"
#include "rmtlab/ensembles.hpp"
#include "rmtlab/trace_stats.hpp"
#include "rmtlab/theory.hpp"
#include "rmtlab/stein_lab.hpp"
#include "rmtlab/moment_oracle.hpp"
#include "rmtlab/test_functions.hpp"
#include "rmtlab/harness.hpp"
