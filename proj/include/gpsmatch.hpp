#pragma once

#include "gpsmatch/error.hpp"
#include "gpsmatch/data.hpp"
#include "gpsmatch/csv.hpp"
#include "gpsmatch/regression.hpp"
#include "gpsmatch/gps.hpp"
#include "gpsmatch/parallel.hpp"
#include "gpsmatch/matching.hpp"
#include "gpsmatch/balance.hpp"
#include "gpsmatch/tuning.hpp"
#include "gpsmatch/smoothing.hpp"
#include "gpsmatch/estimators.hpp"
#include "gpsmatch/pipeline.hpp"
#include "gpsmatch/inference.hpp"
#include "gpsmatch/simulation.hpp"
