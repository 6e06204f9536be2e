#pragma once

#include "watch/betting.hpp"
#include "watch/changepoint.hpp"
#include "watch/conformal.hpp"
#include "watch/density_ratio.hpp"
#include "watch/error.hpp"
#include "watch/experiment.hpp"
#include "watch/io.hpp"
#include "watch/metrics.hpp"
#include "watch/monitor.hpp"
#include "watch/numeric.hpp"
#include "watch/simulator.hpp"
