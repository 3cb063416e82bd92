#pragma once

#include "merf/area_estimator.hpp"
#include "merf/bias_correction.hpp"
#include "merf/csv.hpp"
#include "merf/data.hpp"
#include "merf/error.hpp"
#include "merf/fixed_part.hpp"
#include "merf/forest.hpp"
#include "merf/log.hpp"
#include "merf/merf_fit.hpp"
#include "merf/metrics.hpp"
#include "merf/mixed_model.hpp"
#include "merf/model.hpp"
#include "merf/parallel.hpp"
#include "merf/random.hpp"
#include "merf/reb_bootstrap.hpp"
#include "merf/serialization.hpp"
#include "merf/simulation.hpp"
#include "merf/version.hpp"
