#pragma once

#include "beatsim/analyze.hpp"
#include "beatsim/config_io.hpp"
#include "beatsim/error.hpp"
#include "beatsim/fit.hpp"
#include "beatsim/model.hpp"
#include "beatsim/numeric.hpp"
#include "beatsim/parallel.hpp"
#include "beatsim/rng.hpp"
#include "beatsim/simulate.hpp"
#include "beatsim/svg.hpp"
#include "beatsim/table_io.hpp"
