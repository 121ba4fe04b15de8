#pragma once

#include "netgrowth/calibration.hpp"
#include "netgrowth/csv.hpp"
#include "netgrowth/error.hpp"
#include "netgrowth/expm.hpp"
#include "netgrowth/inference.hpp"
#include "netgrowth/json_io.hpp"
#include "netgrowth/model.hpp"
#include "netgrowth/moments.hpp"
#include "netgrowth/risk.hpp"
#include "netgrowth/simulation.hpp"
