#pragma once

#include "dpbnn/calibration.hpp"
#include "dpbnn/checkpoint.hpp"
#include "dpbnn/csv.hpp"
#include "dpbnn/data_gen.hpp"
#include "dpbnn/dp_optim.hpp"
#include "dpbnn/experiment.hpp"
#include "dpbnn/matrix.hpp"
#include "dpbnn/network.hpp"
#include "dpbnn/posterior.hpp"
#include "dpbnn/privacy.hpp"
#include "dpbnn/rng.hpp"
