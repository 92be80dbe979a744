#pragma once

#include "slimcomm/geometry.hpp"
#include "slimcomm/grid.hpp"
#include "slimcomm/scene.hpp"
#include "slimcomm/sensors.hpp"
#include "slimcomm/bev.hpp"
#include "slimcomm/priors.hpp"
#include "slimcomm/querygen.hpp"
#include "slimcomm/comm.hpp"
#include "slimcomm/fusion.hpp"
#include "slimcomm/config.hpp"
#include "slimcomm/harness.hpp"
