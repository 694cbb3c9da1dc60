#pragma once

#include "antfilter/core.hpp"
#include "antfilter/corrkernel.hpp"
#include "antfilter/io.hpp"
#include "antfilter/kalman.hpp"
#include "antfilter/models.hpp"
#include "antfilter/particle.hpp"
#include "antfilter/rng.hpp"
#include "antfilter/scenario.hpp"
#include "antfilter/simulate.hpp"
#include "antfilter/stability.hpp"
#include "antfilter/volterra.hpp"
