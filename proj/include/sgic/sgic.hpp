#pragma once

#include "errors.hpp"
#include "param_point.hpp"
#include "model_space.hpp"
#include "random.hpp"
#include "losses.hpp"
#include "solver.hpp"
#include "parallel.hpp"
#include "path_gic.hpp"
#include "experiments.hpp"
#include "io.hpp"
