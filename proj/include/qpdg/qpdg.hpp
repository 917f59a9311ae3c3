#pragma once

#include "qpdg/common.hpp"
#include "qpdg/meso_grid.hpp"
#include "qpdg/cell_fem.hpp"
#include "qpdg/media.hpp"
#include "qpdg/swip_tensor.hpp"
#include "qpdg/linear_solve.hpp"
#include "qpdg/lowrank_solver.hpp"
#include "qpdg/reference_solvers.hpp"
#include "qpdg/harness.hpp"
#include "qpdg/io.hpp"
