#pragma once

#include "network.hpp"
#include "linalg.hpp"
#include "edges.hpp"
#include "equilibrium.hpp"
#include "system_matrices.hpp"
#include "sdp.hpp"
#include "lmi.hpp"
#include "lyapunov.hpp"
#include "cct.hpp"
#include "sim.hpp"
