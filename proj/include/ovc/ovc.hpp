#pragma once

#include "ovc/numerics.hpp"
#include "ovc/netmodel.hpp"
#include "ovc/powerflow.hpp"
#include "ovc/sensitivity.hpp"
#include "ovc/controller.hpp"
#include "ovc/caseio.hpp"
