#pragma once

#include "itrnma/error.hpp"
#include "itrnma/stats.hpp"
#include "itrnma/core.hpp"
#include "itrnma/netmap.hpp"
#include "itrnma/glm.hpp"
#include "itrnma/bbdwols.hpp"
#include "itrnma/diagnostics.hpp"
#include "itrnma/nma.hpp"
#include "itrnma/simlab.hpp"
#include "itrnma/io.hpp"
#include "itrnma/demo.hpp"
