#pragma once

#include "pcbal/dataset.hpp"
#include "pcbal/error.hpp"
#include "pcbal/matrix.hpp"
#include "pcbal/metrics.hpp"
#include "pcbal/model.hpp"
#include "pcbal/pcb.hpp"
#include "pcbal/random.hpp"
#include "pcbal/strategies.hpp"
