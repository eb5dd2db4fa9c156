#pragma once

#include "timeleak/counter.hpp"
#include "timeleak/dataset.hpp"
#include "timeleak/error.hpp"
#include "timeleak/generators.hpp"
#include "timeleak/manifest.hpp"
#include "timeleak/network.hpp"
#include "timeleak/quantifier.hpp"
#include "timeleak/schema.hpp"
#include "timeleak/svg.hpp"
#include "timeleak/sweep.hpp"
#include "timeleak/train.hpp"
