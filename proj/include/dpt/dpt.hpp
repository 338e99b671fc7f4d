#pragma once

#include "dpt/core.hpp"
#include "dpt/events.hpp"
#include "dpt/archive.hpp"
#include "dpt/reservoir.hpp"
#include "dpt/range_tree.hpp"
#include "dpt/maxvar.hpp"
#include "dpt/plan.hpp"
#include "dpt/partition_tree.hpp"
#include "dpt/estimator.hpp"
#include "dpt/partitioner.hpp"
#include "dpt/engine.hpp"
#include "dpt/shared_engine.hpp"
#include "dpt/harness.hpp"
