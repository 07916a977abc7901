#pragma once

#include "specdraft/config.hpp"
#include "specdraft/continuation_tree.hpp"
#include "specdraft/datastore.hpp"
#include "specdraft/draft.hpp"
#include "specdraft/fusion.hpp"
#include "specdraft/harness.hpp"
#include "specdraft/input_cache.hpp"
#include "specdraft/perf_model.hpp"
#include "specdraft/session.hpp"
#include "specdraft/types.hpp"
