#pragma once

#include "vismem/analysis.hpp"
#include "vismem/classify.hpp"
#include "vismem/core.hpp"
#include "vismem/error.hpp"
#include "vismem/fixture.hpp"
#include "vismem/pack.hpp"
#include "vismem/parallel.hpp"
#include "vismem/prune.hpp"
#include "vismem/search.hpp"
#include "vismem/store.hpp"
#include "vismem/taxonomy.hpp"
