#pragma once

#include "histmix/error.hpp"
#include "histmix/rng.hpp"
#include "histmix/parallel.hpp"
#include "histmix/partition.hpp"
#include "histmix/model.hpp"
#include "histmix/scenarios.hpp"
#include "histmix/em.hpp"
#include "histmix/fisher.hpp"
#include "histmix/modelsel.hpp"
#include "histmix/risklab.hpp"
#include "histmix/io.hpp"
