#pragma once

#include "retropanel/baselines.hpp"
#include "retropanel/dgp.hpp"
#include "retropanel/errors.hpp"
#include "retropanel/impute.hpp"
#include "retropanel/inference.hpp"
#include "retropanel/io.hpp"
#include "retropanel/panel.hpp"
#include "retropanel/pipeline.hpp"
#include "retropanel/solver.hpp"
#include "retropanel/types.hpp"
#include "retropanel/util.hpp"
#include "retropanel/weights.hpp"
