#pragma once

// Everything except the command-line front end.

#include "lerm/config.hpp"
#include "lerm/format.hpp"
#include "lerm/model.hpp"
#include "lerm/numerics.hpp"
#include "lerm/risks.hpp"
#include "lerm/tasks.hpp"
#include "lerm/theory.hpp"
#include "lerm/trainer.hpp"
