#pragma once

#include "optdesign/dopt.hpp"
#include "optdesign/error.hpp"
#include "optdesign/harness.hpp"
#include "optdesign/oracles.hpp"
#include "optdesign/posterior.hpp"
#include "optdesign/remote.hpp"
#include "optdesign/rng.hpp"
#include "optdesign/selectors.hpp"
#include "optdesign/tasks.hpp"
#include "optdesign/theory.hpp"
