#pragma once

#include "bohmian.hpp"
#include "classical.hpp"
#include "gaussian.hpp"
#include "oracle.hpp"
#include "propagation.hpp"
#include "scenario.hpp"
#include "validation.hpp"
#include "weak.hpp"
