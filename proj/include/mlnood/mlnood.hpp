#pragma once

#include "mlnood/constraint.hpp"
#include "mlnood/distribution.hpp"
#include "mlnood/error.hpp"
#include "mlnood/fusion.hpp"
#include "mlnood/metrics.hpp"
#include "mlnood/mln.hpp"
#include "mlnood/schema.hpp"
#include "mlnood/search.hpp"
#include "mlnood/synth.hpp"
