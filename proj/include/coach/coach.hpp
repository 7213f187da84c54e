#ifndef COACH_COACH_HPP
#define COACH_COACH_HPP

#include "coach/error.hpp"
#include "coach/features.hpp"
#include "coach/graph.hpp"
#include "coach/offline.hpp"
#include "coach/online.hpp"
#include "coach/pipeline.hpp"
#include "coach/quant.hpp"
#include "coach/scenario.hpp"

#endif  // COACH_COACH_HPP
