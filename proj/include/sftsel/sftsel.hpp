#pragma once

#include "sftsel/corpus.hpp"
#include "sftsel/error.hpp"
#include "sftsel/gateway.hpp"
#include "sftsel/geometry.hpp"
#include "sftsel/grader.hpp"
#include "sftsel/insights.hpp"
#include "sftsel/judge.hpp"
#include "sftsel/rng.hpp"
#include "sftsel/selection.hpp"
