#pragma once

#include "fedfair/numkit/matrix.hpp"
#include "fedfair/numkit/model.hpp"
#include "fedfair/numkit/optimizer.hpp"
#include "fedfair/numkit/rng.hpp"
