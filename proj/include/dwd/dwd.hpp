#pragma once

#include "dwd/container.hpp"
#include "dwd/convcore.hpp"
#include "dwd/decompose.hpp"
#include "dwd/errors.hpp"
#include "dwd/harness.hpp"
#include "dwd/linalg.hpp"
#include "dwd/netmodel.hpp"
#include "dwd/parallel.hpp"
#include "dwd/rng.hpp"
#include "dwd/sampler.hpp"
#include "dwd/tensor.hpp"
