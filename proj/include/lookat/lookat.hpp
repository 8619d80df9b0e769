#pragma once

#include "lookat/adc.hpp"
#include "lookat/bench.hpp"
#include "lookat/common.hpp"
#include "lookat/metrics.hpp"
#include "lookat/pq.hpp"
#include "lookat/scalarquant.hpp"
#include "lookat/tensorio.hpp"
