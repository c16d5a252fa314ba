#pragma once

#include "fedesn/continual.hpp"
#include "fedesn/error.hpp"
#include "fedesn/federation.hpp"
#include "fedesn/json_io.hpp"
#include "fedesn/model_io.hpp"
#include "fedesn/random.hpp"
#include "fedesn/readout.hpp"
#include "fedesn/reservoir.hpp"
#include "fedesn/simulation.hpp"
#include "fedesn/spectral.hpp"
#include "fedesn/tasks.hpp"
#include "fedesn/time_series.hpp"
#include "fedesn/wire.hpp"
