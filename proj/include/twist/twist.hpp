#pragma once

#include "twist/app_head.hpp"
#include "twist/controller.hpp"
#include "twist/core_types.hpp"
#include "twist/error.hpp"
#include "twist/harness/config.hpp"
#include "twist/harness/episode.hpp"
#include "twist/harness/grid.hpp"
#include "twist/harness/offline.hpp"
#include "twist/harness/pipeline.hpp"
#include "twist/metrics.hpp"
#include "twist/phy.hpp"
#include "twist/receiver.hpp"
#include "twist/rng.hpp"
#include "twist/scene.hpp"
#include "twist/uep.hpp"
