#pragma once

#include "autoannot/error.hpp"
#include "autoannot/geometry.hpp"
#include "autoannot/backends.hpp"
#include "autoannot/smart_od.hpp"
#include "autoannot/assoc.hpp"
#include "autoannot/ash.hpp"
#include "autoannot/codec.hpp"
#include "autoannot/chunker.hpp"
#include "autoannot/metrics.hpp"
#include "autoannot/config.hpp"
#include "autoannot/io.hpp"
#include "autoannot/pipeline.hpp"
