#pragma once

// Convenience header pulling in the whole library.

#include "igmrf/config.hpp"
#include "igmrf/densities.hpp"
#include "igmrf/design.hpp"
#include "igmrf/diagnostics.hpp"
#include "igmrf/error.hpp"
#include "igmrf/gmrf.hpp"
#include "igmrf/io.hpp"
#include "igmrf/mesh.hpp"
#include "igmrf/model.hpp"
#include "igmrf/rng.hpp"
#include "igmrf/sampler.hpp"
#include "igmrf/synth.hpp"
