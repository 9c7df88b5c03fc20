#pragma once

#include "stmsim/error.hpp"
#include "stmsim/medium.hpp"
#include "stmsim/harmonics.hpp"
#include "stmsim/dispersion.hpp"
#include "stmsim/scattering.hpp"
#include "stmsim/fdtd.hpp"
#include "stmsim/output.hpp"
#include "stmsim/config.hpp"
#include "stmsim/commands.hpp"
