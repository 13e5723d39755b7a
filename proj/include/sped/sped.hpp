#pragma once

#include "sped/box_lbfgs.hpp"
#include "sped/cokrige.hpp"
#include "sped/design.hpp"
#include "sped/error.hpp"
#include "sped/estimate.hpp"
#include "sped/evaluate.hpp"
#include "sped/glasso.hpp"
#include "sped/io.hpp"
#include "sped/metrics.hpp"
#include "sped/mimic.hpp"
#include "sped/oracle.hpp"
#include "sped/spectral.hpp"
