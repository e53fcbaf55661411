#pragma once

#include "iafm/analytics.hpp"
#include "iafm/data_model.hpp"
#include "iafm/error.hpp"
#include "iafm/glmm/covariance.hpp"
#include "iafm/glmm/design.hpp"
#include "iafm/glmm/fit.hpp"
#include "iafm/glmm/laplace.hpp"
#include "iafm/glmm/optimizer.hpp"
#include "iafm/glmm/quadrature.hpp"
#include "iafm/ingest.hpp"
#include "iafm/model_zoo.hpp"
#include "iafm/stats.hpp"
#include "iafm/synthgen.hpp"
