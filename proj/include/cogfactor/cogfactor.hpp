#pragma once

#include "cogfactor/core.hpp"
#include "cogfactor/data.hpp"
#include "cogfactor/eval.hpp"
#include "cogfactor/introspect.hpp"
#include "cogfactor/io.hpp"
#include "cogfactor/model.hpp"
#include "cogfactor/optim.hpp"
#include "cogfactor/projection.hpp"
#include "cogfactor/tensor_io.hpp"
