#pragma once

#include "pfgan/diffmath/gradcheck.hpp"
#include "pfgan/diffmath/graph.hpp"
#include "pfgan/diffmath/ops.hpp"
#include "pfgan/diffmath/optim.hpp"
#include "pfgan/diffmath/random.hpp"
#include "pfgan/diffmath/tensor.hpp"
