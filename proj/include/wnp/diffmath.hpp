#pragma once

// Reverse-mode differentiation over dense double-precision arrays.

#include "wnp/diffmath/ops.hpp"
#include "wnp/diffmath/tensor.hpp"
