#include "sagan/tensor.hpp"

#include <cmath>

namespace sagan {

bool all_finite(const Tensor& t) {
    for (double v : t.data)
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace sagan
