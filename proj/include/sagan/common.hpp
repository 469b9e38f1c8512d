#ifndef SAGAN_COMMON_HPP
#define SAGAN_COMMON_HPP

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>

namespace sagan {

// ============================================================================
// Error hierarchy
// ============================================================================

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor / batch dimensions do not line up.
struct ShapeError : Error {
    using Error::Error;
};

// Bad argument value (lengths, ranges, empty batches).
struct ValueError : Error {
    using Error::Error;
};

// Transform matrix is singular below the construction tolerance.
struct SingularMatrixError : Error {
    using Error::Error;
};

// Operation not defined for the given transform kind (e.g. TPS inverse).
struct UnsupportedKindError : Error {
    using Error::Error;
};

// Malformed or unknown configuration keys / CLI usage.
struct ConfigError : Error {
    using Error::Error;
};

// Filesystem / checkpoint / dataset load failures.
struct IoError : Error {
    using Error::Error;
};

// Non-finite values encountered where finiteness is an invariant.
struct NumericError : Error {
    using Error::Error;
};

// ============================================================================
// Deterministic parallelism
// ============================================================================

// Global worker count for batch-parallel kernels. Results are invariant to
// the thread count: every reduction is accumulated in item order.
void set_num_threads(int n);
int num_threads();

// Runs fn(i) for i in [0, n). Partition is by contiguous index ranges; fn
// must only write to per-index state.
void parallel_for(int64_t n, const std::function<void(int64_t)>& fn);

}  // namespace sagan

#endif  // SAGAN_COMMON_HPP
