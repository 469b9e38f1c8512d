#ifndef SAGAN_GRADCHECK_HPP
#define SAGAN_GRADCHECK_HPP

#include <functional>
#include <string>
#include <vector>

#include "sagan/tape.hpp"

namespace sagan::gradcheck {

// Builds a scalar objective from leaf Vars (one per input tensor). Must be a
// pure function of the leaf values: it is re-invoked for finite differencing.
using GraphBuilder =
    std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

struct CheckOptions {
    double step = 1e-4;       // central-difference step
    double tolerance = 1e-3;  // max relative error allowed
    double floor = 1e-4;      // denominator floor for near-zero gradients
    int max_coords = -1;      // per input; -1 checks every coordinate
    uint64_t seed = 17;       // coordinate subsample seed
};

struct CheckResult {
    std::string name;
    double max_rel_err = 0.0;
    int coords_checked = 0;
    bool pass = false;
};

CheckResult check_gradients(const std::string& name,
                            std::vector<Tensor> inputs,
                            const GraphBuilder& builder,
                            const CheckOptions& opts = {});

// Same check for parameters living inside model storage: the builder reads
// them through Tape::param, analytic gradients come from Tape::grad_of, and
// finite differences perturb the storage in place.
using ModelBuilder = std::function<ad::Var(ad::Tape&)>;

CheckResult check_parameter_gradients(const std::string& name,
                                      const std::vector<Tensor*>& params,
                                      const ModelBuilder& builder,
                                      const CheckOptions& opts = {});

// The full finite-difference suite behind `sagan gradcheck`: warp w.r.t.
// image and params for all kinds, transform inversion, every loss, the
// network building blocks, and a complete forward cycle on tiny shapes.
std::vector<CheckResult> run_all_checks(uint64_t seed);

}  // namespace sagan::gradcheck

#endif  // SAGAN_GRADCHECK_HPP
