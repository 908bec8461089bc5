#pragma once

#include <functional>
#include <map>
#include <string>

#include "xmetra/optim.hpp"

namespace xmetra {

// Deterministic scalar loss built from bound parameters on the given tape.
// Inputs are captured by the closure.
using GradcheckLossFn = std::function<Tensor(const BoundParams&, Tape&)>;

struct GradcheckBlock {
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;
};

struct GradcheckReport {
    bool pass = true;
    double max_rel_err = 0.0;
    std::string worst_param;
    std::map<std::string, GradcheckBlock> blocks;
};

// Compares tape gradients of loss_fn against central finite differences,
// element by element. Relative error uses max(1, |a|, |b|) as denominator.
GradcheckReport finite_difference_check(const GradcheckLossFn& loss_fn, const ModelState& params,
                                        double tolerance, double h = 1e-5);

}  // namespace xmetra
