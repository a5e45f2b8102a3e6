#pragma once

#include <functional>
#include <vector>

#include "mbcr/autodiff.hpp"

namespace mbcr {

struct GradcheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    std::size_t checked = 0;
    /// Elements whose +-h probes flipped a relu and were re-measured with a
    /// halved step (down to h/1024) that stays on one side of every kink.
    std::size_t reduced_step = 0;
};

/// Relative error |a - n| / max(1e-8, |a| + |n|).
double relative_error(double analytic, double numeric);

/// Builds a scalar on a fresh tape from the given input variable.
using ScalarFn = std::function<Var(Tape&, Var)>;
/// Builds a scalar on a fresh tape; parameters are read from their owners.
using ParamScalarFn = std::function<Var(Tape&)>;

/// Compares the tape gradient at `point` against central differences
/// (f(x+h) - f(x-h)) / 2h, element by element. `f` must be deterministic.
/// A probe that changes any relu's active set is not a valid derivative
/// estimate, so that element is retried with smaller steps; if even h/1024
/// crosses a kink the last estimate is compared as is.
GradcheckResult gradcheck(const ScalarFn& f, const Tensor& point, double h = 1e-5);

/// Same check w.r.t. a parameter that `f` binds via Tape::parameter. Only the
/// listed element indices are probed when `indices` is non-empty.
GradcheckResult gradcheck_parameter(const ParamScalarFn& f, Parameter& param, double h = 1e-5,
                                    const std::vector<std::size_t>& indices = {});

}  // namespace mbcr
