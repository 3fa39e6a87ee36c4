#pragma once

#include <functional>
#include <vector>

#include "cmx/tensor.hpp"

namespace cmx {

// Builds a scalar loss from a fresh graph and a point leaf created by the
// harness. Must be deterministic in the point values.
using ScalarFn = std::function<Tensor(Graph&, Tensor point)>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    int worst_coord = -1;
    double analytic = 0.0;
    double numeric = 0.0;
};

// Compares the analytic gradient of fn at `point` against central finite
// differences, coordinate by coordinate. The error per coordinate is
// |analytic - fd| / max(1, |fd|); the maximum is returned together with the
// offending coordinate. Throws NumericError naming the coordinate if any
// evaluation or gradient is non-finite.
GradCheckResult grad_check(const ScalarFn& fn, int rows, int cols, const std::vector<double>& point, double step);

}  // namespace cmx
