#include "cmx/grad_check.hpp"

#include <cmath>

namespace cmx {

namespace {

double eval_at(const ScalarFn& fn, int rows, int cols, const std::vector<double>& x, std::size_t coord) {
    Graph g;
    Tensor point = g.input(rows, cols, x, true);
    Tensor loss = fn(g, point);
    const double v = loss.scalar();
    if (!std::isfinite(v))
        throw NumericError("grad_check: non-finite loss while perturbing coordinate " + std::to_string(coord));
    return v;
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& fn, int rows, int cols, const std::vector<double>& point, double step) {
    if (step <= 0.0) throw ConfigError("grad_check: step must be positive");
    if (point.size() != static_cast<std::size_t>(rows) * cols)
        throw DimensionError("grad_check: point size does not match shape");

    Graph g;
    Tensor leaf = g.input(rows, cols, point, true);
    Tensor loss = fn(g, leaf);
    if (!std::isfinite(loss.scalar())) throw NumericError("grad_check: non-finite loss at base point");
    g.backward(loss);
    const std::vector<double> analytic = leaf.grad();

    GradCheckResult result;
    std::vector<double> x = point;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!std::isfinite(analytic[i]))
            throw NumericError("grad_check: non-finite analytic gradient at coordinate " + std::to_string(i));
        const double saved = x[i];
        x[i] = saved + step;
        const double fp = eval_at(fn, rows, cols, x, i);
        x[i] = saved - step;
        const double fm = eval_at(fn, rows, cols, x, i);
        x[i] = saved;
        const double fd = (fp - fm) / (2.0 * step);
        if (!std::isfinite(fd))
            throw NumericError("grad_check: non-finite central difference at coordinate " + std::to_string(i));
        const double err = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(fd));
        if (err > result.max_rel_error) {
            result.max_rel_error = err;
            result.worst_coord = static_cast<int>(i);
            result.analytic = analytic[i];
            result.numeric = fd;
        }
    }
    return result;
}

}  // namespace cmx
