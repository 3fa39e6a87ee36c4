#include <doctest.h>

#include <cmath>
#include <random>

#include "cmx/grad_check.hpp"
#include "cmx/tensor.hpp"
#include "oracles.hpp"

using cmx::Graph;
using cmx::Tensor;

TEST_SUITE_BEGIN("numerics");

TEST_CASE("stop_gradient forwards the value and blocks the gradient") {
    Graph g;
    Tensor x = g.input(1, 1, {2.0}, true);
    Tensor y = g.stop_gradient(x);
    CHECK(y.values()[0] == 2.0);

    Tensor loss = g.sum_all(g.mul(y, y));
    g.backward(loss);
    CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("straight-through identity: sg(x) + (y - sg(x))") {
    Graph g;
    Tensor x = g.input(1, 3, {0.5, -1.0, 2.0}, true);
    Tensor y = g.input(1, 3, {1.0, 2.0, 3.0}, true);
    Tensor out = g.add(g.stop_gradient(x), g.sub(y, g.stop_gradient(x)));
    for (int i = 0; i < 3; ++i) CHECK(out.values()[i] == y.values()[i]);

    Tensor loss = g.sum_all(g.mul(out, out));
    g.backward(loss);
    for (int i = 0; i < 3; ++i) {
        CHECK(y.grad()[i] == doctest::Approx(2.0 * y.values()[i]));  // the non-stopped path
        CHECK(x.grad()[i] == 0.0);
    }
}

TEST_CASE("straight-through replacement: x + sg(e - x) forwards e, differentiates as x") {
    Graph g;
    Tensor x = g.input(1, 2, {0.25, -0.75}, true);
    Tensor e = g.input(1, 2, {1.0, 1.0}, false);
    Tensor out = g.add(x, g.stop_gradient(g.sub(e, x)));
    CHECK(out.values()[0] == 1.0);
    CHECK(out.values()[1] == 1.0);
    g.backward(g.sum_all(g.mul(out, g.constant(1, 2, {3.0, -2.0}))));
    CHECK(x.grad()[0] == 3.0);
    CHECK(x.grad()[1] == -2.0);
}

TEST_CASE("softmax of a constant row is uniform") {
    Graph g;
    Tensor x = g.input(1, 3, {0.0, 0.0, 0.0}, false);
    Tensor y = g.softmax_rows(x);
    for (int i = 0; i < 3; ++i) CHECK(y.values()[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("matmul matches the naive triple loop") {
    std::mt19937_64 rng(42);
    const cmx::Matrix a = oracle::random_matrix(3, 4, rng);
    const cmx::Matrix b = oracle::random_matrix(4, 2, rng);
    const cmx::Matrix expected = oracle::matmul(a, b);

    Graph g;
    Tensor out = g.matmul(g.input(a, false), g.input(b, false));
    for (std::size_t i = 0; i < expected.data.size(); ++i)
        CHECK(std::abs(out.values()[i] - expected.data[i]) < 1e-12);
}

TEST_CASE("forward evaluation is deterministic") {
    auto run = [] {
        std::mt19937_64 rng(7);
        const cmx::Matrix a = oracle::random_matrix(5, 6, rng);
        const cmx::Matrix b = oracle::random_matrix(6, 3, rng);
        Graph g;
        Tensor out = g.softmax_rows(g.matmul(g.input(a, false), g.input(b, false)));
        return out.values();
    };
    CHECK(run() == run());
}

TEST_CASE("shape mismatches raise dimension errors") {
    Graph g;
    Tensor a = g.input(2, 3, std::vector<double>(6, 1.0), false);
    Tensor b = g.input(3, 2, std::vector<double>(6, 1.0), false);
    CHECK_THROWS_AS(g.add(a, b), cmx::DimensionError);
    CHECK_THROWS_AS(g.matmul(a, a), cmx::DimensionError);
    CHECK_THROWS_AS(g.block_mean_rows(a, 4), cmx::DimensionError);
    CHECK_THROWS_AS(g.backward(a), cmx::DimensionError);
}

TEST_CASE("log is clamped instead of exploding") {
    Graph g;
    Tensor x = g.input(1, 2, {0.0, -1.0}, true);
    Tensor y = g.log(x);
    CHECK(std::isfinite(y.values()[0]));
    CHECK(y.values()[0] == doctest::Approx(std::log(1e-12)));
    g.backward(g.sum_all(y));
    CHECK(std::isfinite(x.grad()[0]));
}

TEST_CASE("grad_check on a quadratic is near machine precision") {
    auto fn = [](Graph& g, Tensor x) { return g.sum_all(g.mul(x, x)); };
    const auto res = cmx::grad_check(fn, 1, 3, {1.0, 2.0, 3.0}, 1e-5);
    CHECK(res.max_rel_error < 1e-7);
}

TEST_CASE("grad_check flags non-finite evaluations with the coordinate") {
    auto fn = [](Graph& g, Tensor x) {
        // 1/x goes non-finite when the perturbed coordinate crosses zero.
        Tensor one = g.constant(1, 1, {1.0});
        return g.sum_all(g.div_rowvec(one, x));
    };
    CHECK_THROWS_AS(cmx::grad_check(fn, 1, 1, {0.0}, 1e-5), cmx::NumericError);
}

namespace {

// Composes each registered op into a scalar and checks its analytic gradient
// against central differences.
double op_property_error(int seed) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
    std::uniform_int_distribution<int> dim(1, 4);
    const int r = dim(rng) + 1, c = dim(rng) + 1;
    double worst = 0.0;
    auto check = [&worst, r, c](const cmx::ScalarFn& fn, const std::vector<double>& point, int rows, int cols) {
        const auto res = cmx::grad_check(fn, rows, cols, point, 1e-6);
        worst = std::max(worst, res.max_rel_error);
    };

    cmx::Matrix other = oracle::random_matrix(r, c, rng);
    cmx::Matrix rowvec = oracle::random_matrix(1, c, rng);
    for (auto& v : rowvec.data) v = 1.5 + std::abs(v);  // keep divisors away from zero
    cmx::Matrix square = oracle::random_matrix(c, c, rng);
    cmx::Matrix codebook = oracle::random_matrix(3, c, rng, 2.0);
    std::vector<double> point = oracle::random_matrix(r, c, rng).data;
    std::vector<double> positive = point;
    for (auto& v : positive) v = 0.5 + std::abs(v);

    check([&](Graph& g, Tensor x) { return g.sum_all(g.add(x, g.constant(other))); }, point, r, c);
    check([&](Graph& g, Tensor x) { return g.sum_all(g.sub(g.constant(other), x)); }, point, r, c);
    check([&](Graph& g, Tensor x) { return g.sum_all(g.mul(x, g.constant(other))); }, point, r, c);
    check([&](Graph& g, Tensor x) { return g.sum_all(g.mul(x, x)); }, point, r, c);
    check([&](Graph& g, Tensor x) { return g.sum_all(g.add_rowvec(x, g.constant(rowvec))); }, point, r, c);
    check([&](Graph& g, Tensor x) { return g.sum_all(g.sub_rowvec(x, g.constant(rowvec))); }, point, r, c);
    check([&](Graph& g, Tensor x) { return g.sum_all(g.mul_rowvec(x, g.constant(rowvec))); }, point, r, c);
    check([&](Graph& g, Tensor x) { return g.sum_all(g.div_rowvec(x, g.constant(rowvec))); }, point, r, c);
    check([&](Graph& g, Tensor x) { return g.sum_all(g.mul_rowvec(g.constant(other), x)); }, rowvec.data, 1, c);
    check([&](Graph& g, Tensor x) { return g.sum_all(g.div_rowvec(g.constant(other), x)); }, rowvec.data, 1, c);
    check([&](Graph& g, Tensor x) { return g.sum_all(g.scale(x, -2.5)); }, point, r, c);
    check([&](Graph& g, Tensor x) { return g.sum_all(g.add_scalar(x, 3.75)); }, point, r, c);
    check([&](Graph& g, Tensor x) { return g.sum_all(g.matmul(x, g.constant(square))); }, point, r, c);
    check([&](Graph& g, Tensor x) { return g.sum_all(g.matmul(g.constant(other), g.transpose(x))); }, point, r, c);
    check([&](Graph& g, Tensor x) { return g.sum_all(g.transpose(x)); }, point, r, c);
    check([&](Graph& g, Tensor x) { return g.sum_all(g.block_mean_rows(g.mul(x, x), r)); }, point, r, c);
    check([&](Graph& g, Tensor x) { return g.sum_all(g.mean_rows(g.mul(x, x))); }, point, r, c);
    check([&](Graph& g, Tensor x) { return g.sum_all(g.exp(g.scale(x, 0.5))); }, point, r, c);
    check([&](Graph& g, Tensor x) { return g.sum_all(g.log(x)); }, positive, r, c);
    check([&](Graph& g, Tensor x) { return g.sum_all(g.tanh(x)); }, point, r, c);
    check([&](Graph& g, Tensor x) { return g.sum_all(g.sqrt(x)); }, positive, r, c);
    check([&](Graph& g, Tensor x) { return g.sum_all(g.mul(g.softmax_rows(x), g.constant(other))); }, point, r, c);
    check([&](Graph& g, Tensor x) { return g.sum_all(g.neg_l2_rows(x, g.constant(codebook))); }, point, r, c);
    check([&](Graph& g, Tensor x) { return g.sum_all(g.neg_l2_rows(g.constant(other), x)); }, codebook.data, 3, c);
    return worst;
}

}  // namespace

TEST_CASE("every op's analytic gradient matches central differences over 100 seeds") {
    double worst = 0.0;
    for (int seed = 0; seed < 100; ++seed) worst = std::max(worst, op_property_error(seed));
    CHECK(worst < 1e-5);
}

TEST_CASE("backward seeds the loss gradient with one") {
    Graph g;
    Tensor x = g.input(1, 2, {1.0, 2.0}, true);
    Tensor loss = g.sum_all(x);
    g.backward(loss);
    CHECK(loss.grad()[0] == 1.0);
}

TEST_SUITE_END();
