#include "cmx/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <thread>

namespace cmx {

namespace {

std::string shape_str(int r, int c) { return std::to_string(r) + "x" + std::to_string(c); }

[[noreturn]] void shape_error(const char* op, int ar, int ac, int br, int bc) {
    throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(ar, ac) + " vs " + shape_str(br, bc));
}

// Splits [0, rows) into contiguous chunks and runs fn(begin, end) on each,
// spawning threads only when the work is heavy enough to pay for them.
// Accumulation inside a chunk is sequential, so the split never changes
// the result.
void parallel_rows(int rows, std::size_t flops, const std::function<void(int, int)>& fn) {
    const int workers = worker_count();
    if (workers <= 1 || rows < 2 || flops < 2'000'000) {
        fn(0, rows);
        return;
    }
    const int n = std::min(workers, rows);
    const int chunk = (rows + n - 1) / n;
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(n));
    for (int t = 0; t < n; ++t) {
        const int begin = t * chunk;
        const int end = std::min(rows, begin + chunk);
        if (begin >= end) break;
        threads.emplace_back(fn, begin, end);
    }
    for (auto& th : threads) th.join();
}

}  // namespace

int worker_count() {
    static const int cached = [] {
        int n = static_cast<int>(std::thread::hardware_concurrency());
        if (n <= 0) n = 1;
        if (const char* env = std::getenv("CODEX_BRIDGE_THREADS")) {
            char* end = nullptr;
            const long cap = std::strtol(env, &end, 10);
            if (end != env && cap >= 1) n = std::min(n, static_cast<int>(cap));
        }
        return n;
    }();
    return cached;
}

int Tensor::rows() const { return graph_->node(id_).rows; }
int Tensor::cols() const { return graph_->node(id_).cols; }
std::size_t Tensor::size() const { return graph_->node(id_).values.size(); }
const std::vector<double>& Tensor::values() const { return graph_->node(id_).values; }
const std::vector<double>& Tensor::grad() const { return graph_->node(id_).grad; }

double Tensor::scalar() const {
    const auto& n = graph_->node(id_);
    if (n.rows != 1 || n.cols != 1) throw DimensionError("scalar(): tensor is " + shape_str(n.rows, n.cols));
    return n.values[0];
}

void Graph::check_same_graph(Tensor t) const {
    if (t.graph_ != this) throw DimensionError("tensor belongs to a different graph");
}

Tensor Graph::make(Op op, int rows, int cols, int p0, int p1, double c, int aux) {
    Node n;
    n.op = op;
    n.rows = rows;
    n.cols = cols;
    n.parents = {p0, p1};
    n.c = c;
    n.aux = aux;
    n.needs_grad = (p0 >= 0 && node(p0).needs_grad) || (p1 >= 0 && node(p1).needs_grad);
    n.values.resize(static_cast<std::size_t>(rows) * cols);
    nodes_.push_back(std::move(n));
    return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor Graph::input(int rows, int cols, std::vector<double> values, bool requires_grad) {
    if (values.size() != static_cast<std::size_t>(rows) * cols)
        throw DimensionError("input: value count " + std::to_string(values.size()) + " does not match shape " +
                             shape_str(rows, cols));
    Node n;
    n.op = Op::kLeaf;
    n.rows = rows;
    n.cols = cols;
    n.needs_grad = requires_grad;
    n.values = std::move(values);
    nodes_.push_back(std::move(n));
    return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor Graph::input(const Matrix& m, bool requires_grad) { return input(m.rows, m.cols, m.data, requires_grad); }

Tensor Graph::add(Tensor a, Tensor b) {
    check_same_graph(a);
    check_same_graph(b);
    if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("add", a.rows(), a.cols(), b.rows(), b.cols());
    Tensor out = make(Op::kAdd, a.rows(), a.cols(), a.id_, b.id_);
    const auto& av = node(a.id_).values;
    const auto& bv = node(b.id_).values;
    auto& ov = node(out.id_).values;
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    return out;
}

Tensor Graph::sub(Tensor a, Tensor b) {
    check_same_graph(a);
    check_same_graph(b);
    if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("sub", a.rows(), a.cols(), b.rows(), b.cols());
    Tensor out = make(Op::kSub, a.rows(), a.cols(), a.id_, b.id_);
    const auto& av = node(a.id_).values;
    const auto& bv = node(b.id_).values;
    auto& ov = node(out.id_).values;
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
    return out;
}

Tensor Graph::mul(Tensor a, Tensor b) {
    check_same_graph(a);
    check_same_graph(b);
    if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("mul", a.rows(), a.cols(), b.rows(), b.cols());
    Tensor out = make(Op::kMul, a.rows(), a.cols(), a.id_, b.id_);
    const auto& av = node(a.id_).values;
    const auto& bv = node(b.id_).values;
    auto& ov = node(out.id_).values;
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    return out;
}

namespace {
void check_rowvec(const char* op, int ar, int ac, int br, int bc) {
    if (br != 1 || bc != ac) shape_error(op, ar, ac, br, bc);
}
}  // namespace

Tensor Graph::add_rowvec(Tensor a, Tensor b) {
    check_same_graph(a);
    check_same_graph(b);
    check_rowvec("add_rowvec", a.rows(), a.cols(), b.rows(), b.cols());
    Tensor out = make(Op::kAddRowvec, a.rows(), a.cols(), a.id_, b.id_);
    const auto& av = node(a.id_).values;
    const auto& bv = node(b.id_).values;
    auto& ov = node(out.id_).values;
    const int c = a.cols();
    for (int r = 0; r < a.rows(); ++r)
        for (int j = 0; j < c; ++j) ov[static_cast<std::size_t>(r) * c + j] = av[static_cast<std::size_t>(r) * c + j] + bv[j];
    return out;
}

Tensor Graph::sub_rowvec(Tensor a, Tensor b) {
    check_same_graph(a);
    check_same_graph(b);
    check_rowvec("sub_rowvec", a.rows(), a.cols(), b.rows(), b.cols());
    Tensor out = make(Op::kSubRowvec, a.rows(), a.cols(), a.id_, b.id_);
    const auto& av = node(a.id_).values;
    const auto& bv = node(b.id_).values;
    auto& ov = node(out.id_).values;
    const int c = a.cols();
    for (int r = 0; r < a.rows(); ++r)
        for (int j = 0; j < c; ++j) ov[static_cast<std::size_t>(r) * c + j] = av[static_cast<std::size_t>(r) * c + j] - bv[j];
    return out;
}

Tensor Graph::mul_rowvec(Tensor a, Tensor b) {
    check_same_graph(a);
    check_same_graph(b);
    check_rowvec("mul_rowvec", a.rows(), a.cols(), b.rows(), b.cols());
    Tensor out = make(Op::kMulRowvec, a.rows(), a.cols(), a.id_, b.id_);
    const auto& av = node(a.id_).values;
    const auto& bv = node(b.id_).values;
    auto& ov = node(out.id_).values;
    const int c = a.cols();
    for (int r = 0; r < a.rows(); ++r)
        for (int j = 0; j < c; ++j) ov[static_cast<std::size_t>(r) * c + j] = av[static_cast<std::size_t>(r) * c + j] * bv[j];
    return out;
}

Tensor Graph::div_rowvec(Tensor a, Tensor b) {
    check_same_graph(a);
    check_same_graph(b);
    check_rowvec("div_rowvec", a.rows(), a.cols(), b.rows(), b.cols());
    Tensor out = make(Op::kDivRowvec, a.rows(), a.cols(), a.id_, b.id_);
    const auto& av = node(a.id_).values;
    const auto& bv = node(b.id_).values;
    auto& ov = node(out.id_).values;
    const int c = a.cols();
    for (int r = 0; r < a.rows(); ++r)
        for (int j = 0; j < c; ++j) ov[static_cast<std::size_t>(r) * c + j] = av[static_cast<std::size_t>(r) * c + j] / bv[j];
    return out;
}

Tensor Graph::scale(Tensor a, double c) {
    check_same_graph(a);
    Tensor out = make(Op::kScale, a.rows(), a.cols(), a.id_, -1, c);
    const auto& av = node(a.id_).values;
    auto& ov = node(out.id_).values;
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * c;
    return out;
}

Tensor Graph::add_scalar(Tensor a, double c) {
    check_same_graph(a);
    Tensor out = make(Op::kAddScalar, a.rows(), a.cols(), a.id_, -1, c);
    const auto& av = node(a.id_).values;
    auto& ov = node(out.id_).values;
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + c;
    return out;
}

Tensor Graph::matmul(Tensor a, Tensor b) {
    check_same_graph(a);
    check_same_graph(b);
    if (a.cols() != b.rows()) shape_error("matmul", a.rows(), a.cols(), b.rows(), b.cols());
    const int m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = make(Op::kMatmul, m, n, a.id_, b.id_);
    const double* av = node(a.id_).values.data();
    const double* bv = node(b.id_).values.data();
    double* ov = node(out.id_).values.data();
    parallel_rows(m, static_cast<std::size_t>(m) * k * n, [&](int begin, int end) {
        for (int i = begin; i < end; ++i) {
            double* orow = ov + static_cast<std::size_t>(i) * n;
            std::fill(orow, orow + n, 0.0);
            const double* arow = av + static_cast<std::size_t>(i) * k;
            for (int kk = 0; kk < k; ++kk) {
                const double aik = arow[kk];
                const double* brow = bv + static_cast<std::size_t>(kk) * n;
                for (int j = 0; j < n; ++j) orow[j] += aik * brow[j];
            }
        }
    });
    return out;
}

Tensor Graph::transpose(Tensor a) {
    check_same_graph(a);
    Tensor out = make(Op::kTranspose, a.cols(), a.rows(), a.id_, -1);
    const auto& av = node(a.id_).values;
    auto& ov = node(out.id_).values;
    const int r = a.rows(), c = a.cols();
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) ov[static_cast<std::size_t>(j) * r + i] = av[static_cast<std::size_t>(i) * c + j];
    return out;
}

Tensor Graph::block_mean_rows(Tensor a, int block) {
    check_same_graph(a);
    if (block < 1 || a.rows() % block != 0)
        throw DimensionError("block_mean_rows: " + std::to_string(a.rows()) + " rows not divisible by block " +
                             std::to_string(block));
    const int n = a.rows() / block, c = a.cols();
    Tensor out = make(Op::kBlockMeanRows, n, c, a.id_, -1, 0.0, block);
    const auto& av = node(a.id_).values;
    auto& ov = node(out.id_).values;
    const double inv = 1.0 / block;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < c; ++j) {
            double s = 0.0;
            for (int r = 0; r < block; ++r) s += av[static_cast<std::size_t>(i * block + r) * c + j];
            ov[static_cast<std::size_t>(i) * c + j] = s * inv;
        }
    }
    return out;
}

Tensor Graph::mean_rows(Tensor a) { return block_mean_rows(a, a.rows()); }

Tensor Graph::sum_all(Tensor a) {
    check_same_graph(a);
    Tensor out = make(Op::kSumAll, 1, 1, a.id_, -1);
    double s = 0.0;
    for (double v : node(a.id_).values) s += v;
    node(out.id_).values[0] = s;
    return out;
}

Tensor Graph::exp(Tensor a) {
    check_same_graph(a);
    Tensor out = make(Op::kExp, a.rows(), a.cols(), a.id_, -1);
    const auto& av = node(a.id_).values;
    auto& ov = node(out.id_).values;
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = std::exp(av[i]);
    return out;
}

Tensor Graph::log(Tensor a) {
    check_same_graph(a);
    Tensor out = make(Op::kLog, a.rows(), a.cols(), a.id_, -1);
    const auto& av = node(a.id_).values;
    auto& ov = node(out.id_).values;
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = std::log(std::max(av[i], kLogEpsilon));
    return out;
}

Tensor Graph::tanh(Tensor a) {
    check_same_graph(a);
    Tensor out = make(Op::kTanh, a.rows(), a.cols(), a.id_, -1);
    const auto& av = node(a.id_).values;
    auto& ov = node(out.id_).values;
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = std::tanh(av[i]);
    return out;
}

Tensor Graph::sqrt(Tensor a) {
    check_same_graph(a);
    Tensor out = make(Op::kSqrt, a.rows(), a.cols(), a.id_, -1);
    const auto& av = node(a.id_).values;
    auto& ov = node(out.id_).values;
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = std::sqrt(av[i]);
    return out;
}

Tensor Graph::softmax_rows(Tensor a) {
    check_same_graph(a);
    Tensor out = make(Op::kSoftmaxRows, a.rows(), a.cols(), a.id_, -1);
    const auto& av = node(a.id_).values;
    auto& ov = node(out.id_).values;
    const int c = a.cols();
    for (int r = 0; r < a.rows(); ++r) {
        const double* x = av.data() + static_cast<std::size_t>(r) * c;
        double* y = ov.data() + static_cast<std::size_t>(r) * c;
        double m = x[0];
        for (int j = 1; j < c; ++j) m = std::max(m, x[j]);
        double s = 0.0;
        for (int j = 0; j < c; ++j) {
            y[j] = std::exp(x[j] - m);
            s += y[j];
        }
        const double inv = 1.0 / s;
        for (int j = 0; j < c; ++j) y[j] *= inv;
    }
    return out;
}

Tensor Graph::neg_l2_rows(Tensor x, Tensor e) {
    check_same_graph(x);
    check_same_graph(e);
    if (x.cols() != e.cols()) shape_error("neg_l2_rows", x.rows(), x.cols(), e.rows(), e.cols());
    const int l = x.rows(), v = e.rows(), d = x.cols();
    Tensor out = make(Op::kNegL2Rows, l, v, x.id_, e.id_);
    const double* xv = node(x.id_).values.data();
    const double* ev = node(e.id_).values.data();
    double* ov = node(out.id_).values.data();
    parallel_rows(l, static_cast<std::size_t>(l) * v * d, [&](int begin, int end) {
        for (int i = begin; i < end; ++i) {
            const double* xr = xv + static_cast<std::size_t>(i) * d;
            for (int j = 0; j < v; ++j) {
                const double* er = ev + static_cast<std::size_t>(j) * d;
                double s = 0.0;
                for (int k = 0; k < d; ++k) {
                    const double diff = xr[k] - er[k];
                    s += diff * diff;
                }
                ov[static_cast<std::size_t>(i) * v + j] = -std::sqrt(s);
            }
        }
    });
    return out;
}

Tensor Graph::stop_gradient(Tensor a) {
    check_same_graph(a);
    Tensor out = make(Op::kStopGradient, a.rows(), a.cols(), a.id_, -1);
    node(out.id_).values = node(a.id_).values;
    node(out.id_).needs_grad = false;
    return out;
}

void Graph::backward(Tensor loss) {
    check_same_graph(loss);
    const Node& ln = node(loss.id_);
    if (ln.rows != 1 || ln.cols != 1) throw DimensionError("backward: loss must be 1x1, got " + shape_str(ln.rows, ln.cols));
    for (auto& n : nodes_) {
        if (n.needs_grad || &n == &node(loss.id_)) {
            n.grad.assign(n.values.size(), 0.0);
        } else {
            n.grad.clear();
        }
    }
    node(loss.id_).grad.assign(1, 1.0);
    for (int id = loss.id_; id >= 0; --id) backward_node(id);
}

void Graph::backward_node(int id) {
    Node& n = node(id);
    if (n.grad.empty()) return;
    const bool p0_needs = n.parents[0] >= 0 && node(n.parents[0]).needs_grad;
    const bool p1_needs = n.parents[1] >= 0 && node(n.parents[1]).needs_grad;
    if (!p0_needs && !p1_needs) return;
    const std::vector<double>& g = n.grad;

    switch (n.op) {
        case Op::kLeaf:
        case Op::kStopGradient:
            break;
        case Op::kAdd: {
            if (p0_needs) {
                auto& ga = node(n.parents[0]).grad;
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (p1_needs) {
                auto& gb = node(n.parents[1]).grad;
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
            break;
        }
        case Op::kSub: {
            if (p0_needs) {
                auto& ga = node(n.parents[0]).grad;
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (p1_needs) {
                auto& gb = node(n.parents[1]).grad;
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
            break;
        }
        case Op::kMul: {
            const auto& av = node(n.parents[0]).values;
            const auto& bv = node(n.parents[1]).values;
            if (p0_needs) {
                auto& ga = node(n.parents[0]).grad;
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
            }
            if (p1_needs) {
                auto& gb = node(n.parents[1]).grad;
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
            }
            break;
        }
        case Op::kAddRowvec:
        case Op::kSubRowvec: {
            const double sign = n.op == Op::kSubRowvec ? -1.0 : 1.0;
            if (p0_needs) {
                auto& ga = node(n.parents[0]).grad;
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (p1_needs) {
                auto& gb = node(n.parents[1]).grad;
                for (int r = 0; r < n.rows; ++r)
                    for (int j = 0; j < n.cols; ++j) gb[j] += sign * g[static_cast<std::size_t>(r) * n.cols + j];
            }
            break;
        }
        case Op::kMulRowvec: {
            const auto& av = node(n.parents[0]).values;
            const auto& bv = node(n.parents[1]).values;
            if (p0_needs) {
                auto& ga = node(n.parents[0]).grad;
                for (int r = 0; r < n.rows; ++r)
                    for (int j = 0; j < n.cols; ++j) {
                        const std::size_t i = static_cast<std::size_t>(r) * n.cols + j;
                        ga[i] += g[i] * bv[j];
                    }
            }
            if (p1_needs) {
                auto& gb = node(n.parents[1]).grad;
                for (int r = 0; r < n.rows; ++r)
                    for (int j = 0; j < n.cols; ++j) {
                        const std::size_t i = static_cast<std::size_t>(r) * n.cols + j;
                        gb[j] += g[i] * av[i];
                    }
            }
            break;
        }
        case Op::kDivRowvec: {
            const auto& av = node(n.parents[0]).values;
            const auto& bv = node(n.parents[1]).values;
            if (p0_needs) {
                auto& ga = node(n.parents[0]).grad;
                for (int r = 0; r < n.rows; ++r)
                    for (int j = 0; j < n.cols; ++j) {
                        const std::size_t i = static_cast<std::size_t>(r) * n.cols + j;
                        ga[i] += g[i] / bv[j];
                    }
            }
            if (p1_needs) {
                auto& gb = node(n.parents[1]).grad;
                for (int r = 0; r < n.rows; ++r)
                    for (int j = 0; j < n.cols; ++j) {
                        const std::size_t i = static_cast<std::size_t>(r) * n.cols + j;
                        gb[j] -= g[i] * av[i] / (bv[j] * bv[j]);
                    }
            }
            break;
        }
        case Op::kScale: {
            auto& ga = node(n.parents[0]).grad;
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.c;
            break;
        }
        case Op::kAddScalar: {
            auto& ga = node(n.parents[0]).grad;
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            break;
        }
        case Op::kMatmul: {
            const Node& a = node(n.parents[0]);
            const Node& b = node(n.parents[1]);
            const int m = a.rows, k = a.cols, nn = b.cols;
            if (p0_needs) {
                // dA = G * B^T
                auto& ga = node(n.parents[0]).grad;
                const double* gp = g.data();
                const double* bp = b.values.data();
                parallel_rows(m, static_cast<std::size_t>(m) * k * nn, [&](int begin, int end) {
                    for (int i = begin; i < end; ++i)
                        for (int kk = 0; kk < k; ++kk) {
                            double s = 0.0;
                            const double* grow = gp + static_cast<std::size_t>(i) * nn;
                            const double* brow = bp + static_cast<std::size_t>(kk) * nn;
                            for (int j = 0; j < nn; ++j) s += grow[j] * brow[j];
                            ga[static_cast<std::size_t>(i) * k + kk] += s;
                        }
                });
            }
            if (p1_needs) {
                // dB = A^T * G
                auto& gb = node(n.parents[1]).grad;
                const double* gp = g.data();
                const double* ap = a.values.data();
                parallel_rows(k, static_cast<std::size_t>(m) * k * nn, [&](int begin, int end) {
                    for (int kk = begin; kk < end; ++kk)
                        for (int i = 0; i < m; ++i) {
                            const double aik = ap[static_cast<std::size_t>(i) * k + kk];
                            if (aik == 0.0) continue;
                            const double* grow = gp + static_cast<std::size_t>(i) * nn;
                            double* gbrow = gb.data() + static_cast<std::size_t>(kk) * nn;
                            for (int j = 0; j < nn; ++j) gbrow[j] += aik * grow[j];
                        }
                });
            }
            break;
        }
        case Op::kTranspose: {
            auto& ga = node(n.parents[0]).grad;
            const int r = n.rows, c = n.cols;  // out shape; input is c x r
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) ga[static_cast<std::size_t>(j) * r + i] += g[static_cast<std::size_t>(i) * c + j];
            break;
        }
        case Op::kBlockMeanRows: {
            auto& ga = node(n.parents[0]).grad;
            const int block = n.aux, c = n.cols;
            const double inv = 1.0 / block;
            for (int i = 0; i < n.rows; ++i)
                for (int r = 0; r < block; ++r)
                    for (int j = 0; j < c; ++j)
                        ga[static_cast<std::size_t>(i * block + r) * c + j] += g[static_cast<std::size_t>(i) * c + j] * inv;
            break;
        }
        case Op::kSumAll: {
            auto& ga = node(n.parents[0]).grad;
            for (auto& x : ga) x += g[0];
            break;
        }
        case Op::kExp: {
            auto& ga = node(n.parents[0]).grad;
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.values[i];
            break;
        }
        case Op::kLog: {
            const auto& av = node(n.parents[0]).values;
            auto& ga = node(n.parents[0]).grad;
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / std::max(av[i], kLogEpsilon);
            break;
        }
        case Op::kTanh: {
            auto& ga = node(n.parents[0]).grad;
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - n.values[i] * n.values[i]);
            break;
        }
        case Op::kSqrt: {
            auto& ga = node(n.parents[0]).grad;
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * 0.5 / std::max(n.values[i], kLogEpsilon);
            break;
        }
        case Op::kSoftmaxRows: {
            auto& ga = node(n.parents[0]).grad;
            const int c = n.cols;
            for (int r = 0; r < n.rows; ++r) {
                const double* y = n.values.data() + static_cast<std::size_t>(r) * c;
                const double* gr = g.data() + static_cast<std::size_t>(r) * c;
                double dotgy = 0.0;
                for (int j = 0; j < c; ++j) dotgy += gr[j] * y[j];
                double* gar = ga.data() + static_cast<std::size_t>(r) * c;
                for (int j = 0; j < c; ++j) gar[j] += y[j] * (gr[j] - dotgy);
            }
            break;
        }
        case Op::kNegL2Rows: {
            const Node& x = node(n.parents[0]);
            const Node& e = node(n.parents[1]);
            const int l = x.rows, v = e.rows, d = x.cols;
            auto* gx = p0_needs ? &node(n.parents[0]).grad : nullptr;
            auto* ge = p1_needs ? &node(n.parents[1]).grad : nullptr;
            for (int i = 0; i < l; ++i) {
                const double* xr = x.values.data() + static_cast<std::size_t>(i) * d;
                for (int j = 0; j < v; ++j) {
                    const double gij = g[static_cast<std::size_t>(i) * v + j];
                    if (gij == 0.0) continue;
                    const double* er = e.values.data() + static_cast<std::size_t>(j) * d;
                    const double dist = std::max(-n.values[static_cast<std::size_t>(i) * v + j], kLogEpsilon);
                    const double f = gij / dist;
                    for (int k = 0; k < d; ++k) {
                        const double diff = xr[k] - er[k];
                        if (gx) (*gx)[static_cast<std::size_t>(i) * d + k] -= f * diff;
                        if (ge) (*ge)[static_cast<std::size_t>(j) * d + k] += f * diff;
                    }
                }
            }
            break;
        }
    }
}

}  // namespace cmx
