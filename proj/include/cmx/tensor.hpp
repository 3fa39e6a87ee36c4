#pragma once

#include <array>
#include <string>
#include <vector>

#include "cmx/errors.hpp"
#include "cmx/matrix.hpp"

namespace cmx {

class Graph;

// Handle to a node in a Graph. Cheap to copy; values are owned by the graph.
class Tensor {
  public:
    Tensor() = default;

    int rows() const;
    int cols() const;
    std::size_t size() const;
    const std::vector<double>& values() const;
    const std::vector<double>& grad() const;
    double scalar() const;  // value of a 1x1 tensor

    bool valid() const { return graph_ != nullptr; }
    int id() const { return id_; }
    Graph* graph() const { return graph_; }

  private:
    friend class Graph;
    Tensor(Graph* g, int id) : graph_(g), id_(id) {}

    Graph* graph_ = nullptr;
    int id_ = -1;
};

// Define-by-run computation graph over dense row-major double matrices.
// Nodes are created in topological order; backward() walks them once in
// reverse. Value buffers are immutable after creation.
class Graph {
  public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // Leaves.
    Tensor input(int rows, int cols, std::vector<double> values, bool requires_grad);
    Tensor input(const Matrix& m, bool requires_grad);
    Tensor constant(const Matrix& m) { return input(m, false); }
    Tensor constant(int rows, int cols, std::vector<double> values) {
        return input(rows, cols, std::move(values), false);
    }

    // Elementwise, same shape.
    Tensor add(Tensor a, Tensor b);
    Tensor sub(Tensor a, Tensor b);
    Tensor mul(Tensor a, Tensor b);

    // Matrix (RxC) against row vector (1xC), broadcast over rows.
    Tensor add_rowvec(Tensor a, Tensor b);
    Tensor sub_rowvec(Tensor a, Tensor b);
    Tensor mul_rowvec(Tensor a, Tensor b);
    Tensor div_rowvec(Tensor a, Tensor b);

    // Scalar-constant variants.
    Tensor scale(Tensor a, double c);
    Tensor add_scalar(Tensor a, double c);

    Tensor matmul(Tensor a, Tensor b);
    Tensor transpose(Tensor a);

    // Mean over consecutive blocks of `block` rows: (n*block)xC -> nxC.
    Tensor block_mean_rows(Tensor a, int block);
    // Mean over all rows: RxC -> 1xC.
    Tensor mean_rows(Tensor a);
    // Sum of all entries -> 1x1.
    Tensor sum_all(Tensor a);

    Tensor exp(Tensor a);
    Tensor log(Tensor a);  // argument clamped to >= kLogEpsilon
    Tensor tanh(Tensor a);
    Tensor sqrt(Tensor a);

    // Row-wise softmax (max-subtracted).
    Tensor softmax_rows(Tensor a);

    // out[l][v] = -||x_l - e_v||_2 for rows of x (LxD) against rows of e (VxD).
    Tensor neg_l2_rows(Tensor x, Tensor e);

    // Forwards values, contributes zero gradient to its input.
    Tensor stop_gradient(Tensor a);

    // Backward from a 1x1 loss node. Populates grad buffers of every node
    // that requires a gradient; grad of the loss w.r.t. itself is 1.
    void backward(Tensor loss);

    std::size_t node_count() const { return nodes_.size(); }

    static constexpr double kLogEpsilon = 1e-12;

  private:
    enum class Op {
        kLeaf,
        kAdd,
        kSub,
        kMul,
        kAddRowvec,
        kSubRowvec,
        kMulRowvec,
        kDivRowvec,
        kScale,
        kAddScalar,
        kMatmul,
        kTranspose,
        kBlockMeanRows,
        kSumAll,
        kExp,
        kLog,
        kTanh,
        kSqrt,
        kSoftmaxRows,
        kNegL2Rows,
        kStopGradient,
    };

    struct Node {
        Op op = Op::kLeaf;
        int rows = 0;
        int cols = 0;
        std::array<int, 2> parents{-1, -1};
        double c = 0.0;  // scalar constant for kScale / kAddScalar
        int aux = 0;     // block length for kBlockMeanRows
        bool needs_grad = false;
        std::vector<double> values;
        std::vector<double> grad;
    };

    friend class Tensor;

    Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
    const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

    Tensor make(Op op, int rows, int cols, int p0, int p1, double c = 0.0, int aux = 0);
    void check_same_graph(Tensor t) const;
    void backward_node(int id);

    std::vector<Node> nodes_;
};

// Effective worker count for row-parallel kernels: hardware concurrency
// capped by the CODEX_BRIDGE_THREADS environment variable. Kernels always
// accumulate in a fixed order, so results do not depend on this value.
int worker_count();

}  // namespace cmx
