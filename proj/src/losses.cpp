#include "cmx/losses.hpp"

#include <cmath>

namespace cmx {

double similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw DimensionError("similarity: dimension mismatch " + std::to_string(a.size()) + " vs " +
                             std::to_string(b.size()));
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double code_similarity(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw DimensionError("code_similarity: distribution size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        s += p[i] * std::log(std::max(q[i], Graph::kLogEpsilon));
        s += q[i] * std::log(std::max(p[i], Graph::kLogEpsilon));
    }
    return s;
}

Tensor contrastive_from_scores(Graph& g, Tensor scores, double margin) {
    const int n = scores.rows();
    if (n != scores.cols()) throw DimensionError("contrastive_from_scores: score matrix must be square");
    if (n < 1) throw DataError("contrastive_from_scores: empty batch");

    std::vector<double> diag_mask(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) diag_mask[static_cast<std::size_t>(i) * n + i] = 1.0;
    Tensor mask = g.constant(n, n, diag_mask);

    Tensor shifted = scores;
    if (margin != 0.0) {
        std::vector<double> margin_diag(static_cast<std::size_t>(n) * n, 0.0);
        for (int i = 0; i < n; ++i) margin_diag[static_cast<std::size_t>(i) * n + i] = -margin;
        shifted = g.add(scores, g.constant(n, n, margin_diag));
    }
    // Row-wise softmax, then pick out the log-probability of the positive.
    Tensor probs = g.softmax_rows(shifted);
    Tensor picked = g.mul(mask, g.log(probs));
    return g.scale(g.sum_all(picked), -1.0 / n);
}

Tensor mms_loss(Graph& g, Tensor z_a, Tensor z_b, double margin) {
    if (z_a.rows() != z_b.rows() || z_a.cols() != z_b.cols())
        throw DimensionError("mms_loss: embedding banks must share shape");
    Tensor scores = g.matmul(z_a, g.transpose(z_b));
    return contrastive_from_scores(g, scores, margin);
}

Tensor mms_loss(Graph& g, const BatchEmbeddings& batch, double margin) {
    return mms_loss(g, batch.z_a, batch.z_b, margin);
}

Tensor code_similarity_matrix(Graph& g, Tensor dist_a, Tensor dist_b) {
    if (dist_a.cols() != dist_b.cols()) throw DimensionError("code_similarity_matrix: codebook sizes differ");
    // S[i][j] = sum_v pA[i][v] log pB[j][v] + sum_v pB[j][v] log pA[i][v]
    Tensor left = g.matmul(dist_a, g.transpose(g.log(dist_b)));
    Tensor right = g.matmul(g.log(dist_a), g.transpose(dist_b));
    return g.add(left, right);
}

Tensor cmcm_loss(Graph& g, Tensor dist_a, Tensor dist_b) {
    if (dist_a.rows() != dist_b.rows()) throw DimensionError("cmcm_loss: batch sizes differ");
    Tensor scores = code_similarity_matrix(g, dist_a, dist_b);
    return contrastive_from_scores(g, scores, 0.0);
}

Tensor cmcm_loss(Graph& g, const BatchEmbeddings& batch) {
    if (!batch.dist_a || !batch.dist_b) throw ConfigError("cmcm_loss: batch carries no codeword distributions");
    return cmcm_loss(g, *batch.dist_a, *batch.dist_b);
}

Tensor total_loss(Graph& g, Tensor mms, Tensor cmcm, double alpha) {
    if (alpha < 0.0) throw ConfigError("total_loss: alpha must be non-negative");
    if (alpha == 0.0) return mms;
    return g.add(mms, g.scale(cmcm, alpha));
}

}  // namespace cmx
