#pragma once

#include <optional>
#include <span>

#include "cmx/tensor.hpp"

namespace cmx {

// Paired batch of high-level embeddings and, when the discrete path is on,
// sequence-level codeword distributions. Row i of each side is the positive
// pair; everything else in the batch is a negative.
struct BatchEmbeddings {
    Tensor z_a;  // N x embed_dim
    Tensor z_b;  // N x embed_dim
    std::optional<Tensor> dist_a;  // N x V
    std::optional<Tensor> dist_b;  // N x V
};

// Dot-product similarity of two equally sized vectors.
double similarity(std::span<const double> a, std::span<const double> b);

// Negative symmetric cross entropy of two codeword distributions,
// with epsilon-clamped logs. Higher means more similar usage.
double code_similarity(std::span<const double> p, std::span<const double> q);

// Masked margin softmax over a precomputed score matrix: row i treats entry
// (i, i) minus the margin as the positive logit and the rest of the row as
// negatives. Exposed separately so score-level properties can be tested.
Tensor contrastive_from_scores(Graph& g, Tensor scores, double margin);

// Margin contrastive loss over in-batch negatives with dot-product scores.
Tensor mms_loss(Graph& g, Tensor z_a, Tensor z_b, double margin);
Tensor mms_loss(Graph& g, const BatchEmbeddings& batch, double margin);

// N x N matrix of pairwise code similarities between two banks of
// sequence-level distributions.
Tensor code_similarity_matrix(Graph& g, Tensor dist_a, Tensor dist_b);

// Cross-modal code matching loss: contrastive over code similarities so that
// positive pairs use similar codewords and negatives do not.
Tensor cmcm_loss(Graph& g, Tensor dist_a, Tensor dist_b);
Tensor cmcm_loss(Graph& g, const BatchEmbeddings& batch);

// Combined objective: mms + alpha * cmcm.
Tensor total_loss(Graph& g, Tensor mms, Tensor cmcm, double alpha);

}  // namespace cmx
