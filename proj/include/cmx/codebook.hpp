#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "cmx/matrix.hpp"
#include "cmx/tensor.hpp"

namespace cmx {

// Shared discrete embedding space: V codewords of dimension d, learned by
// exponential moving average of the vectors assigned to each codeword.
// Invariant after every update: codeword(v) == ema_sum(v) / ema_count(v),
// and ema_count stays strictly positive.
struct Codebook {
    int size = 0;       // V
    int dim = 0;        // d
    double decay = 0.99;
    int reset_patience = 100;

    Matrix codewords;                  // V x d
    std::vector<double> ema_count;     // per codeword
    Matrix ema_sum;                    // V x d
    std::vector<int> inactive_steps;   // consecutive steps without assignment
};

Codebook init_codebook(int size, int dim, double decay, int reset_patience, std::uint64_t seed);

// Running per-coordinate statistics for one modality's projected vectors.
struct ModalityNormStats {
    std::vector<double> mean;
    std::vector<double> variance;
    double sample_count = 0.0;

    explicit ModalityNormStats(int dim = 0) : mean(dim, 0.0), variance(dim, 1.0) {}
};

enum class NormMode { kTrain, kEval };

// Per-coordinate normalization of an L x d batch. Train mode normalizes with
// current-batch statistics (differentiable through mean and variance) and
// folds them into the running stats with momentum 0.99; eval mode uses the
// running stats as constants. Zero variance is epsilon-stabilized.
Tensor normalize(Graph& g, Tensor h, ModalityNormStats& stats, NormMode mode);

// Hard assignment per row of an already projected + normalized batch.
struct QuantizeResult {
    Tensor quantized;              // same shape as input; forward rows equal codewords
    std::vector<int> assignments;  // nearest codeword per row
};

// Index of the nearest codeword by L2 distance; ties broken by lowest index.
int nearest_codeword(const Codebook& cb, std::span<const double> row);

// Replaces each row by its nearest codeword in the forward pass while the
// backward pass treats the replacement as identity (stop-gradient
// composition). No gradient reaches the codebook.
QuantizeResult quantize(Graph& g, Tensor projected, const Codebook& cb);

// Softmin distribution over codewords for every row: softmax of the negative
// Euclidean distances. Rows sum to one and the argmax matches quantize.
Tensor code_probabilities(Graph& g, Tensor projected, const Codebook& cb);

// Sequence-level distribution: mean of the per-row softmin distributions
// over blocks of `block` consecutive rows. With block == rows this is the
// single-sequence form. Throws DataError on an empty sequence.
Tensor sequence_distribution(Graph& g, Tensor projected, const Codebook& cb, int block);

// One EMA step. `assigned` maps codeword index -> vectors quantized to it
// this step (post-normalization). Every codeword's accumulators decay;
// inactive_steps resets to zero for activated codewords and increments
// elsewhere.
void ema_update(Codebook& cb, const std::vector<std::vector<std::vector<double>>>& assigned);
void ema_update(Codebook& cb, const Matrix& vectors, const std::vector<int>& assignments);

struct ResetResult {
    std::vector<int> reset_indices;
    bool starved_without_donor = false;  // codewords were due but nothing activated this step
};

// Re-initializes codewords that have been inactive for reset_patience
// consecutive steps from a uniformly random codeword activated this step.
// Call once per training step, after ema_update.
ResetResult reset_dead(Codebook& cb, std::mt19937_64& rng);

// Hard assignment of one instance's positions, with the spatial/temporal
// layout preserved so masks can be reconstructed.
struct CodeAssignment {
    std::int64_t instance_id = -1;
    char modality = '?';                       // 'A' or 'B'
    std::vector<int> codes;                    // length L
    std::vector<int> grid;                     // grid extents; product == L
    std::vector<std::vector<int>> coordinates() const;  // per position, one index per grid axis
};

}  // namespace cmx
