#pragma once

#include <string>
#include <vector>

#include "cmx/codebook.hpp"
#include "cmx/matrix.hpp"
#include "cmx/tensor.hpp"

namespace cmx {

// Named trainable buffer plus its optimizer moments.
struct Parameter {
    std::string name;
    Matrix value;
    Matrix adam_m;
    Matrix adam_v;

    Parameter() = default;
    Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)) {
        adam_m = Matrix(value.rows, value.cols);
        adam_v = Matrix(value.rows, value.cols);
    }
};

struct EncoderConfig {
    int feat_dim = 12;    // raw feature dimension per position
    int hidden_dim = 32;  // fine-grained representation dimension
    int code_dim = 16;    // shared discrete space dimension
    int embed_dim = 32;   // high-level representation dimension
    int fine_depth = 2;   // 1 = single linear layer, 2 = linear-tanh-linear
    std::vector<int> grid = {3, 3};  // layout of the positions (time/space axes)

    int positions() const {
        int p = 1;
        for (int g : grid) p *= g;
        return p;
    }
};

// Captured quantization state so a forward pass can be replayed as the
// linear surrogate the backward pass differentiates. Used by the gradient
// check harness; training never freezes.
struct FrozenQuantization {
    std::vector<int> assignments;
    Matrix delta;  // codeword minus projected row, captured at the base point
};

struct EmbedOptions {
    bool use_vq = true;
    bool use_continuous = true;
    NormMode norm_mode = NormMode::kTrain;
    const FrozenQuantization* frozen = nullptr;
    // Replaces the named parameter's graph leaf; the gradient check harness
    // uses this to differentiate the pipeline w.r.t. one parameter.
    const std::vector<std::pair<std::string, Tensor>>* overrides = nullptr;
};

struct EmbedResult {
    Tensor summary;                 // N x embed_dim high-level vectors
    Tensor fine;                    // (N*L) x hidden_dim fine-grained rows
    Tensor projected;               // (N*L) x code_dim normalized projected rows (VQ only)
    Tensor sequence_dist;           // N x V codeword-usage distributions (VQ only)
    std::vector<int> assignments;   // (N*L) hard assignments (VQ only)
    std::vector<Tensor> param_leaves;  // parallel to parameters(); grads live here after backward
    bool has_vq = false;
};

// Captures assignments and codeword offsets from an unfrozen embed so the
// same batch can be replayed with quantization held fixed.
FrozenQuantization capture_quantization(const EmbedResult& result, const Codebook& cb);

// One modality's encoder stack: a per-position feed-forward net producing
// fine-grained vectors, a mean-pool + linear summarizer, a linear projection
// into the shared discrete space, and a mean-pool + linear summarizer for
// the quantized sequence.
class ModalityEncoder {
  public:
    ModalityEncoder() = default;
    ModalityEncoder(char modality, const EncoderConfig& config, std::uint64_t seed);

    char modality() const { return modality_; }
    const EncoderConfig& config() const { return config_; }

    std::vector<Parameter>& parameters() { return params_; }
    const std::vector<Parameter>& parameters() const { return params_; }
    Parameter& param(const std::string& name);

    // H = f_fine(x) for a stacked batch of (n * L) position rows.
    Tensor encode_fine(Graph& g, Tensor x) const;

    // Full instance embedding per the combined representation: the mean-pooled
    // continuous summary plus, when the discrete path is on, the mean-pooled
    // quantized summary. `x` holds n instances of L rows each.
    EmbedResult embed(Graph& g, Tensor x, int n_instances, const Codebook* cb, ModalityNormStats* stats,
                      const EmbedOptions& options) const;

    // Wraps flat assignments into per-instance records with grid layout.
    std::vector<CodeAssignment> split_assignments(const std::vector<int>& flat,
                                                  const std::vector<std::int64_t>& instance_ids) const;

  private:
    Tensor leaf(Graph& g, const std::string& name, const EmbedOptions& options, EmbedResult& result) const;

    char modality_ = '?';
    EncoderConfig config_;
    std::vector<Parameter> params_;
};

}  // namespace cmx
