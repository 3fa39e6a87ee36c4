#include "cmx/encoder.hpp"

#include <algorithm>
#include <cmath>

namespace cmx {

namespace {

// The quantized branch joins an already warm-started summary; it starts an
// order of magnitude quieter than the continuous head so the handoff does
// not disturb the baseline, but away from the zero saddle of the bilinear
// similarity.
constexpr double kCodeBranchInitScale = 0.3;

Matrix init_weight(int rows, int cols, std::mt19937_64& rng) {
    return random_normal(rows, cols, rng, 1.0 / std::sqrt(static_cast<double>(rows)));
}

}  // namespace

ModalityEncoder::ModalityEncoder(char modality, const EncoderConfig& config, std::uint64_t seed)
    : modality_(modality), config_(config) {
    if (config.feat_dim < 1 || config.hidden_dim < 1 || config.code_dim < 1 || config.embed_dim < 1)
        throw ConfigError("encoder: dimensions must be positive");
    if (config.fine_depth != 1 && config.fine_depth != 2)
        throw ConfigError("encoder: fine_depth must be 1 or 2");
    if (config.grid.empty() || config.positions() < 1) throw ConfigError("encoder: invalid grid");

    std::mt19937_64 rng(seed);
    params_.emplace_back("fine_w1", init_weight(config.feat_dim, config.hidden_dim, rng));
    params_.emplace_back("fine_b1", Matrix(1, config.hidden_dim));
    if (config.fine_depth == 2) {
        params_.emplace_back("fine_w2", init_weight(config.hidden_dim, config.hidden_dim, rng));
        params_.emplace_back("fine_b2", Matrix(1, config.hidden_dim));
    }
    params_.emplace_back("high_w", init_weight(config.hidden_dim, config.embed_dim, rng));
    params_.emplace_back("high_b", Matrix(1, config.embed_dim));
    params_.emplace_back("proj_w", init_weight(config.hidden_dim, config.code_dim, rng));
    params_.emplace_back("proj_b", Matrix(1, config.code_dim));
    // Near-zero output layer: the quantized branch joins a warm-started
    // summary as a small perturbation instead of random noise, while staying
    // off the zero saddle of the bilinear similarity.
    Matrix code_w = init_weight(config.code_dim, config.embed_dim, rng);
    for (auto& v : code_w.data) v *= kCodeBranchInitScale;
    params_.emplace_back("code_w", std::move(code_w));
    params_.emplace_back("code_b", Matrix(1, config.embed_dim));
}

Parameter& ModalityEncoder::param(const std::string& name) {
    for (auto& p : params_)
        if (p.name == name) return p;
    throw ConfigError("encoder: unknown parameter " + name);
}

Tensor ModalityEncoder::leaf(Graph& g, const std::string& name, const EmbedOptions& options,
                             EmbedResult& result) const {
    if (options.overrides) {
        for (const auto& [n, t] : *options.overrides) {
            if (n == name) return t;
        }
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (params_[i].name == name) {
            Tensor t = g.input(params_[i].value, true);
            if (result.param_leaves.size() != params_.size()) result.param_leaves.resize(params_.size());
            result.param_leaves[i] = t;
            return t;
        }
    }
    throw ConfigError("encoder: unknown parameter " + name);
}

Tensor ModalityEncoder::encode_fine(Graph& g, Tensor x) const {
    if (x.cols() != config_.feat_dim)
        throw DimensionError("encode_fine: input dimension " + std::to_string(x.cols()) + " does not match feat_dim " +
                             std::to_string(config_.feat_dim));
    EmbedOptions options;
    EmbedResult scratch;
    Tensor h = g.add_rowvec(g.matmul(x, leaf(g, "fine_w1", options, scratch)), leaf(g, "fine_b1", options, scratch));
    if (config_.fine_depth == 2) {
        h = g.add_rowvec(g.matmul(g.tanh(h), leaf(g, "fine_w2", options, scratch)),
                         leaf(g, "fine_b2", options, scratch));
    }
    return h;
}

EmbedResult ModalityEncoder::embed(Graph& g, Tensor x, int n_instances, const Codebook* cb, ModalityNormStats* stats,
                                   const EmbedOptions& options) const {
    if (!options.use_vq && !options.use_continuous)
        throw ConfigError("embed: at least one of the discrete and continuous paths must be enabled");
    const int positions = config_.positions();
    if (x.rows() != n_instances * positions)
        throw DimensionError("embed: expected " + std::to_string(n_instances * positions) + " rows, got " +
                             std::to_string(x.rows()));
    if (x.cols() != config_.feat_dim) throw DimensionError("embed: input dimension does not match feat_dim");

    EmbedResult result;
    result.param_leaves.resize(params_.size());

    Tensor h = g.add_rowvec(g.matmul(x, leaf(g, "fine_w1", options, result)), leaf(g, "fine_b1", options, result));
    if (config_.fine_depth == 2) {
        h = g.add_rowvec(g.matmul(g.tanh(h), leaf(g, "fine_w2", options, result)),
                         leaf(g, "fine_b2", options, result));
    }
    result.fine = h;

    Tensor pooled = g.block_mean_rows(h, positions);
    Tensor z_high =
        g.add_rowvec(g.matmul(pooled, leaf(g, "high_w", options, result)), leaf(g, "high_b", options, result));

    if (!options.use_vq) {
        result.summary = z_high;
        return result;
    }
    if (cb == nullptr || stats == nullptr) throw ConfigError("embed: discrete path requires a codebook and norm stats");

    Tensor projected_raw =
        g.add_rowvec(g.matmul(h, leaf(g, "proj_w", options, result)), leaf(g, "proj_b", options, result));
    Tensor projected = normalize(g, projected_raw, *stats, options.norm_mode);
    result.projected = projected;
    result.has_vq = true;

    Tensor quantized;
    if (options.frozen != nullptr) {
        if (options.frozen->delta.rows != x.rows()) throw DimensionError("embed: frozen quantization row mismatch");
        quantized = g.add(projected, g.constant(options.frozen->delta));
        result.assignments = options.frozen->assignments;
    } else {
        QuantizeResult q = quantize(g, projected, *cb);
        quantized = q.quantized;
        result.assignments = std::move(q.assignments);
    }

    Tensor pooled_q = g.block_mean_rows(quantized, positions);
    Tensor z_code =
        g.add_rowvec(g.matmul(pooled_q, leaf(g, "code_w", options, result)), leaf(g, "code_b", options, result));
    result.sequence_dist = sequence_distribution(g, projected, *cb, positions);
    result.summary = options.use_continuous ? g.add(z_high, z_code) : z_code;
    return result;
}

std::vector<CodeAssignment> ModalityEncoder::split_assignments(const std::vector<int>& flat,
                                                               const std::vector<std::int64_t>& instance_ids) const {
    const int positions = config_.positions();
    if (flat.size() != instance_ids.size() * static_cast<std::size_t>(positions))
        throw DimensionError("split_assignments: assignment count does not match instances");
    std::vector<CodeAssignment> out;
    out.reserve(instance_ids.size());
    for (std::size_t i = 0; i < instance_ids.size(); ++i) {
        CodeAssignment a;
        a.instance_id = instance_ids[i];
        a.modality = modality_;
        a.grid = config_.grid;
        a.codes.assign(flat.begin() + static_cast<std::ptrdiff_t>(i * positions),
                       flat.begin() + static_cast<std::ptrdiff_t>((i + 1) * positions));
        out.push_back(std::move(a));
    }
    return out;
}

FrozenQuantization capture_quantization(const EmbedResult& result, const Codebook& cb) {
    if (!result.has_vq) throw ConfigError("capture_quantization: embed ran without the discrete path");
    FrozenQuantization frozen;
    frozen.assignments = result.assignments;
    const auto& projected = result.projected.values();
    frozen.delta = Matrix(result.projected.rows(), cb.dim);
    for (int r = 0; r < frozen.delta.rows; ++r) {
        const auto cw = cb.codewords.row(frozen.assignments[static_cast<std::size_t>(r)]);
        auto d = frozen.delta.row(r);
        for (int k = 0; k < cb.dim; ++k) d[k] = cw[k] - projected[static_cast<std::size_t>(r) * cb.dim + k];
    }
    return frozen;
}

}  // namespace cmx
