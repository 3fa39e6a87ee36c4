#include "cmx/diagnostics.hpp"

#include <random>

#include "cmx/losses.hpp"
#include "cmx/train.hpp"

namespace cmx {

namespace {

Matrix random_matrix(int rows, int cols, std::mt19937_64& rng, double scale = 1.0) {
    return random_normal(rows, cols, rng, scale);
}

TrainConfig pipeline_config() {
    TrainConfig cfg;
    cfg.phase = Phase::kFull;
    cfg.codebook.size = 16;
    cfg.codebook.dim = 5;
    cfg.encoder_a.feat_dim = 6;
    cfg.encoder_a.hidden_dim = 7;
    cfg.encoder_a.code_dim = 5;
    cfg.encoder_a.embed_dim = 6;
    cfg.encoder_a.grid = {2, 2};
    cfg.encoder_b = cfg.encoder_a;
    cfg.encoder_b.grid = {3};
    return cfg;
}

// Differentiates the whole two-modality pipeline w.r.t. every encoder
// parameter, one leaf at a time, against central differences.
GradCheckResult pipeline_check(int batch, std::uint64_t seed, double step) {
    TrainConfig cfg = pipeline_config();
    cfg.seed = seed;
    Model model = Model::create(cfg);

    std::mt19937_64 rng(seed * 977 + 3);
    const Matrix x_a = random_matrix(batch * model.encoder_a.config().positions(), 6, rng);
    const Matrix x_b = random_matrix(batch * model.encoder_b.config().positions(), 6, rng);

    // Capture quantization at the base point so the finite differences probe
    // the same surrogate the backward pass uses.
    FrozenQuantization frozen_a, frozen_b;
    {
        Graph g;
        ModalityNormStats stats_a = model.stats_a, stats_b = model.stats_b;
        EmbedOptions options;
        EmbedResult res_a = model.encoder_a.embed(g, g.constant(x_a), batch, &model.codebook, &stats_a, options);
        EmbedResult res_b = model.encoder_b.embed(g, g.constant(x_b), batch, &model.codebook, &stats_b, options);
        frozen_a = capture_quantization(res_a, model.codebook);
        frozen_b = capture_quantization(res_b, model.codebook);
    }

    GradCheckResult worst;
    for (char side : {'A', 'B'}) {
        ModalityEncoder& enc = side == 'A' ? model.encoder_a : model.encoder_b;
        for (const Parameter& param : enc.parameters()) {
            auto fn = [&, side](Graph& g, Tensor point) {
                ModalityNormStats stats_a = model.stats_a, stats_b = model.stats_b;
                const std::vector<std::pair<std::string, Tensor>> overrides = {{param.name, point}};
                EmbedOptions opt_a, opt_b;
                opt_a.frozen = &frozen_a;
                opt_b.frozen = &frozen_b;
                (side == 'A' ? opt_a : opt_b).overrides = &overrides;
                EmbedResult res_a = model.encoder_a.embed(g, g.constant(x_a), batch, &model.codebook, &stats_a, opt_a);
                EmbedResult res_b = model.encoder_b.embed(g, g.constant(x_b), batch, &model.codebook, &stats_b, opt_b);
                Tensor mms = mms_loss(g, res_a.summary, res_b.summary, 1e-3);
                Tensor cmcm = cmcm_loss(g, res_a.sequence_dist, res_b.sequence_dist);
                return total_loss(g, mms, cmcm, 0.1);
            };
            const GradCheckResult res = grad_check(fn, param.value.rows, param.value.cols, param.value.data, step);
            if (res.max_rel_error > worst.max_rel_error) worst = res;
        }
    }
    return worst;
}

}  // namespace

std::vector<GradCheckReport> standard_grad_checks(std::uint64_t seed, double step) {
    std::vector<GradCheckReport> reports;

    {
        std::mt19937_64 rng(seed);
        const Matrix z_a = random_matrix(4, 8, rng);
        const Matrix z_b = random_matrix(4, 8, rng);
        auto fn = [&](Graph& g, Tensor point) { return mms_loss(g, point, g.constant(z_b), 1e-3); };
        reports.push_back({"mms(4x8)", grad_check(fn, 4, 8, z_a.data, step)});
    }
    {
        std::mt19937_64 rng(seed + 1);
        Codebook cb = init_codebook(16, 4, 0.99, 100, seed + 2);
        const Matrix raw_a = random_matrix(9, 4, rng);
        const Matrix raw_b = random_matrix(9, 4, rng);
        auto fn = [&](Graph& g, Tensor point) {
            Tensor dist_a = sequence_distribution(g, point, cb, 3);
            Tensor dist_b = sequence_distribution(g, g.constant(raw_b), cb, 3);
            return cmcm_loss(g, dist_a, dist_b);
        };
        reports.push_back({"cmcm(3 pairs)", grad_check(fn, 9, 4, raw_a.data, step)});
    }
    for (int batch : {2, 3, 4}) {
        reports.push_back({"pipeline(N=" + std::to_string(batch) + ")",
                           pipeline_check(batch, seed + static_cast<std::uint64_t>(batch), step)});
    }
    return reports;
}

}  // namespace cmx
