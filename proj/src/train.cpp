#include "cmx/train.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "cmx/binio.hpp"
#include "cmx/losses.hpp"

namespace cmx {

namespace {

constexpr char kMagic[4] = {'C', 'M', 'C', 'K'};
constexpr std::uint16_t kVersion = 1;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t x = seed ^ (salt * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL);
    x ^= x >> 33;
    x *= 0xff51afd7ed558ccdULL;
    x ^= x >> 33;
    return x;
}

bool frozen_param(const std::string& name) {
    return name.rfind("fine_", 0) == 0 || name.rfind("high_", 0) == 0;
}

}  // namespace

Model Model::create(const TrainConfig& cfg) {
    Model m;
    m.encoder_a = ModalityEncoder('A', cfg.encoder_a, mix_seed(cfg.seed, 11));
    m.encoder_b = ModalityEncoder('B', cfg.encoder_b, mix_seed(cfg.seed, 13));
    m.codebook = init_codebook(cfg.codebook.size, cfg.codebook.dim, cfg.codebook.decay, cfg.codebook.reset_patience,
                               mix_seed(cfg.seed, 17));
    m.stats_a = ModalityNormStats(cfg.codebook.dim);
    m.stats_b = ModalityNormStats(cfg.codebook.dim);
    return m;
}

std::vector<Parameter*> Model::parameters() {
    std::vector<Parameter*> out;
    for (auto& p : encoder_a.parameters()) out.push_back(&p);
    for (auto& p : encoder_b.parameters()) out.push_back(&p);
    return out;
}

void optimizer_step(Parameter& param, const std::vector<double>& grad, double learning_rate, std::int64_t t) {
    if (grad.size() != param.value.data.size()) throw DimensionError("optimizer_step: gradient shape mismatch");
    if (t < 1) throw ConfigError("optimizer_step: step count must be >= 1");
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < grad.size(); ++i) {
        double& m = param.adam_m.data[i];
        double& v = param.adam_v.data[i];
        m = beta1 * m + (1.0 - beta1) * grad[i];
        v = beta2 * v + (1.0 - beta2) * grad[i] * grad[i];
        const double m_hat = m / bc1;
        const double v_hat = v / bc2;
        param.value.data[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + eps);
    }
}

namespace {

void validate_config(const TrainConfig& cfg) {
    if (cfg.alpha < 0.0) throw ConfigError("train: alpha must be non-negative");
    if (cfg.learning_rate < 0.0) throw ConfigError("train: learning rate must be non-negative");
    if (cfg.epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (cfg.encoder_a.code_dim != cfg.codebook.dim || cfg.encoder_b.code_dim != cfg.codebook.dim)
        throw ConfigError("train: encoder code_dim must match the codebook dimension");
    if (cfg.phase == Phase::kWarmstart && !cfg.use_continuous)
        throw ConfigError("train: the warm-start phase is the continuous baseline");
}

struct StepOutcome {
    double loss = 0.0;
    double mms = 0.0;
    double cmcm = 0.0;
};

StepOutcome run_step(Model& model, const PairedDataset& ds, const TrainConfig& cfg, const std::vector<int>& batch,
                     std::int64_t total_steps, std::set<int>* epoch_active) {
    const Matrix x_a = stack_features(ds, batch, 'A');
    const Matrix x_b = stack_features(ds, batch, 'B');
    const int n = static_cast<int>(batch.size());

    Graph g;
    EmbedOptions options;
    options.use_vq = cfg.use_vq();
    options.use_continuous = cfg.use_continuous;
    options.norm_mode = NormMode::kTrain;
    const Codebook* cb = options.use_vq ? &model.codebook : nullptr;
    EmbedResult res_a =
        model.encoder_a.embed(g, g.constant(x_a), n, cb, options.use_vq ? &model.stats_a : nullptr, options);
    EmbedResult res_b =
        model.encoder_b.embed(g, g.constant(x_b), n, cb, options.use_vq ? &model.stats_b : nullptr, options);

    Tensor loss_mms = mms_loss(g, res_a.summary, res_b.summary, cfg.margin);
    if (cfg.symmetric_loss)
        loss_mms = g.scale(g.add(loss_mms, mms_loss(g, res_b.summary, res_a.summary, cfg.margin)), 0.5);

    StepOutcome outcome;
    Tensor loss = loss_mms;
    if (options.use_vq && cfg.alpha > 0.0) {
        Tensor loss_cmcm = cmcm_loss(g, res_a.sequence_dist, res_b.sequence_dist);
        if (cfg.symmetric_loss)
            loss_cmcm = g.scale(g.add(loss_cmcm, cmcm_loss(g, res_b.sequence_dist, res_a.sequence_dist)), 0.5);
        outcome.cmcm = loss_cmcm.scalar();
        loss = total_loss(g, loss_mms, loss_cmcm, cfg.alpha);
    }
    outcome.mms = loss_mms.scalar();
    outcome.loss = loss.scalar();
    if (!std::isfinite(outcome.loss))
        throw NumericError("train: non-finite loss at step " + std::to_string(model.step) + " (mms=" +
                           std::to_string(outcome.mms) + ", cmcm=" + std::to_string(outcome.cmcm) + ")");

    g.backward(loss);

    double learning_rate = cfg.learning_rate;
    if (cfg.cosine_lr && total_steps > 1) {
        const double progress = static_cast<double>(model.step) / static_cast<double>(total_steps);
        learning_rate *= 0.5 * (1.0 + std::cos(3.14159265358979323846 * std::min(1.0, progress)));
    }
    double clip_scale = 1.0;
    if (cfg.grad_clip > 0.0) {
        double sq_norm = 0.0;
        for (const EmbedResult* res : {&res_a, &res_b})
            for (const Tensor& leaf : res->param_leaves) {
                if (!leaf.valid()) continue;
                for (double gv : leaf.grad()) sq_norm += gv * gv;
            }
        const double norm = std::sqrt(sq_norm);
        if (norm > cfg.grad_clip) clip_scale = cfg.grad_clip / norm;
    }

    const std::int64_t t = model.step + 1;
    std::vector<double> scaled;
    auto apply = [&](ModalityEncoder& enc, const EmbedResult& res) {
        auto& params = enc.parameters();
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (!res.param_leaves[i].valid()) continue;
            if (cfg.freeze_baseline_encoders && frozen_param(params[i].name)) continue;
            if (clip_scale != 1.0) {
                scaled = res.param_leaves[i].grad();
                for (double& gv : scaled) gv *= clip_scale;
                optimizer_step(params[i], scaled, learning_rate, t);
            } else {
                optimizer_step(params[i], res.param_leaves[i].grad(), learning_rate, t);
            }
        }
    };
    apply(model.encoder_a, res_a);
    apply(model.encoder_b, res_b);

    if (options.use_vq) {
        // Shared codebook: pool this step's assigned vectors from both
        // modalities, then retire long-starved codewords.
        const auto& va = res_a.projected.values();
        const auto& vb = res_b.projected.values();
        const int d = model.codebook.dim;
        Matrix pooled(res_a.projected.rows() + res_b.projected.rows(), d);
        std::copy(va.begin(), va.end(), pooled.data.begin());
        std::copy(vb.begin(), vb.end(), pooled.data.begin() + static_cast<std::ptrdiff_t>(va.size()));
        std::vector<int> assignments = res_a.assignments;
        assignments.insert(assignments.end(), res_b.assignments.begin(), res_b.assignments.end());
        ema_update(model.codebook, pooled, assignments);
        std::mt19937_64 reset_rng(mix_seed(cfg.seed, 0x5eedULL + static_cast<std::uint64_t>(model.step)));
        reset_dead(model.codebook, reset_rng);
        if (epoch_active)
            for (int v : assignments) epoch_active->insert(v);
    }
    ++model.step;
    return outcome;
}

TrainResult train_from(const PairedDataset& ds, const TrainConfig& cfg, Model model) {
    validate_config(cfg);
    const auto first_epoch_batches = batches(ds, cfg.batch_size, cfg.seed, 0);
    const std::int64_t steps_per_epoch = static_cast<std::int64_t>(first_epoch_batches.size());
    if (steps_per_epoch == 0) throw ConfigError("train: no full batch fits the dataset");
    const int start_epoch = static_cast<int>(model.step / steps_per_epoch);

    model.vq_trained = model.vq_trained || cfg.use_vq();
    model.continuous_path = cfg.use_continuous;
    const std::int64_t total_steps = steps_per_epoch * cfg.epochs;

    TrainResult result;
    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        EpochStats stats;
        stats.epoch = epoch;
        std::set<int> active;
        const auto epoch_batches = batches(ds, cfg.batch_size, cfg.seed, epoch);
        for (const auto& batch : epoch_batches) {
            const StepOutcome out = run_step(model, ds, cfg, batch, total_steps, &active);
            stats.mean_loss += out.loss;
            stats.mean_mms += out.mms;
            stats.mean_cmcm += out.cmcm;
        }
        const double inv = 1.0 / static_cast<double>(epoch_batches.size());
        stats.mean_loss *= inv;
        stats.mean_mms *= inv;
        stats.mean_cmcm *= inv;
        stats.active_codewords = static_cast<int>(active.size());
        result.trace.push_back(stats);
    }
    result.model = std::move(model);
    return result;
}

}  // namespace

TrainResult train(const PairedDataset& ds, const TrainConfig& cfg, const Model* warmstart) {
    validate_config(cfg);
    Model model;
    if (cfg.phase == Phase::kFull && warmstart == nullptr && !cfg.allow_cold_start)
        throw ConfigError("train: the joint phase needs a warm-start model (or an explicit cold start)");
    if (warmstart != nullptr) {
        model = *warmstart;
        if (model.codebook.size != cfg.codebook.size || model.codebook.dim != cfg.codebook.dim)
            throw ConfigError("train: warm-start codebook shape does not match the configuration");
        // Fresh phase: new optimizer state and step counter, weights kept.
        for (Parameter* p : model.parameters()) {
            std::fill(p->adam_m.data.begin(), p->adam_m.data.end(), 0.0);
            std::fill(p->adam_v.data.begin(), p->adam_v.data.end(), 0.0);
        }
        model.step = 0;
    } else {
        model = Model::create(cfg);
    }
    return train_from(ds, cfg, std::move(model));
}

TrainResult resume_training(const PairedDataset& ds, const TrainConfig& cfg, Model model) {
    return train_from(ds, cfg, std::move(model));
}

EncodedDataset encode_dataset(Model& model, const PairedDataset& ds) {
    return encode_dataset(model, ds, model.vq_trained, model.continuous_path);
}

EncodedDataset encode_dataset(Model& model, const PairedDataset& ds, bool use_vq, bool use_continuous) {
    const int n = static_cast<int>(ds.instances.size());
    if (n == 0) throw DataError("encode_dataset: empty dataset");
    EncodedDataset out;
    out.z_a = Matrix(n, model.encoder_a.config().embed_dim);
    out.z_b = Matrix(n, model.encoder_b.config().embed_dim);

    constexpr int kChunk = 256;
    for (int start = 0; start < n; start += kChunk) {
        const int count = std::min(kChunk, n - start);
        std::vector<int> indices(static_cast<std::size_t>(count));
        std::vector<std::int64_t> ids(static_cast<std::size_t>(count));
        for (int i = 0; i < count; ++i) {
            indices[static_cast<std::size_t>(i)] = start + i;
            ids[static_cast<std::size_t>(i)] = ds.instances[static_cast<std::size_t>(start + i)].id;
        }
        Graph g;
        EmbedOptions options;
        options.use_vq = use_vq;
        options.use_continuous = use_continuous;
        options.norm_mode = NormMode::kEval;
        EmbedResult res_a = model.encoder_a.embed(g, g.constant(stack_features(ds, indices, 'A')), count,
                                                  use_vq ? &model.codebook : nullptr,
                                                  use_vq ? &model.stats_a : nullptr, options);
        EmbedResult res_b = model.encoder_b.embed(g, g.constant(stack_features(ds, indices, 'B')), count,
                                                  use_vq ? &model.codebook : nullptr,
                                                  use_vq ? &model.stats_b : nullptr, options);
        std::copy(res_a.summary.values().begin(), res_a.summary.values().end(),
                  out.z_a.data.begin() + static_cast<std::ptrdiff_t>(start) * out.z_a.cols);
        std::copy(res_b.summary.values().begin(), res_b.summary.values().end(),
                  out.z_b.data.begin() + static_cast<std::ptrdiff_t>(start) * out.z_b.cols);
        if (use_vq) {
            auto chunk_a = model.encoder_a.split_assignments(res_a.assignments, ids);
            auto chunk_b = model.encoder_b.split_assignments(res_b.assignments, ids);
            out.assign_a.insert(out.assign_a.end(), chunk_a.begin(), chunk_a.end());
            out.assign_b.insert(out.assign_b.end(), chunk_b.begin(), chunk_b.end());
        }
    }
    return out;
}

std::uint64_t config_hash(const TrainConfig& cfg) {
    // FNV-1a over the fields that determine tensor shapes.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mixi = [&h](std::int64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= static_cast<std::uint64_t>(v >> (8 * i)) & 0xff;
            h *= 0x100000001b3ULL;
        }
    };
    mixi(cfg.codebook.size);
    mixi(cfg.codebook.dim);
    for (const EncoderConfig* e : {&cfg.encoder_a, &cfg.encoder_b}) {
        mixi(e->feat_dim);
        mixi(e->hidden_dim);
        mixi(e->code_dim);
        mixi(e->embed_dim);
        mixi(e->fine_depth);
        mixi(static_cast<std::int64_t>(e->grid.size()));
        for (int g : e->grid) mixi(g);
    }
    return h;
}

namespace {

struct Entry {
    std::string name;
    int rows = 0;
    int cols = 0;
    std::vector<double> data;
};

std::vector<Entry> model_entries(const Model& model) {
    std::vector<Entry> entries;
    auto push = [&entries](std::string name, int rows, int cols, std::vector<double> data) {
        if (data.size() != static_cast<std::size_t>(rows) * cols)
            throw DimensionError("checkpoint entry " + name + " has inconsistent shape");
        entries.push_back({std::move(name), rows, cols, std::move(data)});
    };
    auto push_encoder = [&push](const std::string& prefix, const ModalityEncoder& enc) {
        for (const auto& p : enc.parameters()) {
            push(prefix + "/" + p.name, p.value.rows, p.value.cols, p.value.data);
            push(prefix + "/" + p.name + "/adam_m", p.adam_m.rows, p.adam_m.cols, p.adam_m.data);
            push(prefix + "/" + p.name + "/adam_v", p.adam_v.rows, p.adam_v.cols, p.adam_v.data);
        }
        const auto& c = enc.config();
        push(prefix + "/meta/dims", 1, 5,
             {static_cast<double>(c.feat_dim), static_cast<double>(c.hidden_dim), static_cast<double>(c.code_dim),
              static_cast<double>(c.embed_dim), static_cast<double>(c.fine_depth)});
        std::vector<double> grid(c.grid.begin(), c.grid.end());
        const int grid_axes = static_cast<int>(grid.size());
        push(prefix + "/meta/grid", 1, grid_axes, std::move(grid));
    };
    push_encoder("a", model.encoder_a);
    push_encoder("b", model.encoder_b);

    const Codebook& cb = model.codebook;
    push("codebook/codewords", cb.codewords.rows, cb.codewords.cols, cb.codewords.data);
    push("codebook/ema_sum", cb.ema_sum.rows, cb.ema_sum.cols, cb.ema_sum.data);
    push("codebook/ema_count", 1, cb.size, cb.ema_count);
    push("codebook/inactive", 1, cb.size, std::vector<double>(cb.inactive_steps.begin(), cb.inactive_steps.end()));
    push("codebook/meta", 1, 2, {cb.decay, static_cast<double>(cb.reset_patience)});

    auto push_stats = [&push](const std::string& prefix, const ModalityNormStats& s) {
        push(prefix + "/mean", 1, static_cast<int>(s.mean.size()), s.mean);
        push(prefix + "/variance", 1, static_cast<int>(s.variance.size()), s.variance);
        push(prefix + "/count", 1, 1, {s.sample_count});
    };
    push_stats("norm_a", model.stats_a);
    push_stats("norm_b", model.stats_b);
    push("meta/flags", 1, 2, {model.vq_trained ? 1.0 : 0.0, model.continuous_path ? 1.0 : 0.0});
    return entries;
}

}  // namespace

void save_checkpoint(const Model& model, std::uint64_t cfg_hash, const std::string& path) {
    const std::vector<Entry> entries = model_entries(model);
    ByteWriter w;
    w.raw(kMagic, 4);
    w.u16(kVersion);
    w.u64(cfg_hash);
    w.u64(static_cast<std::uint64_t>(model.step));
    w.u32(static_cast<std::uint32_t>(entries.size()));
    std::uint64_t offset = 0;
    for (const auto& e : entries) {
        w.str(e.name);
        w.u32(static_cast<std::uint32_t>(e.rows));
        w.u32(static_cast<std::uint32_t>(e.cols));
        w.u64(offset);
        offset += e.data.size() * sizeof(double);
    }
    for (const auto& e : entries)
        for (double v : e.data) w.f64(v);
    write_file_bytes(path, w.bytes());
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    ByteReader r(read_file_bytes(path));
    char magic[4];
    for (char& c : magic) c = static_cast<char>(r.u8());
    if (std::string(magic, 4) != std::string(kMagic, 4)) throw FormatError("bad magic, expected CMCK", 0);
    const std::uint16_t version = r.u16();
    if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version), r.offset() - 2);

    LoadedCheckpoint out;
    out.cfg_hash = r.u64();
    out.model.step = static_cast<std::int64_t>(r.u64());
    const std::uint32_t count = r.u32();
    std::vector<Entry> entries(count);
    for (auto& e : entries) {
        e.name = r.str();
        e.rows = static_cast<int>(r.u32());
        e.cols = static_cast<int>(r.u32());
        r.u64();  // offset, implied by order
    }
    for (auto& e : entries) {
        e.data.resize(static_cast<std::size_t>(e.rows) * e.cols);
        for (auto& v : e.data) v = r.f64();
    }
    r.expect_exhausted();

    auto find = [&entries](const std::string& name) -> const Entry& {
        for (const auto& e : entries)
            if (e.name == name) return e;
        throw FormatError("checkpoint is missing entry " + name, 0);
    };
    auto as_matrix = [](const Entry& e) {
        Matrix m(e.rows, e.cols);
        m.data = e.data;
        return m;
    };

    auto load_encoder = [&](const std::string& prefix, char modality) {
        const Entry& dims = find(prefix + "/meta/dims");
        const Entry& grid = find(prefix + "/meta/grid");
        EncoderConfig cfg;
        cfg.feat_dim = static_cast<int>(dims.data[0]);
        cfg.hidden_dim = static_cast<int>(dims.data[1]);
        cfg.code_dim = static_cast<int>(dims.data[2]);
        cfg.embed_dim = static_cast<int>(dims.data[3]);
        cfg.fine_depth = static_cast<int>(dims.data[4]);
        cfg.grid.clear();
        for (double g : grid.data) cfg.grid.push_back(static_cast<int>(g));
        ModalityEncoder enc(modality, cfg, 0);
        for (auto& p : enc.parameters()) {
            p.value = as_matrix(find(prefix + "/" + p.name));
            p.adam_m = as_matrix(find(prefix + "/" + p.name + "/adam_m"));
            p.adam_v = as_matrix(find(prefix + "/" + p.name + "/adam_v"));
        }
        return enc;
    };
    out.model.encoder_a = load_encoder("a", 'A');
    out.model.encoder_b = load_encoder("b", 'B');

    const Entry& cw = find("codebook/codewords");
    const Entry& cb_meta = find("codebook/meta");
    out.model.codebook.size = cw.rows;
    out.model.codebook.dim = cw.cols;
    out.model.codebook.decay = cb_meta.data[0];
    out.model.codebook.reset_patience = static_cast<int>(cb_meta.data[1]);
    out.model.codebook.codewords = as_matrix(cw);
    out.model.codebook.ema_sum = as_matrix(find("codebook/ema_sum"));
    out.model.codebook.ema_count = find("codebook/ema_count").data;
    out.model.codebook.inactive_steps.clear();
    for (double v : find("codebook/inactive").data) out.model.codebook.inactive_steps.push_back(static_cast<int>(v));

    auto load_stats = [&](const std::string& prefix) {
        ModalityNormStats s;
        s.mean = find(prefix + "/mean").data;
        s.variance = find(prefix + "/variance").data;
        s.sample_count = find(prefix + "/count").data[0];
        return s;
    };
    out.model.stats_a = load_stats("norm_a");
    out.model.stats_b = load_stats("norm_b");
    const Entry& flags = find("meta/flags");
    out.model.vq_trained = flags.data[0] != 0.0;
    out.model.continuous_path = flags.data[1] != 0.0;
    return out;
}

}  // namespace cmx
