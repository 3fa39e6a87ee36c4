#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "cmx/binio.hpp"
#include "cmx/train.hpp"
#include "oracles.hpp"

using cmx::GenerateConfig;
using cmx::Model;
using cmx::PairedDataset;
using cmx::Phase;
using cmx::TrainConfig;

namespace {

GenerateConfig tiny_data_config() {
    GenerateConfig cfg;
    cfg.concepts = 4;
    cfg.instances = 24;
    cfg.len_a = 4;
    cfg.len_b = 3;
    cfg.feat_dim = 6;
    cfg.seed = 5;
    return cfg;
}

TrainConfig tiny_train_config(Phase phase) {
    TrainConfig cfg;
    cfg.phase = phase;
    cfg.batch_size = 8;
    cfg.epochs = 2;
    cfg.learning_rate = phase == Phase::kWarmstart ? 1e-3 : 1e-4;
    cfg.codebook.size = 8;
    cfg.codebook.dim = 5;
    cfg.encoder_a.feat_dim = 6;
    cfg.encoder_a.hidden_dim = 7;
    cfg.encoder_a.code_dim = 5;
    cfg.encoder_a.embed_dim = 6;
    cfg.encoder_a.grid = {2, 2};
    cfg.encoder_b = cfg.encoder_a;
    cfg.encoder_b.grid = {3};
    cfg.seed = 13;
    return cfg;
}

bool same_params(Model& a, Model& b) {
    auto pa = a.parameters();
    auto pb = b.parameters();
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i)
        if (!(pa[i]->value == pb[i]->value && pa[i]->adam_m == pb[i]->adam_m && pa[i]->adam_v == pb[i]->adam_v))
            return false;
    return true;
}

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_SUITE_BEGIN("training");

TEST_CASE("defaults match the published protocol") {
    TrainConfig cfg;
    CHECK(cfg.alpha == 0.1);
    CHECK(cfg.margin == 1e-3);
    CHECK(cfg.codebook.decay == 0.99);
    CHECK(cfg.codebook.reset_patience == 100);
}

TEST_CASE("optimizer: zero gradient from a fresh state leaves the value alone") {
    cmx::Parameter p("w", cmx::Matrix(1, 3, 2.0));
    cmx::optimizer_step(p, {0.0, 0.0, 0.0}, 0.1, 1);
    for (double v : p.value.data) CHECK(v == 2.0);
}

TEST_CASE("optimizer: single-scalar step matches the hand-computed update") {
    cmx::Parameter p("w", cmx::Matrix(1, 1, 1.0));
    const double g = 0.5, lr = 0.1;
    cmx::optimizer_step(p, {g}, lr, 1);

    const double m = 0.1 * g;
    const double v = 0.001 * g * g;
    const double m_hat = m / (1.0 - 0.9);
    const double v_hat = v / (1.0 - 0.999);
    const double expected = 1.0 - lr * m_hat / (std::sqrt(v_hat) + 1e-8);
    CHECK(p.value.data[0] == doctest::Approx(expected).epsilon(1e-12));
    CHECK(p.adam_m.data[0] == doctest::Approx(m).epsilon(1e-15));
    CHECK(p.adam_v.data[0] == doctest::Approx(v).epsilon(1e-15));
}

TEST_CASE("optimizer: shape mismatch is rejected") {
    cmx::Parameter p("w", cmx::Matrix(1, 2));
    CHECK_THROWS_AS(cmx::optimizer_step(p, {1.0}, 0.1, 1), cmx::DimensionError);
}

TEST_CASE("warm-start phase: loss is the pure margin objective and the codebook stays at init") {
    const PairedDataset ds = cmx::generate(tiny_data_config());
    TrainConfig cfg = tiny_train_config(Phase::kWarmstart);
    auto result = cmx::train(ds, cfg);
    for (const auto& e : result.trace) {
        CHECK(e.mean_cmcm == 0.0);
        CHECK(e.mean_loss == e.mean_mms);
        CHECK(e.active_codewords == 0);
    }
    Model fresh = Model::create(cfg);
    CHECK(result.model.codebook.codewords == fresh.codebook.codewords);
    CHECK(result.model.codebook.ema_count == fresh.codebook.ema_count);
}

TEST_CASE("zero learning rate keeps parameter values bit-identical") {
    const PairedDataset ds = cmx::generate(tiny_data_config());
    TrainConfig cfg = tiny_train_config(Phase::kWarmstart);
    cfg.learning_rate = 0.0;
    cfg.epochs = 1;
    Model before = Model::create(cfg);
    auto result = cmx::train(ds, cfg);
    auto pb = before.parameters();
    auto pa = result.model.parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value == pb[i]->value);
}

TEST_CASE("training is deterministic given the seed") {
    const PairedDataset ds = cmx::generate(tiny_data_config());
    TrainConfig warm_cfg = tiny_train_config(Phase::kWarmstart);
    auto w1 = cmx::train(ds, warm_cfg);
    auto w2 = cmx::train(ds, warm_cfg);
    CHECK(same_params(w1.model, w2.model));

    TrainConfig full_cfg = tiny_train_config(Phase::kFull);
    auto f1 = cmx::train(ds, full_cfg, &w1.model);
    auto f2 = cmx::train(ds, full_cfg, &w2.model);
    CHECK(same_params(f1.model, f2.model));
    CHECK(f1.model.codebook.codewords == f2.model.codebook.codewords);
    REQUIRE(f1.trace.size() == f2.trace.size());
    for (std::size_t i = 0; i < f1.trace.size(); ++i) CHECK(f1.trace[i].mean_loss == f2.trace[i].mean_loss);
}

TEST_CASE("joint phase requires a warm start unless a cold start is requested") {
    const PairedDataset ds = cmx::generate(tiny_data_config());
    TrainConfig cfg = tiny_train_config(Phase::kFull);
    CHECK_THROWS_AS(cmx::train(ds, cfg), cmx::ConfigError);
    cfg.allow_cold_start = true;
    CHECK_NOTHROW(cmx::train(ds, cfg));
}

TEST_CASE("codebook buffers are not in the optimizer's parameter set") {
    TrainConfig cfg = tiny_train_config(Phase::kFull);
    Model model = Model::create(cfg);
    for (const cmx::Parameter* p : model.parameters()) {
        CHECK(p->name.find("codebook") == std::string::npos);
        // No parameter aliases the codeword storage.
        CHECK(p->value.data.data() != model.codebook.codewords.data.data());
        CHECK(p->value.data.data() != model.codebook.ema_sum.data.data());
    }
}

TEST_CASE("joint phase moves the codebook and reports usage") {
    const PairedDataset ds = cmx::generate(tiny_data_config());
    TrainConfig warm_cfg = tiny_train_config(Phase::kWarmstart);
    auto warm = cmx::train(ds, warm_cfg);
    TrainConfig cfg = tiny_train_config(Phase::kFull);
    auto result = cmx::train(ds, cfg, &warm.model);
    CHECK_FALSE(result.model.codebook.codewords == warm.model.codebook.codewords);
    for (const auto& e : result.trace) CHECK(e.active_codewords > 0);
}

TEST_CASE("a poisoned parameter aborts with step diagnostics") {
    const PairedDataset ds = cmx::generate(tiny_data_config());
    TrainConfig cfg = tiny_train_config(Phase::kWarmstart);
    Model model = Model::create(cfg);
    model.encoder_a.param("fine_w1").value.data[0] = std::nan("");
    CHECK_THROWS_AS(cmx::resume_training(ds, cfg, std::move(model)), cmx::NumericError);
}

TEST_CASE("checkpoint: save-load-save is byte stable and preserves the model") {
    const PairedDataset ds = cmx::generate(tiny_data_config());
    TrainConfig warm_cfg = tiny_train_config(Phase::kWarmstart);
    auto warm = cmx::train(ds, warm_cfg);
    TrainConfig cfg = tiny_train_config(Phase::kFull);
    auto trained = cmx::train(ds, cfg, &warm.model);

    const std::string path1 = temp_path("cmx_test_ckpt1.cmck");
    const std::string path2 = temp_path("cmx_test_ckpt2.cmck");
    cmx::save_checkpoint(trained.model, cmx::config_hash(cfg), path1);
    auto loaded = cmx::load_checkpoint(path1);
    CHECK(loaded.cfg_hash == cmx::config_hash(cfg));
    CHECK(loaded.model.step == trained.model.step);
    CHECK(same_params(loaded.model, trained.model));
    CHECK(loaded.model.codebook.codewords == trained.model.codebook.codewords);
    CHECK(loaded.model.stats_a.mean == trained.model.stats_a.mean);

    cmx::save_checkpoint(loaded.model, loaded.cfg_hash, path2);
    CHECK(cmx::read_file_bytes(path1) == cmx::read_file_bytes(path2));
    std::remove(path1.c_str());
    std::remove(path2.c_str());
}

TEST_CASE("checkpoint: resuming mid-phase reproduces the uninterrupted trajectory bit-exactly") {
    const PairedDataset ds = cmx::generate(tiny_data_config());
    TrainConfig warm_cfg = tiny_train_config(Phase::kWarmstart);
    auto warm = cmx::train(ds, warm_cfg);

    TrainConfig cfg = tiny_train_config(Phase::kFull);
    cfg.epochs = 4;
    auto straight = cmx::train(ds, cfg, &warm.model);

    TrainConfig half_cfg = cfg;
    half_cfg.epochs = 2;
    auto half = cmx::train(ds, half_cfg, &warm.model);

    const std::string path = temp_path("cmx_test_resume.cmck");
    cmx::save_checkpoint(half.model, cmx::config_hash(cfg), path);
    auto loaded = cmx::load_checkpoint(path);
    auto resumed = cmx::resume_training(ds, cfg, std::move(loaded.model));
    std::remove(path.c_str());

    CHECK(same_params(resumed.model, straight.model));
    CHECK(resumed.model.codebook.codewords == straight.model.codebook.codewords);
    CHECK(resumed.model.codebook.ema_count == straight.model.codebook.ema_count);
    CHECK(resumed.model.stats_a.mean == straight.model.stats_a.mean);
    CHECK(resumed.model.stats_b.variance == straight.model.stats_b.variance);
    CHECK(resumed.model.step == straight.model.step);
}

TEST_CASE("checkpoint: bad magic and truncation raise format errors") {
    const std::string path = temp_path("cmx_test_badckpt.cmck");
    TrainConfig cfg = tiny_train_config(Phase::kWarmstart);
    Model model = Model::create(cfg);
    cmx::save_checkpoint(model, cmx::config_hash(cfg), path);

    auto bytes = cmx::read_file_bytes(path);
    auto corrupt = bytes;
    corrupt[0] = 'X';
    cmx::write_file_bytes(path, corrupt);
    CHECK_THROWS_AS(cmx::load_checkpoint(path), cmx::FormatError);

    auto truncated = bytes;
    truncated.resize(truncated.size() - 17);
    cmx::write_file_bytes(path, truncated);
    CHECK_THROWS_AS(cmx::load_checkpoint(path), cmx::FormatError);
    std::remove(path.c_str());
}

TEST_CASE("freezing the baseline encoders pins fine and summary nets") {
    const PairedDataset ds = cmx::generate(tiny_data_config());
    TrainConfig warm_cfg = tiny_train_config(Phase::kWarmstart);
    auto warm = cmx::train(ds, warm_cfg);

    TrainConfig cfg = tiny_train_config(Phase::kFull);
    cfg.freeze_baseline_encoders = true;
    auto result = cmx::train(ds, cfg, &warm.model);

    for (auto* encoder : {&result.model.encoder_a, &result.model.encoder_b}) {
        auto& before = encoder == &result.model.encoder_a ? warm.model.encoder_a : warm.model.encoder_b;
        for (auto& p : encoder->parameters()) {
            const bool frozen = p.name.rfind("fine_", 0) == 0 || p.name.rfind("high_", 0) == 0;
            if (frozen) {
                CHECK(p.value == before.param(p.name).value);
            } else if (p.name == "proj_w") {
                CHECK_FALSE(p.value == before.param(p.name).value);
            }
        }
    }
}

TEST_CASE("warm-start shape mismatch is a configuration error") {
    const PairedDataset ds = cmx::generate(tiny_data_config());
    TrainConfig warm_cfg = tiny_train_config(Phase::kWarmstart);
    auto warm = cmx::train(ds, warm_cfg);
    TrainConfig cfg = tiny_train_config(Phase::kFull);
    cfg.codebook.size = 16;
    CHECK_THROWS_AS(cmx::train(ds, cfg, &warm.model), cmx::ConfigError);
}

TEST_SUITE_END();
