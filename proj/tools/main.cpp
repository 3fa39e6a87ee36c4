// Command-line front end: dataset generation, two-phase training, retrieval
// evaluation, codeword analysis, localization and gradient audits.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "cmx/analysis.hpp"
#include "cmx/dataset.hpp"
#include "cmx/diagnostics.hpp"
#include "cmx/errors.hpp"
#include "cmx/train.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

// Flat key = value config file, '#' comments, optional [section] headers.
std::map<std::string, std::string> parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw cmx::ConfigError("cannot open config file: " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    auto trim = [](std::string s) {
        const auto begin = s.find_first_not_of(" \t\r");
        const auto end = s.find_last_not_of(" \t\r");
        if (begin == std::string::npos) return std::string();
        return s.substr(begin, end - begin + 1);
    };
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto comment = line.find('#');
        if (comment != std::string::npos) line.erase(comment);
        std::string t = trim(line);
        if (t.empty() || (t.front() == '[' && t.back() == ']')) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw cmx::ConfigError("config line " + std::to_string(line_no) + " is not key = value");
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
        kv[key] = value;
    }
    return kv;
}

std::vector<int> parse_grid(const std::string& spec) {
    std::vector<int> grid;
    std::stringstream ss(spec);
    std::string part;
    while (std::getline(ss, part, 'x')) {
        if (part.empty()) throw cmx::ConfigError("bad grid spec: " + spec);
        grid.push_back(std::stoi(part));
    }
    if (grid.empty()) throw cmx::ConfigError("bad grid spec: " + spec);
    return grid;
}

std::string grid_to_string(const std::vector<int>& grid) {
    std::string s;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (i) s += 'x';
        s += std::to_string(grid[i]);
    }
    return s;
}

struct TrainCliOptions {
    std::string data_path;
    std::string out_dir;
    std::string phase = "warmstart";
    std::string warmstart_ckpt;
    std::string config_file;
    bool no_warmstart = false;
    std::optional<double> alpha, margin, lr;
    std::optional<int> batch, epochs, codebook_size, code_dim, hidden_dim, embed_dim, fine_depth, reset_patience;
    std::optional<double> decay;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> grid_a, grid_b;
    bool no_continuous = false;
    bool symmetric = false;
    bool freeze_baseline = false;
};

// Resolution order: built-in default < config file < explicit flag.
cmx::TrainConfig resolve_train_config(const TrainCliOptions& opt, const cmx::PairedDataset& ds) {
    std::map<std::string, std::string> file;
    if (!opt.config_file.empty()) file = parse_config_file(opt.config_file);

    auto file_double = [&file](const char* key, double fallback) {
        const auto it = file.find(key);
        return it == file.end() ? fallback : std::stod(it->second);
    };
    auto file_int = [&file](const char* key, int fallback) {
        const auto it = file.find(key);
        return it == file.end() ? fallback : std::stoi(it->second);
    };
    auto file_bool = [&file](const char* key, bool fallback) {
        const auto it = file.find(key);
        if (it == file.end()) return fallback;
        return it->second == "true" || it->second == "1";
    };

    cmx::TrainConfig cfg;
    cfg.phase = opt.phase == "full" ? cmx::Phase::kFull : cmx::Phase::kWarmstart;
    cfg.alpha = opt.alpha.value_or(file_double("alpha", cfg.alpha));
    cfg.margin = opt.margin.value_or(file_double("margin", cfg.margin));
    const double default_lr = cfg.phase == cmx::Phase::kFull ? 1e-4 : 1e-3;
    cfg.learning_rate = opt.lr.value_or(file_double("learning_rate", default_lr));
    cfg.batch_size = opt.batch.value_or(file_int("batch_size", cfg.batch_size));
    cfg.epochs = opt.epochs.value_or(file_int("epochs", cfg.epochs));
    cfg.codebook.size = opt.codebook_size.value_or(file_int("codebook_size", cfg.codebook.size));
    cfg.codebook.decay = opt.decay.value_or(file_double("decay", cfg.codebook.decay));
    cfg.codebook.reset_patience = opt.reset_patience.value_or(file_int("reset_patience", cfg.codebook.reset_patience));
    cfg.codebook.dim = opt.code_dim.value_or(file_int("code_dim", cfg.codebook.dim));
    cfg.seed = opt.seed.value_or(static_cast<std::uint64_t>(file_int("seed", 1)));
    cfg.use_continuous = opt.no_continuous ? false : file_bool("use_continuous", true);
    cfg.symmetric_loss = opt.symmetric ? true : file_bool("symmetric_loss", false);
    cfg.freeze_baseline_encoders = opt.freeze_baseline ? true : file_bool("freeze_baseline", false);
    cfg.allow_cold_start = opt.no_warmstart;

    auto fill_encoder = [&](cmx::EncoderConfig& e, const char* grid_key, const std::optional<std::string>& grid_flag,
                            int seq_len) {
        e.feat_dim = ds.config.feat_dim;
        e.hidden_dim = opt.hidden_dim.value_or(file_int("hidden_dim", e.hidden_dim));
        e.code_dim = cfg.codebook.dim;
        e.embed_dim = opt.embed_dim.value_or(file_int("embed_dim", e.embed_dim));
        e.fine_depth = opt.fine_depth.value_or(file_int("fine_depth", e.fine_depth));
        std::string spec = grid_flag.value_or(file.count(grid_key) ? file.at(grid_key) : std::to_string(seq_len));
        e.grid = parse_grid(spec);
        if (e.positions() != seq_len)
            throw cmx::ConfigError(std::string(grid_key) + " " + spec + " does not cover a sequence of length " +
                                   std::to_string(seq_len));
    };
    // Default layouts: a square grid for modality A when the length is a
    // perfect square, a flat timeline otherwise.
    const int len_a = ds.config.len_a;
    const int root = static_cast<int>(std::lround(std::sqrt(static_cast<double>(len_a))));
    std::optional<std::string> grid_a = opt.grid_a;
    if (!grid_a && !file.count("grid_a") && root * root == len_a && root > 1)
        grid_a = std::to_string(root) + "x" + std::to_string(root);
    fill_encoder(cfg.encoder_a, "grid_a", grid_a, len_a);
    fill_encoder(cfg.encoder_b, "grid_b", opt.grid_b, ds.config.len_b);
    return cfg;
}

void write_text(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw cmx::FormatError("cannot write " + path.string(), 0);
    out << content;
}

void write_provenance(const cmx::TrainConfig& cfg, const std::string& phase, const fs::path& out_dir) {
    std::ostringstream out;
    out << "# resolved run configuration\n";
    out << "phase = \"" << phase << "\"\n";
    out << "alpha = " << cfg.alpha << "\n";
    out << "margin = " << cfg.margin << "\n";
    out << "learning_rate = " << cfg.learning_rate << "\n";
    out << "batch_size = " << cfg.batch_size << "\n";
    out << "epochs = " << cfg.epochs << "\n";
    out << "codebook_size = " << cfg.codebook.size << "\n";
    out << "code_dim = " << cfg.codebook.dim << "\n";
    out << "decay = " << cfg.codebook.decay << "\n";
    out << "reset_patience = " << cfg.codebook.reset_patience << "\n";
    out << "hidden_dim = " << cfg.encoder_a.hidden_dim << "\n";
    out << "embed_dim = " << cfg.encoder_a.embed_dim << "\n";
    out << "fine_depth = " << cfg.encoder_a.fine_depth << "\n";
    out << "grid_a = \"" << grid_to_string(cfg.encoder_a.grid) << "\"\n";
    out << "grid_b = \"" << grid_to_string(cfg.encoder_b.grid) << "\"\n";
    out << "use_continuous = " << (cfg.use_continuous ? "true" : "false") << "\n";
    out << "symmetric_loss = " << (cfg.symmetric_loss ? "true" : "false") << "\n";
    out << "freeze_baseline = " << (cfg.freeze_baseline_encoders ? "true" : "false") << "\n";
    out << "seed = " << cfg.seed << "\n";
    write_text(out_dir / "run_config.toml", out.str());
}

int run_gen_data(const cmx::GenerateConfig& cfg, const std::string& out_path) {
    const cmx::PairedDataset ds = cmx::generate(cfg);
    cmx::save(ds, out_path);
    std::cout << "wrote " << out_path << ": " << ds.instances.size() << " instances, " << ds.concepts.size()
              << " concepts, lengths " << cfg.len_a << "/" << cfg.len_b << ", feat_dim " << cfg.feat_dim << ", sigma "
              << cfg.noise_sigma << ", seed " << cfg.seed << "\n";
    return kExitOk;
}

int run_train(const TrainCliOptions& opt) {
    const cmx::PairedDataset ds = cmx::load(opt.data_path);
    const cmx::TrainConfig cfg = resolve_train_config(opt, ds);

    std::optional<cmx::Model> warmstart;
    if (!opt.warmstart_ckpt.empty()) {
        auto loaded = cmx::load_checkpoint(opt.warmstart_ckpt);
        if (loaded.cfg_hash != cmx::config_hash(cfg))
            throw cmx::ConfigError("warm-start checkpoint shape hash does not match this configuration");
        warmstart = std::move(loaded.model);
    }
    if (cfg.phase == cmx::Phase::kFull && !warmstart && !cfg.allow_cold_start)
        throw cmx::ConfigError("--phase full needs --warmstart-ckpt (or --no-warmstart for a cold start)");

    fs::create_directories(opt.out_dir);
    write_provenance(cfg, opt.phase, opt.out_dir);

    const auto result = cmx::train(ds, cfg, warmstart ? &*warmstart : nullptr);

    std::ostringstream csv;
    csv << "# format: train-trace-v1\n";
    csv << "epoch,mean_loss,mean_mms,mean_cmcm,active_codewords\n";
    for (const auto& e : result.trace)
        csv << e.epoch << ',' << e.mean_loss << ',' << e.mean_mms << ',' << e.mean_cmcm << ',' << e.active_codewords
            << '\n';
    write_text(fs::path(opt.out_dir) / "metrics.csv", csv.str());

    const std::string ckpt = (fs::path(opt.out_dir) / "checkpoint.cmck").string();
    cmx::save_checkpoint(result.model, cmx::config_hash(cfg), ckpt);
    std::cout << "trained " << result.trace.size() << " epochs; checkpoint at " << ckpt << "\n";
    if (!result.trace.empty())
        std::cout << "final epoch loss " << result.trace.back().mean_loss << ", active codewords "
                  << result.trace.back().active_codewords << "\n";
    return kExitOk;
}

int run_eval(const std::string& data_path, const std::string& ckpt_path, const std::string& out_dir) {
    const cmx::PairedDataset ds = cmx::load(data_path);
    cmx::Model model = cmx::load_checkpoint(ckpt_path).model;
    const auto encoded = cmx::encode_dataset(model, ds);
    const auto report_ab = cmx::retrieval_metrics(encoded.z_a, encoded.z_b, cmx::Direction::kAToB);
    const auto report_ba = cmx::retrieval_metrics(encoded.z_a, encoded.z_b, cmx::Direction::kBToA);

    fs::create_directories(out_dir);
    const std::string csv = cmx::retrieval_csv({report_ab, report_ba});
    write_text(fs::path(out_dir) / "retrieval.csv", csv);
    std::cout << csv;
    return kExitOk;
}

int run_analyze(const std::string& data_path, const std::string& ckpt_path, const std::string& out_dir,
                double partition_threshold) {
    const cmx::PairedDataset ds = cmx::load(data_path);
    cmx::Model model = cmx::load_checkpoint(ckpt_path).model;
    if (!model.vq_trained) throw cmx::DataError("checkpoint has no discrete path to analyze (baseline phase)");

    const auto encoded = cmx::encode_dataset(model, ds);
    const auto stats = cmx::collect_stats(ds, encoded.assign_a, encoded.assign_b, model.codebook.size);

    std::vector<std::string> label_names;
    for (const auto& c : ds.concepts) label_names.push_back(c.token);

    fs::create_directories(out_dir);
    write_text(fs::path(out_dir) / "conditional_a.csv",
               cmx::conditional_probability_csv(cmx::conditional_probability(stats, 'A'), label_names));
    write_text(fs::path(out_dir) / "conditional_b.csv",
               cmx::conditional_probability_csv(cmx::conditional_probability(stats, 'B'), label_names));
    write_text(fs::path(out_dir) / "correspondence.csv",
               cmx::correspondence_csv(cmx::correspondence_table(stats, label_names)));
    write_text(fs::path(out_dir) / "codeword_stats.json", cmx::codeword_stats_json(stats, label_names));

    const double partition = cmx::partition_statistic(stats, partition_threshold);
    const double agreement = cmx::label_agreement(stats);
    int activated = 0;
    for (int v = 0; v < stats.codebook_size; ++v)
        if (stats.occurrence_a[static_cast<std::size_t>(v)] + stats.occurrence_b[static_cast<std::size_t>(v)] > 0)
            ++activated;
    std::ostringstream summary;
    summary << "# format: analysis-summary-v1\n";
    summary << "metric,value\n";
    summary << "activated_codewords," << activated << "\n";
    summary << "partition_threshold," << partition_threshold << "\n";
    summary << "partition_statistic," << partition << "\n";
    summary << "label_agreement," << agreement << "\n";
    write_text(fs::path(out_dir) / "summary.csv", summary.str());
    std::cout << summary.str();
    return kExitOk;
}

int run_localize(const std::string& data_path, const std::string& ckpt_path, std::int64_t instance_id, int code,
                 const std::string& out_file) {
    const cmx::PairedDataset ds = cmx::load(data_path);
    cmx::Model model = cmx::load_checkpoint(ckpt_path).model;
    if (!model.vq_trained) throw cmx::DataError("checkpoint has no discrete path to localize");

    const auto it = std::find_if(ds.instances.begin(), ds.instances.end(),
                                 [instance_id](const cmx::PairedInstance& inst) { return inst.id == instance_id; });
    if (it == ds.instances.end()) throw cmx::DataError("instance " + std::to_string(instance_id) + " not in dataset");

    const auto encoded = cmx::encode_dataset(model, ds);
    const std::size_t index = static_cast<std::size_t>(it - ds.instances.begin());
    const std::vector<cmx::LocalizationMask> masks = {
        cmx::localize(encoded.assign_a[index], code, model.codebook.size),
        cmx::localize(encoded.assign_b[index], code, model.codebook.size),
    };
    const std::string json = cmx::localization_json(masks, code);
    write_text(out_file, json);
    std::cout << json << "\n";
    return kExitOk;
}

int run_grad_check(std::uint64_t seed, double step, double threshold) {
    const auto reports = cmx::standard_grad_checks(seed, step);
    double worst = 0.0;
    for (const auto& r : reports) {
        std::printf("%-16s max relative error %.3e\n", r.name.c_str(), r.result.max_rel_error);
        worst = std::max(worst, r.result.max_rel_error);
    }
    if (worst > threshold) {
        std::fprintf(stderr, "gradient check failed: %.3e exceeds %.3e\n", worst, threshold);
        return kExitNumeric;
    }
    std::printf("all gradients within %.1e\n", threshold);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cross-modal discrete representation learning workbench"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen-data", "synthesize a paired-modality dataset");
    cmx::GenerateConfig gen_cfg;
    std::string gen_out;
    gen->add_option("--concepts", gen_cfg.concepts, "latent concept count");
    gen->add_option("--instances", gen_cfg.instances, "instance count");
    gen->add_option("--len-a", gen_cfg.len_a, "modality A sequence length");
    gen->add_option("--len-b", gen_cfg.len_b, "modality B sequence length");
    gen->add_option("--feat-dim", gen_cfg.feat_dim, "raw feature dimension");
    gen->add_option("--noise", gen_cfg.noise_sigma, "noise sigma");
    gen->add_option("--seed", gen_cfg.seed, "generation seed");
    gen->add_flag("--identity-distortion", gen_cfg.identity_distortion, "skip the per-modality linear distortion");
    gen->add_option("--out", gen_out, "output dataset path")->required();

    auto* train_cmd = app.add_subcommand("train", "run one training phase");
    TrainCliOptions topt;
    train_cmd->add_option("--data", topt.data_path, "dataset path")->required();
    train_cmd->add_option("--out", topt.out_dir, "output directory")->required();
    train_cmd->add_option("--phase", topt.phase, "warmstart|full")->check(CLI::IsMember({"warmstart", "full"}));
    train_cmd->add_option("--warmstart-ckpt", topt.warmstart_ckpt, "checkpoint to warm start from");
    train_cmd->add_flag("--no-warmstart", topt.no_warmstart, "allow a cold start of the full phase");
    train_cmd->add_option("--config", topt.config_file, "key = value config file");
    train_cmd->add_option("--alpha", topt.alpha, "code matching weight");
    train_cmd->add_option("--margin", topt.margin, "positive-pair margin");
    train_cmd->add_option("--lr", topt.lr, "learning rate");
    train_cmd->add_option("--batch", topt.batch, "batch size");
    train_cmd->add_option("--epochs", topt.epochs, "epoch count");
    train_cmd->add_option("--codebook-size", topt.codebook_size, "codeword count");
    train_cmd->add_option("--code-dim", topt.code_dim, "shared space dimension");
    train_cmd->add_option("--hidden-dim", topt.hidden_dim, "fine-grained dimension");
    train_cmd->add_option("--embed-dim", topt.embed_dim, "summary dimension");
    train_cmd->add_option("--fine-depth", topt.fine_depth, "fine encoder depth (1 or 2)");
    train_cmd->add_option("--decay", topt.decay, "codebook EMA decay");
    train_cmd->add_option("--reset-patience", topt.reset_patience, "dead-code reset patience");
    train_cmd->add_option("--grid-a", topt.grid_a, "modality A grid, e.g. 3x3");
    train_cmd->add_option("--grid-b", topt.grid_b, "modality B grid, e.g. 6");
    train_cmd->add_option("--seed", topt.seed, "training seed");
    train_cmd->add_flag("--no-continuous", topt.no_continuous, "drop the continuous summary path");
    train_cmd->add_flag("--symmetric", topt.symmetric, "anchor the losses on both modalities");
    train_cmd->add_flag("--freeze-baseline", topt.freeze_baseline, "freeze fine/summary nets in the full phase");

    auto* eval_cmd = app.add_subcommand("eval", "cross-modal retrieval metrics on a dataset");
    std::string eval_data, eval_ckpt, eval_out;
    eval_cmd->add_option("--data", eval_data, "dataset path")->required();
    eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
    eval_cmd->add_option("--out", eval_out, "output directory")->required();

    auto* analyze_cmd = app.add_subcommand("analyze", "codeword usage analysis");
    std::string an_data, an_ckpt, an_out;
    double an_threshold = 0.9;
    analyze_cmd->add_option("--data", an_data, "dataset path")->required();
    analyze_cmd->add_option("--ckpt", an_ckpt, "checkpoint path")->required();
    analyze_cmd->add_option("--out", an_out, "output directory")->required();
    analyze_cmd->add_option("--partition-threshold", an_threshold, "single-modality dominance threshold");

    auto* loc_cmd = app.add_subcommand("localize", "positions of one instance assigned to a codeword");
    std::string loc_data, loc_ckpt, loc_out;
    std::int64_t loc_instance = 0;
    int loc_code = 0;
    loc_cmd->add_option("--data", loc_data, "dataset path")->required();
    loc_cmd->add_option("--ckpt", loc_ckpt, "checkpoint path")->required();
    loc_cmd->add_option("--instance", loc_instance, "instance id")->required();
    loc_cmd->add_option("--code", loc_code, "codeword index")->required();
    loc_cmd->add_option("--out", loc_out, "output JSON path")->required();

    auto* gc_cmd = app.add_subcommand("grad-check", "audit analytic gradients against finite differences");
    std::uint64_t gc_seed = 1;
    double gc_step = 1e-5, gc_threshold = 1e-4;
    gc_cmd->add_option("--seed", gc_seed, "randomization seed");
    gc_cmd->add_option("--step", gc_step, "central difference step");
    gc_cmd->add_option("--threshold", gc_threshold, "maximum tolerated relative error");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (gen->parsed()) return run_gen_data(gen_cfg, gen_out);
        if (train_cmd->parsed()) return run_train(topt);
        if (eval_cmd->parsed()) return run_eval(eval_data, eval_ckpt, eval_out);
        if (analyze_cmd->parsed()) return run_analyze(an_data, an_ckpt, an_out, an_threshold);
        if (loc_cmd->parsed()) return run_localize(loc_data, loc_ckpt, loc_instance, loc_code, loc_out);
        if (gc_cmd->parsed()) return run_grad_check(gc_seed, gc_step, gc_threshold);
    } catch (const cmx::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    } catch (const cmx::NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return kExitNumeric;
    } catch (const cmx::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitData;
    }
    return kExitUsage;
}
