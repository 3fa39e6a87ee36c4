#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cmx/codebook.hpp"
#include "cmx/dataset.hpp"
#include "cmx/encoder.hpp"

namespace cmx {

enum class Phase { kWarmstart, kFull };

struct CodebookConfig {
    int size = 64;
    int dim = 16;
    double decay = 0.99;
    int reset_patience = 100;
};

struct TrainConfig {
    Phase phase = Phase::kWarmstart;
    double alpha = 0.1;            // weight of the code matching term
    double margin = 1e-3;          // positive-pair margin
    double learning_rate = 1e-3;   // warm-start default; the joint phase default is 1e-4
    int batch_size = 64;
    int epochs = 15;
    CodebookConfig codebook;
    EncoderConfig encoder_a;
    EncoderConfig encoder_b;
    bool use_continuous = true;
    bool symmetric_loss = false;           // also anchor on modality B and average
    bool allow_cold_start = false;         // permit the joint phase without a warm-start model
    bool freeze_baseline_encoders = false; // joint phase: update only the code-path nets
    bool cosine_lr = false;                // per-step cosine decay of the learning rate
    double grad_clip = 0.0;                // global gradient-norm cap per step, 0 = off
    std::uint64_t seed = 1;

    TrainConfig() {
        encoder_a.grid = {3, 3};
        encoder_b.grid = {6};
    }
    bool use_vq() const { return phase == Phase::kFull; }
};

// Everything the two-phase protocol learns: both encoder stacks, the shared
// codebook, and the per-modality normalization statistics.
struct Model {
    ModalityEncoder encoder_a;
    ModalityEncoder encoder_b;
    Codebook codebook;
    ModalityNormStats stats_a;
    ModalityNormStats stats_b;
    std::int64_t step = 0;
    bool vq_trained = false;      // the joint phase has shaped the codebook
    bool continuous_path = true;  // summaries include the continuous term

    static Model create(const TrainConfig& cfg);
    std::vector<Parameter*> parameters();
};

struct EpochStats {
    int epoch = 0;
    double mean_loss = 0.0;
    double mean_mms = 0.0;
    double mean_cmcm = 0.0;
    int active_codewords = 0;  // codewords activated at least once this epoch
};

struct TrainResult {
    Model model;
    std::vector<EpochStats> trace;
};

// Runs the configured phase over the dataset from step 0. The joint phase
// continues from `warmstart` weights (required unless allow_cold_start) with
// fresh optimizer state. Deterministic given the config seed; aborts with
// NumericError if the loss goes non-finite.
TrainResult train(const PairedDataset& ds, const TrainConfig& cfg, const Model* warmstart = nullptr);

// Continues an interrupted phase from the model's step counter; picking up a
// checkpoint mid-phase reproduces the uninterrupted trajectory bit-exactly.
TrainResult resume_training(const PairedDataset& ds, const TrainConfig& cfg, Model model);

// Adam update, beta1 = 0.9, beta2 = 0.999, eps = 1e-8, bias-corrected with
// the 1-based step count t.
void optimizer_step(Parameter& param, const std::vector<double>& grad, double learning_rate, std::int64_t t);

// Eval-mode embeddings for every instance: (Z_A, Z_B), one row per instance.
struct EncodedDataset {
    Matrix z_a;
    Matrix z_b;
    std::vector<CodeAssignment> assign_a;  // present when the model has a VQ phase behind it
    std::vector<CodeAssignment> assign_b;
};
EncodedDataset encode_dataset(Model& model, const PairedDataset& ds, bool use_vq, bool use_continuous = true);
// Paths chosen from the model's own flags.
EncodedDataset encode_dataset(Model& model, const PairedDataset& ds);

// Checkpoint container, magic "CMCK": name-indexed f64 tensors plus the step
// counter and a config-shape hash. save -> load -> save is byte identical.
std::uint64_t config_hash(const TrainConfig& cfg);
void save_checkpoint(const Model& model, std::uint64_t cfg_hash, const std::string& path);
struct LoadedCheckpoint {
    Model model;
    std::uint64_t cfg_hash = 0;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace cmx
