#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cmx/matrix.hpp"

namespace cmx {

// Latent concept shared by both modalities of an instance. Prototypes are
// drawn once per dataset seed; the token is the word-like analysis label.
struct Concept {
    int id = 0;
    std::vector<double> prototype_a;
    std::vector<double> prototype_b;
    std::string token;

    bool operator==(const Concept&) const = default;
};

// One cross-modal pair: two variable-length feature sequences realizing the
// same concept multiset, with per-position ground-truth concept ids.
struct PairedInstance {
    std::int64_t id = 0;
    Matrix seq_a;                 // L_A x d_in
    Matrix seq_b;                 // L_B x d_in
    std::vector<int> labels_a;    // per-position concept id, length L_A
    std::vector<int> labels_b;    // length L_B
    int instance_label = 0;       // dominant concept id

    bool operator==(const PairedInstance&) const = default;
};

struct GenerateConfig {
    int concepts = 8;
    int instances = 2000;
    int len_a = 9;
    int len_b = 6;
    int feat_dim = 12;
    double noise_sigma = 0.1;
    std::uint64_t seed = 1;
    bool identity_distortion = false;

    bool operator==(const GenerateConfig&) const = default;
};

struct PairedDataset {
    GenerateConfig config;
    std::vector<Concept> concepts;
    std::vector<PairedInstance> instances;

    bool operator==(const PairedDataset&) const = default;
};

// Synthesizes paired sequences. Each instance samples a concept multiset of
// one to three concepts with a single dominant concept, plus an
// instance-specific latent vector shared by both modalities; a position with
// concept c emits
//     D_M * (prototype_M[c] + u_i) + eta
// where D_M is a fixed per-modality linear distortion, u_i ~ N(0, sigma^2) is
// the shared instance vector and eta ~ N(0, (sigma/4)^2) is per-position
// jitter. Features are rounded to f32 so the binary container round-trips
// exactly.
PairedDataset generate(const GenerateConfig& config);

// Class centers actually emitted for a concept in one modality (the
// distorted prototypes); nearest-center classification of noiseless features
// recovers every per-position label.
Matrix emission_centers(const PairedDataset& ds, char modality);

// Binary container, magic "CMDS". Round trips are byte-exact.
std::vector<std::uint8_t> serialize(const PairedDataset& ds);
PairedDataset deserialize(const std::vector<std::uint8_t>& bytes);
void save(const PairedDataset& ds, const std::string& path);
PairedDataset load(const std::string& path);

// Seeded shuffled batches for one epoch; the final short batch is dropped so
// the in-batch negative count stays fixed.
std::vector<std::vector<int>> batches(const PairedDataset& ds, int batch_size, std::uint64_t seed, int epoch);

// Stacks the chosen instances' rows for one modality into a single
// (n * L) x d_in matrix in batch order.
Matrix stack_features(const PairedDataset& ds, const std::vector<int>& indices, char modality);

}  // namespace cmx
