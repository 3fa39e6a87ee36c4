#include "cmx/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "cmx/binio.hpp"
#include "cmx/errors.hpp"

namespace cmx {

namespace {

constexpr char kMagic[4] = {'C', 'M', 'D', 'S'};
constexpr std::uint16_t kVersion = 1;

double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

Matrix modality_distortion(int dim, bool identity, std::mt19937_64& rng) {
    Matrix d(dim, dim);
    for (int i = 0; i < dim; ++i) d.at(i, i) = 1.0;
    if (!identity) {
        std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
        for (auto& x : d.data) x += 0.25 * gauss(rng);
    }
    return d;
}

// Position labels for one modality: the dominant concept fills every slot not
// taken by the single occurrence of each minor concept, then the layout is
// shuffled.
std::vector<int> position_labels(const std::vector<int>& multiset, int length, std::mt19937_64& rng) {
    std::vector<int> labels(static_cast<std::size_t>(length), multiset.front());
    for (std::size_t k = 1; k < multiset.size(); ++k) labels[k] = multiset[k];
    std::shuffle(labels.begin(), labels.end(), rng);
    return labels;
}

Matrix emit_sequence(const std::vector<int>& labels, const Matrix& distortion, const std::vector<Concept>& concepts,
                     char modality, const std::vector<double>& instance_vec, double jitter_sigma,
                     std::mt19937_64& rng) {
    const int dim = distortion.rows;
    Matrix seq(static_cast<int>(labels.size()), dim);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t pos = 0; pos < labels.size(); ++pos) {
        const auto& proto = modality == 'A' ? concepts[static_cast<std::size_t>(labels[pos])].prototype_a
                                            : concepts[static_cast<std::size_t>(labels[pos])].prototype_b;
        std::vector<double> latent(static_cast<std::size_t>(dim));
        for (int k = 0; k < dim; ++k) latent[static_cast<std::size_t>(k)] = proto[static_cast<std::size_t>(k)] + instance_vec[static_cast<std::size_t>(k)];
        auto row = seq.row(static_cast<int>(pos));
        for (int i = 0; i < dim; ++i) {
            double v = 0.0;
            for (int k = 0; k < dim; ++k) v += distortion.at(i, k) * latent[static_cast<std::size_t>(k)];
            if (jitter_sigma > 0.0) v += jitter_sigma * gauss(rng);
            row[i] = to_f32(v);
        }
    }
    return seq;
}

}  // namespace

PairedDataset generate(const GenerateConfig& config) {
    if (config.concepts < 2) throw ConfigError("generate: need at least 2 concepts");
    if (config.instances < 2) throw ConfigError("generate: need at least 2 instances");
    if (config.len_a < 1 || config.len_b < 1) throw ConfigError("generate: sequence lengths must be positive");
    if (config.feat_dim < 1) throw ConfigError("generate: feature dimension must be positive");
    if (config.noise_sigma < 0.0) throw ConfigError("generate: noise sigma must be non-negative");

    std::mt19937_64 rng(config.seed);
    PairedDataset ds;
    ds.config = config;

    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int c = 0; c < config.concepts; ++c) {
        Concept cpt;
        cpt.id = c;
        cpt.token = "tok" + std::string(c < 10 ? "0" : "") + std::to_string(c);
        cpt.prototype_a.resize(static_cast<std::size_t>(config.feat_dim));
        cpt.prototype_b.resize(static_cast<std::size_t>(config.feat_dim));
        for (auto& x : cpt.prototype_a) x = to_f32(gauss(rng));
        for (auto& x : cpt.prototype_b) x = to_f32(gauss(rng));
        ds.concepts.push_back(std::move(cpt));
    }

    const Matrix distortion_a = modality_distortion(config.feat_dim, config.identity_distortion, rng);
    const Matrix distortion_b = modality_distortion(config.feat_dim, config.identity_distortion, rng);

    // Multiset size capped so the dominant concept is always the unique mode
    // in both modalities.
    const int max_minor = std::min({2, config.concepts - 1, config.len_a - 2, config.len_b - 2});
    std::uniform_int_distribution<int> multiset_extra(0, std::max(0, max_minor));
    std::uniform_int_distribution<int> concept_pick(0, config.concepts - 1);

    const double jitter = config.noise_sigma / 4.0;
    for (int i = 0; i < config.instances; ++i) {
        PairedInstance inst;
        inst.id = i;

        std::vector<int> multiset;
        multiset.push_back(concept_pick(rng));
        const int extras = multiset_extra(rng);
        while (static_cast<int>(multiset.size()) < 1 + extras) {
            const int c = concept_pick(rng);
            if (std::find(multiset.begin(), multiset.end(), c) == multiset.end()) multiset.push_back(c);
        }
        inst.instance_label = multiset.front();

        std::vector<double> instance_vec(static_cast<std::size_t>(config.feat_dim), 0.0);
        for (auto& x : instance_vec) x = config.noise_sigma * gauss(rng);

        inst.labels_a = position_labels(multiset, config.len_a, rng);
        inst.labels_b = position_labels(multiset, config.len_b, rng);
        inst.seq_a = emit_sequence(inst.labels_a, distortion_a, ds.concepts, 'A', instance_vec, jitter, rng);
        inst.seq_b = emit_sequence(inst.labels_b, distortion_b, ds.concepts, 'B', instance_vec, jitter, rng);

        // Pairing correctness: both modalities realize the same concept set.
        const std::set<int> set_a(inst.labels_a.begin(), inst.labels_a.end());
        const std::set<int> set_b(inst.labels_b.begin(), inst.labels_b.end());
        if (set_a != set_b || set_a != std::set<int>(multiset.begin(), multiset.end()))
            throw DataError("generate: modality concept sets diverged for instance " + std::to_string(i));

        ds.instances.push_back(std::move(inst));
    }
    return ds;
}

Matrix emission_centers(const PairedDataset& ds, char modality) {
    const int dim = ds.config.feat_dim;
    std::mt19937_64 rng(ds.config.seed);
    // Re-derive the distortions by replaying the seeded draws that produced
    // them (prototypes first, in generation order).
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int c = 0; c < ds.config.concepts; ++c)
        for (int k = 0; k < 2 * dim; ++k) gauss(rng);
    const Matrix distortion_a = modality_distortion(dim, ds.config.identity_distortion, rng);
    const Matrix distortion_b = modality_distortion(dim, ds.config.identity_distortion, rng);
    const Matrix& distortion = modality == 'A' ? distortion_a : distortion_b;

    Matrix centers(ds.config.concepts, dim);
    for (int c = 0; c < ds.config.concepts; ++c) {
        const auto& proto = modality == 'A' ? ds.concepts[static_cast<std::size_t>(c)].prototype_a
                                            : ds.concepts[static_cast<std::size_t>(c)].prototype_b;
        auto row = centers.row(c);
        for (int i = 0; i < dim; ++i) {
            double v = 0.0;
            for (int k = 0; k < dim; ++k) v += distortion.at(i, k) * proto[static_cast<std::size_t>(k)];
            row[i] = to_f32(v);
        }
    }
    return centers;
}

std::vector<std::uint8_t> serialize(const PairedDataset& ds) {
    ByteWriter w;
    w.raw(kMagic, 4);
    w.u16(kVersion);
    w.u16(static_cast<std::uint16_t>(ds.config.concepts));
    w.u16(static_cast<std::uint16_t>(ds.config.feat_dim));
    w.u16(static_cast<std::uint16_t>(ds.config.len_a));
    w.u16(static_cast<std::uint16_t>(ds.config.len_b));
    w.u64(static_cast<std::uint64_t>(ds.instances.size()));
    w.u64(ds.config.seed);
    w.f64(ds.config.noise_sigma);
    w.u8(ds.config.identity_distortion ? 1 : 0);

    for (const auto& cpt : ds.concepts) {
        w.str(cpt.token);
        for (double v : cpt.prototype_a) w.f32(static_cast<float>(v));
        for (double v : cpt.prototype_b) w.f32(static_cast<float>(v));
    }

    auto write_record = [&w](std::int64_t id, const Matrix& seq, const std::vector<int>& labels, int instance_label) {
        w.u64(static_cast<std::uint64_t>(id));
        w.u16(static_cast<std::uint16_t>(seq.rows));
        w.u16(static_cast<std::uint16_t>(seq.cols));
        w.u16(static_cast<std::uint16_t>(instance_label));
        for (double v : seq.data) w.f32(static_cast<float>(v));
        for (int l : labels) w.u16(static_cast<std::uint16_t>(l));
    };
    for (const auto& inst : ds.instances) {
        write_record(inst.id, inst.seq_a, inst.labels_a, inst.instance_label);
        write_record(inst.id, inst.seq_b, inst.labels_b, inst.instance_label);
    }
    return w.bytes();
}

PairedDataset deserialize(const std::vector<std::uint8_t>& bytes) {
    ByteReader r(bytes);
    char magic[4];
    for (char& c : magic) c = static_cast<char>(r.u8());
    if (std::string(magic, 4) != std::string(kMagic, 4))
        throw FormatError("bad magic, expected CMDS", 0);
    const std::uint16_t version = r.u16();
    if (version != kVersion)
        throw FormatError("unsupported dataset version " + std::to_string(version), r.offset() - 2);

    PairedDataset ds;
    ds.config.concepts = r.u16();
    ds.config.feat_dim = r.u16();
    ds.config.len_a = r.u16();
    ds.config.len_b = r.u16();
    const std::uint64_t n = r.u64();
    ds.config.instances = static_cast<int>(n);
    ds.config.seed = r.u64();
    ds.config.noise_sigma = r.f64();
    ds.config.identity_distortion = r.u8() != 0;

    for (int c = 0; c < ds.config.concepts; ++c) {
        Concept cpt;
        cpt.id = c;
        cpt.token = r.str();
        cpt.prototype_a.resize(static_cast<std::size_t>(ds.config.feat_dim));
        cpt.prototype_b.resize(static_cast<std::size_t>(ds.config.feat_dim));
        for (auto& v : cpt.prototype_a) v = static_cast<double>(r.f32());
        for (auto& v : cpt.prototype_b) v = static_cast<double>(r.f32());
        ds.concepts.push_back(std::move(cpt));
    }

    auto read_record = [&r](std::int64_t& id, Matrix& seq, std::vector<int>& labels, int& instance_label) {
        id = static_cast<std::int64_t>(r.u64());
        const int rows = r.u16();
        const int cols = r.u16();
        instance_label = r.u16();
        seq = Matrix(rows, cols);
        for (auto& v : seq.data) v = static_cast<double>(r.f32());
        labels.resize(static_cast<std::size_t>(rows));
        for (auto& l : labels) l = r.u16();
    };
    for (std::uint64_t i = 0; i < n; ++i) {
        PairedInstance inst;
        std::int64_t id_b = 0;
        int label_b = 0;
        read_record(inst.id, inst.seq_a, inst.labels_a, inst.instance_label);
        read_record(id_b, inst.seq_b, inst.labels_b, label_b);
        if (id_b != inst.id || label_b != inst.instance_label)
            throw FormatError("paired records disagree for instance " + std::to_string(inst.id), r.offset());
        ds.instances.push_back(std::move(inst));
    }
    r.expect_exhausted();
    return ds;
}

void save(const PairedDataset& ds, const std::string& path) { write_file_bytes(path, serialize(ds)); }

PairedDataset load(const std::string& path) { return deserialize(read_file_bytes(path)); }

std::vector<std::vector<int>> batches(const PairedDataset& ds, int batch_size, std::uint64_t seed, int epoch) {
    const int n = static_cast<int>(ds.instances.size());
    if (batch_size < 2) throw ConfigError("batches: contrastive training needs batch_size >= 2");
    if (batch_size > n) throw ConfigError("batches: batch_size exceeds dataset size");

    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(epoch + 1)));
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<std::vector<int>> out;
    for (int start = 0; start + batch_size <= n; start += batch_size)
        out.emplace_back(order.begin() + start, order.begin() + start + batch_size);
    return out;
}

Matrix stack_features(const PairedDataset& ds, const std::vector<int>& indices, char modality) {
    if (indices.empty()) throw DataError("stack_features: empty index list");
    const Matrix& first = modality == 'A' ? ds.instances[static_cast<std::size_t>(indices[0])].seq_a
                                          : ds.instances[static_cast<std::size_t>(indices[0])].seq_b;
    const int len = first.rows;
    const int dim = first.cols;
    Matrix out(static_cast<int>(indices.size()) * len, dim);
    int row = 0;
    for (int idx : indices) {
        const auto& inst = ds.instances[static_cast<std::size_t>(idx)];
        const Matrix& seq = modality == 'A' ? inst.seq_a : inst.seq_b;
        if (seq.rows != len || seq.cols != dim) throw DimensionError("stack_features: ragged sequence lengths");
        std::copy(seq.data.begin(), seq.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(row) * dim);
        row += seq.rows;
    }
    return out;
}

}  // namespace cmx
