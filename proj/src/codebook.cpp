#include "cmx/codebook.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cmx {

namespace {
constexpr double kVarianceEpsilon = 1e-12;
constexpr double kStatsMomentum = 0.99;
}  // namespace

Codebook init_codebook(int size, int dim, double decay, int reset_patience, std::uint64_t seed) {
    if (size < 2) throw ConfigError("codebook: size must be >= 2");
    if (dim < 1) throw ConfigError("codebook: dim must be >= 1");
    if (decay <= 0.0 || decay >= 1.0) throw ConfigError("codebook: decay must be in (0, 1)");
    if (reset_patience < 1) throw ConfigError("codebook: reset_patience must be >= 1");

    Codebook cb;
    cb.size = size;
    cb.dim = dim;
    cb.decay = decay;
    cb.reset_patience = reset_patience;
    std::mt19937_64 rng(seed);
    cb.ema_sum = random_normal(size, dim, rng);
    cb.codewords = cb.ema_sum;
    cb.ema_count.assign(static_cast<std::size_t>(size), 1.0);
    cb.inactive_steps.assign(static_cast<std::size_t>(size), 0);
    return cb;
}

Tensor normalize(Graph& g, Tensor h, ModalityNormStats& stats, NormMode mode) {
    const int dim = h.cols();
    if (static_cast<int>(stats.mean.size()) != dim)
        throw DimensionError("normalize: stats dimension " + std::to_string(stats.mean.size()) +
                             " does not match batch dimension " + std::to_string(dim));

    if (mode == NormMode::kEval) {
        std::vector<double> inv_std(static_cast<std::size_t>(dim));
        for (int j = 0; j < dim; ++j) inv_std[j] = 1.0 / std::sqrt(stats.variance[j] + kVarianceEpsilon);
        Tensor mean_c = g.constant(1, dim, std::vector<double>(stats.mean));
        Tensor inv_c = g.constant(1, dim, std::move(inv_std));
        return g.mul_rowvec(g.sub_rowvec(h, mean_c), inv_c);
    }

    // Train mode: batch statistics, differentiable end to end.
    Tensor mean = g.mean_rows(h);
    Tensor centered = g.sub_rowvec(h, mean);
    Tensor var = g.mean_rows(g.mul(centered, centered));
    Tensor std_dev = g.sqrt(g.add_scalar(var, kVarianceEpsilon));
    Tensor out = g.div_rowvec(centered, std_dev);

    const auto& batch_mean = mean.values();
    const auto& batch_var = var.values();
    const double rows = h.rows();
    for (int j = 0; j < dim; ++j) {
        stats.mean[j] = kStatsMomentum * stats.mean[j] + (1.0 - kStatsMomentum) * batch_mean[j];
        stats.variance[j] = kStatsMomentum * stats.variance[j] + (1.0 - kStatsMomentum) * batch_var[j];
    }
    stats.sample_count += rows;
    return out;
}

int nearest_codeword(const Codebook& cb, std::span<const double> row) {
    if (static_cast<int>(row.size()) != cb.dim) throw DimensionError("nearest_codeword: vector dimension mismatch");
    int best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (int v = 0; v < cb.size; ++v) {
        const auto cw = cb.codewords.row(v);
        double d2 = 0.0;
        for (int k = 0; k < cb.dim; ++k) {
            const double diff = row[k] - cw[k];
            d2 += diff * diff;
        }
        if (d2 < best_dist) {
            best_dist = d2;
            best = v;
        }
    }
    return best;
}

QuantizeResult quantize(Graph& g, Tensor projected, const Codebook& cb) {
    if (projected.cols() != cb.dim)
        throw DimensionError("quantize: batch dimension " + std::to_string(projected.cols()) +
                             " does not match codebook dimension " + std::to_string(cb.dim));
    const int rows = projected.rows();
    QuantizeResult result;
    result.assignments.resize(static_cast<std::size_t>(rows));
    Matrix selected(rows, cb.dim);
    const auto& values = projected.values();
    for (int r = 0; r < rows; ++r) {
        std::span<const double> row(values.data() + static_cast<std::size_t>(r) * cb.dim,
                                    static_cast<std::size_t>(cb.dim));
        const int v = nearest_codeword(cb, row);
        result.assignments[static_cast<std::size_t>(r)] = v;
        std::copy_n(cb.codewords.row(v).data(), cb.dim, selected.row(r).data());
    }
    // h_bar = h + sg(e_v - h): forward equals the codeword, backward is identity.
    Tensor codeword_rows = g.constant(selected);
    result.quantized = g.add(projected, g.stop_gradient(g.sub(codeword_rows, projected)));
    return result;
}

Tensor code_probabilities(Graph& g, Tensor projected, const Codebook& cb) {
    if (projected.cols() != cb.dim) throw DimensionError("code_probabilities: dimension mismatch");
    Tensor codewords = g.constant(cb.codewords);
    return g.softmax_rows(g.neg_l2_rows(projected, codewords));
}

Tensor sequence_distribution(Graph& g, Tensor projected, const Codebook& cb, int block) {
    if (projected.rows() == 0 || block == 0) throw DataError("sequence_distribution: empty sequence");
    return g.block_mean_rows(code_probabilities(g, projected, cb), block);
}

namespace {

void ema_step(Codebook& cb, const std::vector<double>& counts, const Matrix& sums) {
    const double gamma = cb.decay;
    for (int v = 0; v < cb.size; ++v) {
        cb.ema_count[static_cast<std::size_t>(v)] =
            gamma * cb.ema_count[static_cast<std::size_t>(v)] + (1.0 - gamma) * counts[static_cast<std::size_t>(v)];
        auto m = cb.ema_sum.row(v);
        const auto s = sums.row(v);
        auto e = cb.codewords.row(v);
        const double count = cb.ema_count[static_cast<std::size_t>(v)];
        for (int k = 0; k < cb.dim; ++k) {
            m[k] = gamma * m[k] + (1.0 - gamma) * s[k];
            e[k] = m[k] / count;  // keeps e == m / N exact, not via a reciprocal
        }
        if (counts[static_cast<std::size_t>(v)] > 0.0) {
            cb.inactive_steps[static_cast<std::size_t>(v)] = 0;
        } else {
            ++cb.inactive_steps[static_cast<std::size_t>(v)];
        }
    }
}

}  // namespace

void ema_update(Codebook& cb, const std::vector<std::vector<std::vector<double>>>& assigned) {
    if (static_cast<int>(assigned.size()) != cb.size)
        throw DimensionError("ema_update: assignment map size does not match codebook");
    std::vector<double> counts(static_cast<std::size_t>(cb.size), 0.0);
    Matrix sums(cb.size, cb.dim);
    for (int v = 0; v < cb.size; ++v) {
        for (const auto& vec : assigned[static_cast<std::size_t>(v)]) {
            if (static_cast<int>(vec.size()) != cb.dim)
                throw DimensionError("ema_update: assigned vector dimension " + std::to_string(vec.size()) +
                                     " does not match codebook dimension " + std::to_string(cb.dim));
            counts[static_cast<std::size_t>(v)] += 1.0;
            auto s = sums.row(v);
            for (int k = 0; k < cb.dim; ++k) s[k] += vec[static_cast<std::size_t>(k)];
        }
    }
    ema_step(cb, counts, sums);
}

void ema_update(Codebook& cb, const Matrix& vectors, const std::vector<int>& assignments) {
    if (vectors.cols != cb.dim) throw DimensionError("ema_update: vector dimension mismatch");
    if (vectors.rows != static_cast<int>(assignments.size()))
        throw DimensionError("ema_update: assignment count does not match vector count");
    std::vector<double> counts(static_cast<std::size_t>(cb.size), 0.0);
    Matrix sums(cb.size, cb.dim);
    for (int r = 0; r < vectors.rows; ++r) {
        const int v = assignments[static_cast<std::size_t>(r)];
        if (v < 0 || v >= cb.size) throw DimensionError("ema_update: assignment index out of range");
        counts[static_cast<std::size_t>(v)] += 1.0;
        auto s = sums.row(v);
        const auto x = vectors.row(r);
        for (int k = 0; k < cb.dim; ++k) s[k] += x[k];
    }
    ema_step(cb, counts, sums);
}

ResetResult reset_dead(Codebook& cb, std::mt19937_64& rng) {
    ResetResult result;
    std::vector<int> activated;
    std::vector<int> due;
    for (int v = 0; v < cb.size; ++v) {
        if (cb.inactive_steps[static_cast<std::size_t>(v)] == 0) activated.push_back(v);
        if (cb.inactive_steps[static_cast<std::size_t>(v)] >= cb.reset_patience) due.push_back(v);
    }
    if (due.empty()) return result;
    if (activated.empty()) {
        result.starved_without_donor = true;
        return result;
    }
    std::uniform_int_distribution<std::size_t> pick(0, activated.size() - 1);
    for (int v : due) {
        const int donor = activated[pick(rng)];
        // Adopt the donor's position with a fresh unit count, so the fixed
        // relation e == m / N keeps holding.
        std::copy_n(cb.codewords.row(donor).data(), cb.dim, cb.codewords.row(v).data());
        std::copy_n(cb.codewords.row(donor).data(), cb.dim, cb.ema_sum.row(v).data());
        cb.ema_count[static_cast<std::size_t>(v)] = 1.0;
        cb.inactive_steps[static_cast<std::size_t>(v)] = 0;
        result.reset_indices.push_back(v);
    }
    return result;
}

std::vector<std::vector<int>> CodeAssignment::coordinates() const {
    std::vector<std::vector<int>> coords;
    coords.reserve(codes.size());
    for (std::size_t pos = 0; pos < codes.size(); ++pos) {
        std::vector<int> c(grid.size());
        int rem = static_cast<int>(pos);
        for (int axis = static_cast<int>(grid.size()) - 1; axis >= 0; --axis) {
            c[static_cast<std::size_t>(axis)] = rem % grid[static_cast<std::size_t>(axis)];
            rem /= grid[static_cast<std::size_t>(axis)];
        }
        coords.push_back(std::move(c));
    }
    return coords;
}

}  // namespace cmx
