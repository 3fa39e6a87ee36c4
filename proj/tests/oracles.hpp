#pragma once

// Naive reference implementations used as independent oracles. Everything
// here is written as literal loops over plain buffers, on purpose: these
// must not share code with the library paths they check.

#include <cmath>
#include <map>
#include <random>
#include <vector>

#include "cmx/matrix.hpp"

namespace oracle {

inline cmx::Matrix matmul(const cmx::Matrix& a, const cmx::Matrix& b) {
    cmx::Matrix out(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < b.cols; ++j) {
            double s = 0.0;
            for (int k = 0; k < a.cols; ++k) s += a.at(i, k) * b.at(k, j);
            out.at(i, j) = s;
        }
    return out;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double euclidean(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

inline std::vector<double> row_of(const cmx::Matrix& m, int r) {
    return {m.data.begin() + static_cast<std::ptrdiff_t>(r) * m.cols,
            m.data.begin() + static_cast<std::ptrdiff_t>(r + 1) * m.cols};
}

// Exhaustive nearest-codeword scan, lowest index wins ties.
inline int nearest(const cmx::Matrix& codewords, const std::vector<double>& h) {
    int best = 0;
    double best_d = euclidean(row_of(codewords, 0), h);
    for (int v = 1; v < codewords.rows; ++v) {
        const double d = euclidean(row_of(codewords, v), h);
        if (d < best_d) {
            best_d = d;
            best = v;
        }
    }
    return best;
}

// Softmin probabilities of one vector against every codeword, evaluated
// exactly as written: exp of negative distance over the sum of them.
inline std::vector<double> softmin_probs(const cmx::Matrix& codewords, const std::vector<double>& h) {
    std::vector<double> p(static_cast<std::size_t>(codewords.rows));
    double denom = 0.0;
    for (int v = 0; v < codewords.rows; ++v) {
        p[static_cast<std::size_t>(v)] = std::exp(-euclidean(row_of(codewords, v), h));
        denom += p[static_cast<std::size_t>(v)];
    }
    for (auto& x : p) x /= denom;
    return p;
}

// Sequence-level distribution: the average of the per-position softmins.
inline std::vector<double> sequence_dist(const cmx::Matrix& codewords, const cmx::Matrix& h_rows) {
    std::vector<double> avg(static_cast<std::size_t>(codewords.rows), 0.0);
    for (int l = 0; l < h_rows.rows; ++l) {
        const auto p = softmin_probs(codewords, row_of(h_rows, l));
        for (std::size_t v = 0; v < p.size(); ++v) avg[v] += p[v];
    }
    for (auto& x : avg) x /= h_rows.rows;
    return avg;
}

// Negative symmetric cross entropy, plain double sums.
inline double code_similarity(const std::vector<double>& p, const std::vector<double>& q) {
    double s = 0.0;
    for (std::size_t v = 0; v < p.size(); ++v) s += p[v] * std::log(q[v]);
    for (std::size_t v = 0; v < p.size(); ++v) s += q[v] * std::log(p[v]);
    return s;
}

// Margin softmax over a precomputed score matrix, written exactly as the
// ratio of exponentials.
inline double mms_from_scores(const cmx::Matrix& scores, double margin) {
    const int n = scores.rows;
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        const double pos = std::exp(scores.at(i, i) - margin);
        double denom = pos;
        for (int j = 0; j < n; ++j)
            if (j != i) denom += std::exp(scores.at(i, j));
        loss += -std::log(pos / denom);
    }
    return loss / n;
}

inline double mms(const cmx::Matrix& z_a, const cmx::Matrix& z_b, double margin) {
    cmx::Matrix scores(z_a.rows, z_a.rows);
    for (int i = 0; i < z_a.rows; ++i)
        for (int j = 0; j < z_b.rows; ++j) scores.at(i, j) = dot(row_of(z_a, i), row_of(z_b, j));
    return mms_from_scores(scores, margin);
}

// Full code-matching loss recomputed from raw projected rows and the
// codebook: per-position softmins, sequence averages, pairwise symmetric
// cross entropies, then the contrastive ratio.
inline double cmcm(const cmx::Matrix& codewords, const std::vector<cmx::Matrix>& proj_a,
                   const std::vector<cmx::Matrix>& proj_b) {
    const std::size_t n = proj_a.size();
    std::vector<std::vector<double>> dist_a(n), dist_b(n);
    for (std::size_t i = 0; i < n; ++i) {
        dist_a[i] = sequence_dist(codewords, proj_a[i]);
        dist_b[i] = sequence_dist(codewords, proj_b[i]);
    }
    cmx::Matrix scores(static_cast<int>(n), static_cast<int>(n));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            scores.at(static_cast<int>(i), static_cast<int>(j)) = code_similarity(dist_a[i], dist_b[j]);
    return mms_from_scores(scores, 0.0);
}

// Retrieval rank per query via a full sort of (score, index) pairs.
inline std::vector<int> ranks(const cmx::Matrix& queries, const cmx::Matrix& candidates) {
    std::vector<int> out(static_cast<std::size_t>(queries.rows));
    for (int i = 0; i < queries.rows; ++i) {
        std::vector<std::pair<double, int>> scored;
        for (int j = 0; j < candidates.rows; ++j) scored.emplace_back(dot(row_of(queries, i), row_of(candidates, j)), j);
        std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        for (std::size_t pos = 0; pos < scored.size(); ++pos)
            if (scored[pos].second == i) out[static_cast<std::size_t>(i)] = static_cast<int>(pos) + 1;
    }
    return out;
}

// Per-codeword counting with hash maps, independent of the array-based
// accumulators in the library.
struct CountingOracle {
    std::map<int, std::int64_t> occurrence;
    std::map<int, std::map<int, std::int64_t>> label_counts;

    void add(int code, int label) {
        ++occurrence[code];
        ++label_counts[code][label];
    }
    double conditional(int code, int label) const {
        const auto it = label_counts.find(code);
        if (it == label_counts.end()) return 0.0;
        const auto jt = it->second.find(label);
        if (jt == it->second.end()) return 0.0;
        return static_cast<double>(jt->second) / static_cast<double>(occurrence.at(code));
    }
};

inline cmx::Matrix random_matrix(int rows, int cols, std::mt19937_64& rng, double scale = 1.0) {
    cmx::Matrix m(rows, cols);
    std::normal_distribution<double> dist(0.0, scale);
    for (auto& x : m.data) x = dist(rng);
    return m;
}

// Random point on the probability simplex.
inline std::vector<double> random_distribution(int n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.05, 1.0);
    std::vector<double> p(static_cast<std::size_t>(n));
    double s = 0.0;
    for (auto& x : p) {
        x = u(rng);
        s += x;
    }
    for (auto& x : p) x /= s;
    return p;
}

}  // namespace oracle
