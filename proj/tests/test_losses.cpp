#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "cmx/codebook.hpp"
#include "cmx/grad_check.hpp"
#include "cmx/losses.hpp"
#include "oracles.hpp"

using cmx::Graph;
using cmx::Tensor;

TEST_SUITE_BEGIN("losses");

TEST_CASE("similarity: dot product basics and naive agreement") {
    CHECK(cmx::similarity(std::vector<double>{1.0, 0.0}, std::vector<double>{0.0, 1.0}) == 0.0);
    CHECK(cmx::similarity(std::vector<double>{1.0, 0.0}, std::vector<double>{1.0, 0.0}) == 1.0);
    CHECK_THROWS_AS(cmx::similarity(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}), cmx::DimensionError);

    std::mt19937_64 rng(4);
    const auto a = oracle::random_matrix(1, 8, rng);
    const auto b = oracle::random_matrix(1, 8, rng);
    CHECK(std::abs(cmx::similarity(a.data, b.data) - oracle::dot(a.data, b.data)) < 1e-14);
}

TEST_CASE("mms: single pair has no negatives and zero loss") {
    Graph g;
    Tensor z = g.input(1, 4, {1.0, -2.0, 0.5, 3.0}, false);
    Tensor loss = cmx::mms_loss(g, z, z, 1e-3);
    CHECK(loss.scalar() == 0.0);
}

TEST_CASE("mms: two-pair diagonal similarity matrix, zero margin") {
    const double s = std::sqrt(2.0);
    Graph g;
    Tensor z_a = g.input(2, 2, {s, 0.0, 0.0, s}, false);
    Tensor z_b = g.input(2, 2, {s, 0.0, 0.0, s}, false);
    Tensor loss = cmx::mms_loss(g, z_a, z_b, 0.0);
    const double e2 = std::exp(2.0);
    const double expected = -std::log(e2 / (e2 + 1.0));
    CHECK(std::abs(loss.scalar() - expected) < 1e-9);
    CHECK(std::abs(loss.scalar() - 0.12693) < 1e-5);
}

TEST_CASE("mms: matches the naive oracle on random batches") {
    for (int seed = 0; seed < 100; ++seed) {
        std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
        const int n = 2 + seed % 5;
        const auto z_a = oracle::random_matrix(n, 6, rng);
        const auto z_b = oracle::random_matrix(n, 6, rng);
        Graph g;
        Tensor loss = cmx::mms_loss(g, g.input(z_a, false), g.input(z_b, false), 1e-3);
        CHECK(std::abs(loss.scalar() - oracle::mms(z_a, z_b, 1e-3)) < 1e-10);
        CHECK(loss.scalar() >= 0.0);
    }
}

TEST_CASE("code_similarity: uniform distributions hit the entropy bound") {
    const std::vector<double> u(4, 0.25);
    CHECK(std::abs(cmx::code_similarity(u, u) - 2.0 * std::log(0.25)) < 1e-12);
    CHECK(std::abs(cmx::code_similarity(u, u) + 2.77259) < 1e-5);
}

TEST_CASE("code_similarity: symmetric and equal to the naive double sum") {
    for (int seed = 0; seed < 100; ++seed) {
        std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
        const auto p = oracle::random_distribution(16, rng);
        const auto q = oracle::random_distribution(16, rng);
        CHECK(cmx::code_similarity(p, q) == doctest::Approx(cmx::code_similarity(q, p)).epsilon(1e-12));
        CHECK(std::abs(cmx::code_similarity(p, q) - oracle::code_similarity(p, q)) < 1e-12);
    }
}

TEST_CASE("code_similarity: Gibbs bound with equality only at p == q") {
    for (int seed = 0; seed < 100; ++seed) {
        std::mt19937_64 rng(static_cast<std::uint64_t>(seed) + 7);
        const auto p = oracle::random_distribution(8, rng);
        const auto q = oracle::random_distribution(8, rng);
        double bound = 0.0;  // -(H(p) + H(q))
        for (int v = 0; v < 8; ++v)
            bound += p[static_cast<std::size_t>(v)] * std::log(p[static_cast<std::size_t>(v)]) +
                     q[static_cast<std::size_t>(v)] * std::log(q[static_cast<std::size_t>(v)]);
        CHECK(cmx::code_similarity(p, q) <= bound + 1e-12);

        double self_bound = 0.0;
        for (double pv : p) self_bound += 2.0 * pv * std::log(pv);
        CHECK(cmx::code_similarity(p, p) == doctest::Approx(self_bound).epsilon(1e-12));
    }
}

TEST_CASE("cmcm: identical distributions across the batch give log N") {
    std::mt19937_64 rng(12);
    const auto p = oracle::random_distribution(8, rng);
    cmx::Matrix bank(2, 8);
    std::copy(p.begin(), p.end(), bank.row(0).data());
    std::copy(p.begin(), p.end(), bank.row(1).data());
    Graph g;
    Tensor loss = cmx::cmcm_loss(g, g.input(bank, false), g.input(bank, false));
    CHECK(std::abs(loss.scalar() - std::log(2.0)) < 1e-10);
    CHECK(std::abs(loss.scalar() - 0.69315) < 1e-5);
}

TEST_CASE("cmcm: single pair is zero") {
    std::mt19937_64 rng(13);
    const auto p = oracle::random_distribution(8, rng);
    Graph g;
    Tensor loss = cmx::cmcm_loss(g, g.input(1, 8, p, false), g.input(1, 8, p, false));
    CHECK(loss.scalar() == 0.0);
}

TEST_CASE("cmcm: matches the independent pipeline oracle on a 3-pair batch") {
    std::mt19937_64 rng(31);
    cmx::Codebook cb = cmx::init_codebook(16, 4, 0.99, 100, 31);
    std::vector<cmx::Matrix> proj_a, proj_b;
    for (int i = 0; i < 3; ++i) {
        proj_a.push_back(oracle::random_matrix(5, 4, rng));
        proj_b.push_back(oracle::random_matrix(4, 4, rng));
    }

    Graph g;
    cmx::Matrix stacked_a(15, 4), stacked_b(12, 4);
    for (int i = 0; i < 3; ++i) {
        std::copy(proj_a[static_cast<std::size_t>(i)].data.begin(), proj_a[static_cast<std::size_t>(i)].data.end(),
                  stacked_a.data.begin() + static_cast<std::ptrdiff_t>(i) * 20);
        std::copy(proj_b[static_cast<std::size_t>(i)].data.begin(), proj_b[static_cast<std::size_t>(i)].data.end(),
                  stacked_b.data.begin() + static_cast<std::ptrdiff_t>(i) * 16);
    }
    Tensor dist_a = cmx::sequence_distribution(g, g.input(stacked_a, false), cb, 5);
    Tensor dist_b = cmx::sequence_distribution(g, g.input(stacked_b, false), cb, 4);
    Tensor loss = cmx::cmcm_loss(g, dist_a, dist_b);
    CHECK(std::abs(loss.scalar() - oracle::cmcm(cb.codewords, proj_a, proj_b)) < 1e-10);
}

TEST_CASE("batch embeddings drive the same losses") {
    std::mt19937_64 rng(19);
    cmx::BatchEmbeddings batch;
    Graph g;
    const auto z_a = oracle::random_matrix(3, 4, rng);
    const auto z_b = oracle::random_matrix(3, 4, rng);
    batch.z_a = g.input(z_a, false);
    batch.z_b = g.input(z_b, false);
    CHECK(cmx::mms_loss(g, batch, 1e-3).scalar() ==
          doctest::Approx(cmx::mms_loss(g, batch.z_a, batch.z_b, 1e-3).scalar()).epsilon(1e-15));
    CHECK_THROWS_AS(cmx::cmcm_loss(g, batch), cmx::ConfigError);  // no distributions attached

    cmx::Matrix d_a(3, 5), d_b(3, 5);
    for (int i = 0; i < 3; ++i) {
        const auto pa = oracle::random_distribution(5, rng);
        const auto pb = oracle::random_distribution(5, rng);
        std::copy(pa.begin(), pa.end(), d_a.row(i).data());
        std::copy(pb.begin(), pb.end(), d_b.row(i).data());
    }
    batch.dist_a = g.input(d_a, false);
    batch.dist_b = g.input(d_b, false);
    CHECK(cmx::cmcm_loss(g, batch).scalar() ==
          doctest::Approx(cmx::cmcm_loss(g, *batch.dist_a, *batch.dist_b).scalar()).epsilon(1e-15));
}

TEST_CASE("total: linear combination and ablation degenerations") {
    Graph g;
    Tensor mms = g.input(1, 1, {0.5}, false);
    Tensor cmcm = g.input(1, 1, {0.3}, false);
    CHECK(cmx::total_loss(g, mms, cmcm, 1.0).scalar() == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(cmx::total_loss(g, mms, cmcm, 0.0).id() == mms.id());  // alpha = 0 is exactly the mms term
    CHECK_THROWS_AS(cmx::total_loss(g, mms, cmcm, -0.1), cmx::ConfigError);
}

TEST_CASE("mms is invariant to a constant shift of every score") {
    for (int seed = 0; seed < 100; ++seed) {
        std::mt19937_64 rng(static_cast<std::uint64_t>(seed) + 101);
        const int n = 2 + seed % 4;
        const auto scores = oracle::random_matrix(n, n, rng, 2.0);
        cmx::Matrix shifted = scores;
        std::uniform_real_distribution<double> su(-5.0, 5.0);
        const double c = su(rng);
        for (auto& v : shifted.data) v += c;

        Graph g;
        const double a = cmx::contrastive_from_scores(g, g.input(scores, false), 1e-3).scalar();
        const double b = cmx::contrastive_from_scores(g, g.input(shifted, false), 1e-3).scalar();
        CHECK(std::abs(a - b) < 1e-10);
    }
}

TEST_CASE("losses are invariant to a shared permutation of the paired rows") {
    std::mt19937_64 rng(77);
    const int n = 6;
    const auto z_a = oracle::random_matrix(n, 5, rng);
    const auto z_b = oracle::random_matrix(n, 5, rng);
    cmx::Matrix d_a(n, 10), d_b(n, 10);
    for (int i = 0; i < n; ++i) {
        auto pa = oracle::random_distribution(10, rng);
        auto pb = oracle::random_distribution(10, rng);
        std::copy(pa.begin(), pa.end(), d_a.row(i).data());
        std::copy(pb.begin(), pb.end(), d_b.row(i).data());
    }
    std::vector<int> perm = {3, 0, 5, 1, 4, 2};
    auto permute = [&perm, n](const cmx::Matrix& m) {
        cmx::Matrix out(m.rows, m.cols);
        for (int i = 0; i < n; ++i)
            std::copy(m.row(perm[static_cast<std::size_t>(i)]).begin(), m.row(perm[static_cast<std::size_t>(i)]).end(),
                      out.row(i).data());
        return out;
    };

    Graph g;
    const double mms1 = cmx::mms_loss(g, g.input(z_a, false), g.input(z_b, false), 1e-3).scalar();
    const double mms2 = cmx::mms_loss(g, g.input(permute(z_a), false), g.input(permute(z_b), false), 1e-3).scalar();
    CHECK(std::abs(mms1 - mms2) < 1e-10);

    const double c1 = cmx::cmcm_loss(g, g.input(d_a, false), g.input(d_b, false)).scalar();
    const double c2 = cmx::cmcm_loss(g, g.input(permute(d_a), false), g.input(permute(d_b), false)).scalar();
    CHECK(std::abs(c1 - c2) < 1e-10);

    Graph g2;
    const double t1 = cmx::total_loss(g2, cmx::mms_loss(g2, g2.input(z_a, false), g2.input(z_b, false), 1e-3),
                                      cmx::cmcm_loss(g2, g2.input(d_a, false), g2.input(d_b, false)), 0.1)
                          .scalar();
    const double t2 =
        cmx::total_loss(g2, cmx::mms_loss(g2, g2.input(permute(z_a), false), g2.input(permute(z_b), false), 1e-3),
                        cmx::cmcm_loss(g2, g2.input(permute(d_a), false), g2.input(permute(d_b), false)), 0.1)
            .scalar();
    CHECK(std::abs(t1 - t2) < 1e-10);
}

TEST_CASE("cmcm loss is non-negative on random distribution banks") {
    for (int seed = 0; seed < 100; ++seed) {
        std::mt19937_64 rng(static_cast<std::uint64_t>(seed) + 211);
        const int n = 2 + seed % 4;
        cmx::Matrix d_a(n, 6), d_b(n, 6);
        for (int i = 0; i < n; ++i) {
            auto pa = oracle::random_distribution(6, rng);
            auto pb = oracle::random_distribution(6, rng);
            std::copy(pa.begin(), pa.end(), d_a.row(i).data());
            std::copy(pb.begin(), pb.end(), d_b.row(i).data());
        }
        Graph g;
        CHECK(cmx::cmcm_loss(g, g.input(d_a, false), g.input(d_b, false)).scalar() >= 0.0);
    }
}

TEST_CASE("grad check: mms on a random 4x8 embedding batch") {
    std::mt19937_64 rng(91);
    const auto z_a = oracle::random_matrix(4, 8, rng);
    const auto z_b = oracle::random_matrix(4, 8, rng);

    auto fn_a = [&](Graph& g, Tensor x) { return cmx::mms_loss(g, x, g.constant(z_b), 1e-3); };
    CHECK(cmx::grad_check(fn_a, 4, 8, z_a.data, 1e-5).max_rel_error < 1e-5);

    auto fn_b = [&](Graph& g, Tensor x) { return cmx::mms_loss(g, g.constant(z_a), x, 1e-3); };
    CHECK(cmx::grad_check(fn_b, 4, 8, z_b.data, 1e-5).max_rel_error < 1e-5);
}

TEST_CASE("grad check: cmcm through the softmin pipeline on a 3-pair batch") {
    std::mt19937_64 rng(92);
    cmx::Codebook cb = cmx::init_codebook(16, 4, 0.99, 100, 92);
    const auto raw_a = oracle::random_matrix(9, 4, rng);  // 3 instances x 3 positions
    const auto raw_b = oracle::random_matrix(9, 4, rng);

    auto fn = [&](Graph& g, Tensor x) {
        Tensor dist_a = cmx::sequence_distribution(g, x, cb, 3);
        Tensor dist_b = cmx::sequence_distribution(g, g.constant(raw_b), cb, 3);
        return cmx::cmcm_loss(g, dist_a, dist_b);
    };
    CHECK(cmx::grad_check(fn, 9, 4, raw_a.data, 1e-5).max_rel_error < 1e-5);
}

TEST_SUITE_END();
