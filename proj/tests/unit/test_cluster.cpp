#include <doctest.h>

#include <cmath>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "prodrec/cluster.hpp"
#include "prodrec/datagen.hpp"
#include "testing.hpp"

using namespace prodrec;
using prodrec::testing::corpus_of;

namespace {

Matrix<float> unit_angles(const std::vector<double>& degrees) {
    Matrix<float> m(degrees.size(), 2);
    for (std::size_t i = 0; i < degrees.size(); ++i) {
        double r = degrees[i] * std::numbers::pi / 180.0;
        m(i, 0) = static_cast<float>(std::cos(r));
        m(i, 1) = static_cast<float>(std::sin(r));
    }
    return m;
}

/// Best 2-partition by the spherical objective, found by enumeration.
std::vector<std::uint32_t> best_two_partition(const Matrix<float>& x) {
    const std::size_t n = x.rows();
    double best = -1;
    std::vector<std::uint32_t> best_labels;
    for (std::uint32_t mask = 1; mask + 1 < (1u << n); ++mask) {
        double sum[2][2] = {{0, 0}, {0, 0}};
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t d = 0; d < 2; ++d) sum[(mask >> i) & 1][d] += x(i, d);
        double value = std::hypot(sum[0][0], sum[0][1]) + std::hypot(sum[1][0], sum[1][1]);
        if (value > best + 1e-12) {
            best = value;
            best_labels.clear();
            for (std::size_t i = 0; i < n; ++i) best_labels.push_back((mask >> i) & 1);
        }
    }
    return best_labels;
}

bool same_partition(const std::vector<std::uint32_t>& a, const std::vector<std::uint32_t>& b) {
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a.size(); ++j)
            if ((a[i] == a[j]) != (b[i] == b[j])) return false;
    return true;
}

/// ARI from the four pair counts.
double ari_oracle(const std::vector<std::uint32_t>& a, const std::vector<std::uint32_t>& b) {
    double n11 = 0, n10 = 0, n01 = 0, n00 = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = i + 1; j < a.size(); ++j) {
            bool sa = a[i] == a[j];
            bool sb = b[i] == b[j];
            (sa ? (sb ? n11 : n10) : (sb ? n01 : n00)) += 1;
        }
    double den = (n11 + n01) * (n01 + n00) + (n11 + n10) * (n10 + n00);
    return den == 0 ? 1.0 : 2 * (n11 * n00 - n01 * n10) / den;
}

}  // namespace

TEST_CASE("one cluster per product gives objective P") {
    detail::Rng rng(1);
    auto x = prodrec::testing::random_matrix(rng, 12, 5);
    auto m = kmeans_cosine(x, 12, 50, 3);
    std::set<ClusterId> used(m.assignment.begin(), m.assignment.end());
    CHECK(used.size() == 12);
    CHECK(m.objective_trace.back() == doctest::Approx(12.0));
}

TEST_CASE("two antipodal pairs split as the exhaustive search says") {
    auto x = unit_angles({0, 5, 180, 185});
    auto oracle = best_two_partition(x);
    CHECK(same_partition(oracle, {0, 0, 1, 1}));
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto m = kmeans_cosine(x, 2, 100, seed);
        CHECK(same_partition(m.assignment, oracle));
    }
}

TEST_CASE("property: k-means agrees with exhaustive search on separated planar data") {
    detail::Rng rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        double a = detail::uniform01(rng) * 360;
        double b = a + 90 + detail::uniform01(rng) * 180;
        std::vector<double> angles;
        for (int i = 0; i < 4; ++i) angles.push_back(a + detail::uniform01(rng) * 20);
        for (int i = 0; i < 4; ++i) angles.push_back(b + detail::uniform01(rng) * 20);
        auto x = unit_angles(angles);
        auto m = kmeans_cosine(x, 2, 100, static_cast<std::uint64_t>(trial));
        REQUIRE(same_partition(m.assignment, best_two_partition(x)));
    }
}

TEST_CASE("centroids are unit rows and the objective never decreases") {
    detail::Rng rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        auto x = prodrec::testing::random_matrix(rng, 60, 6);
        std::size_t C = 2 + static_cast<std::size_t>(trial % 7);
        auto m = kmeans_cosine(x, C, 100, static_cast<std::uint64_t>(trial));
        REQUIRE(m.assignment.size() == 60);
        for (auto a : m.assignment) REQUIRE(a < C);
        for (std::size_t c = 0; c < C; ++c) {
            auto row = m.centroids.row(c);
            CHECK(std::sqrt(dot(row, row)) == doctest::Approx(1.0).epsilon(1e-12));
        }
        for (std::size_t i = 1; i < m.objective_trace.size(); ++i)
            REQUIRE(m.objective_trace[i] >= m.objective_trace[i - 1] - 1e-9);
        CHECK(m.members().size() == C);
    }
}

TEST_CASE("positive scaling leaves assignments unchanged") {
    detail::Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        auto x = prodrec::testing::random_matrix(rng, 40, 4);
        auto scaled = x;
        for (auto& v : scaled.values()) v *= 8.0f;  // a power of two keeps float rounding exact
        auto a = kmeans_cosine(x, 5, 100, 9);
        auto b = kmeans_cosine(scaled, 5, 100, 9);
        CHECK(a.assignment == b.assignment);
    }
}

TEST_CASE("worker count does not change the clustering") {
    detail::Rng rng(5);
    auto x = prodrec::testing::random_matrix(rng, 300, 8);
    auto a = kmeans_cosine(x, 10, 100, 1, 1);
    auto b = kmeans_cosine(x, 10, 100, 1, 4);
    CHECK(a.assignment == b.assignment);
    CHECK(a.centroids == b.centroids);
}

TEST_CASE("invalid cluster requests are errors") {
    Matrix<float> same(4, 2, 1.0f);
    CHECK_THROWS_AS(kmeans_cosine(same, 2, 10, 1), Error);
    detail::Rng rng(6);
    auto x = prodrec::testing::random_matrix(rng, 3, 2);
    CHECK_THROWS_AS(kmeans_cosine(x, 4, 10, 1), Error);
    CHECK_THROWS_AS(kmeans_cosine(x, 0, 10, 1), Error);
}

TEST_CASE("adjusted Rand index matches the pair-count formula") {
    CHECK(adjusted_rand_index(std::vector<std::uint32_t>{0, 0, 1, 1}, std::vector<std::uint32_t>{1, 1, 0, 0}) == 1.0);
    detail::Rng rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        std::size_t n = 2 + detail::uniform_below(rng, 30);
        std::vector<std::uint32_t> a(n), b(n);
        for (auto& v : a) v = static_cast<std::uint32_t>(detail::uniform_below(rng, 4));
        for (auto& v : b) v = static_cast<std::uint32_t>(detail::uniform_below(rng, 4));
        REQUIRE(adjusted_rand_index(a, b) == doctest::Approx(ari_oracle(a, b)).epsilon(1e-9));
    }
}

TEST_CASE("clusters of trained embeddings recover the planted groups") {
    GenConfig gen;
    auto data = generate(gen);
    auto corpus = parse_logs(data.receipts).corpus;
    TrainConfig cfg;
    cfg.dim = 32;
    cfg.subsample_t = 0;
    auto model = train_prod2vec(corpus, cfg);
    auto clusters = kmeans_cosine(model, gen.num_groups, 100, 1);
    std::vector<std::uint32_t> truth;
    for (const auto& token : model.products.tokens()) truth.push_back(data.truth.group_of(token));
    CHECK(adjusted_rand_index(clusters.assignment, truth) >= 0.7);
}

TEST_CASE("alternating clusters give certain transitions") {
    auto c = corpus_of("u1\t1\tA\t5\nu1\t2\tB\t5\nu1\t3\tA\t5\nu1\t4\tB\t5\n");
    ClusterModel m;
    m.num_clusters = 3;
    m.assignment.assign(2, 0);
    m.assignment[c.vocab.products.at("A")] = 1;
    m.assignment[c.vocab.products.at("B")] = 2;
    auto t = estimate_transitions(c, m, 1);
    CHECK(t.theta(1, 2) == 1.0);
    CHECK(t.theta(2, 1) == 1.0);
    CHECK(t.support == std::vector<std::int64_t>{0, 2, 1});
    CHECK_FALSE(t.has_support(0));
    for (std::size_t j = 0; j < 3; ++j) CHECK(t.theta(0, j) == 0.0);
}

TEST_CASE("a single cluster transitions to itself") {
    detail::Rng rng(8);
    auto c = prodrec::testing::random_corpus(rng, 5, 6, 4, 3);
    ClusterModel m;
    m.num_clusters = 1;
    m.assignment.assign(c.vocab.size(), 0);
    CHECK(estimate_transitions(c, m, 1).theta(0, 0) == 1.0);
}

TEST_CASE("property: transitions equal brute-force pair counts") {
    detail::Rng rng(9);
    for (int trial = 0; trial < 1000; ++trial) {
        auto c = prodrec::testing::random_corpus(rng, 1 + detail::uniform_below(rng, 10), 8, 4, 3);
        while (c.num_purchases() > 20) c.logs.pop_back();
        const std::size_t C = 1 + detail::uniform_below(rng, 4);
        ClusterModel m;
        m.num_clusters = C;
        for (std::size_t p = 0; p < c.vocab.size(); ++p) m.assignment.push_back(static_cast<ClusterId>(detail::uniform_below(rng, C)));
        const std::uint64_t seed = trial;
        auto t = estimate_transitions(c, m, seed);

        std::map<std::pair<ClusterId, ClusterId>, double> pairs;
        std::map<ClusterId, double> from;
        for (const auto& log : c.logs) {
            std::vector<ProductId> seq;
            for (const auto& fp : flatten(log, seed)) seq.push_back(fp.product);
            for (std::size_t i = 1; i < seq.size(); ++i) {
                pairs[{m.assignment[seq[i - 1]], m.assignment[seq[i]]}] += 1;
                from[m.assignment[seq[i - 1]]] += 1;
            }
        }
        for (ClusterId i = 0; i < C; ++i) {
            REQUIRE(t.support[i] == static_cast<std::int64_t>(from[i]));
            double row = 0;
            for (ClusterId j = 0; j < C; ++j) {
                double expected = from[i] > 0 ? pairs[{i, j}] / from[i] : 0.0;
                REQUIRE(t.theta(i, j) == expected);
                row += t.theta(i, j);
            }
            if (from[i] > 0) REQUIRE(row == doctest::Approx(1.0).epsilon(1e-9));
        }
    }
}

TEST_CASE("transitions do not depend on user order") {
    detail::Rng rng(10);
    for (int trial = 0; trial < 50; ++trial) {
        auto c = prodrec::testing::random_corpus(rng, 8, 10, 5, 3);
        ClusterModel m;
        m.num_clusters = 3;
        for (std::size_t p = 0; p < c.vocab.size(); ++p) m.assignment.push_back(static_cast<ClusterId>(p % 3));
        auto shuffled = c;
        detail::shuffle(std::span<UserLog>(shuffled.logs), rng);
        auto a = estimate_transitions(c, m, 4);
        auto b = estimate_transitions(shuffled, m, 4);
        CHECK(a.theta == b.theta);
        CHECK(a.support == b.support);
    }
}

TEST_CASE("transitions over single-item receipts ignore log line order") {
    auto a = corpus_of("u1\t1\tA\t5\nu2\t1\tB\t5\nu1\t2\tB\t5\nu2\t2\tA\t5\nu1\t3\tA\t5\n");
    auto b = corpus_of("u2\t2\tA\t5\nu1\t3\tA\t5\nu2\t1\tB\t5\nu1\t2\tB\t5\nu1\t1\tA\t5\n");
    auto clusters_for = [](const Corpus& c) {
        ClusterModel m;
        m.num_clusters = 2;
        m.assignment.resize(2);
        m.assignment[c.vocab.products.at("A")] = 0;
        m.assignment[c.vocab.products.at("B")] = 1;
        return m;
    };
    auto ta = estimate_transitions(a, clusters_for(a), 1);
    auto tb = estimate_transitions(b, clusters_for(b), 1);
    CHECK(ta.theta == tb.theta);
    CHECK(ta.support == tb.support);
}

TEST_CASE("cluster and transition files round-trip") {
    detail::Rng rng(11);
    auto c = prodrec::testing::random_corpus(rng, 6, 9, 5, 3);
    auto x = prodrec::testing::random_matrix(rng, c.vocab.size(), 3);
    auto m = kmeans_cosine(x, 3, 50, 2);
    std::stringstream cs;
    write_clusters(c.vocab.products, m, cs);
    auto back = read_clusters(cs, c.vocab.products);
    CHECK(back.assignment == m.assignment);

    auto t = estimate_transitions(c, m, 1);
    std::stringstream ts;
    write_transitions(t, ts);
    auto tt = read_transitions(ts);
    CHECK(tt.theta == t.theta);
    CHECK(tt.support == t.support);

    std::istringstream partial(c.vocab.products.token(0) + "\t0\n");
    if (c.vocab.size() > 1) CHECK_THROWS_AS(read_clusters(partial, c.vocab.products), Error);
}
