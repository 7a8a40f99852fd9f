#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "helpers.hpp"
#include "triret/retrieval.hpp"

using namespace triret;

namespace {

ViewSet random_views(std::size_t n, std::size_t d, std::mt19937_64& rng) {
    ViewSet vs;
    for (View v : pool_views()) vs[v] = testutil::random_unit(n, d, rng);
    return vs;
}

Tensor permute_rows(const Tensor& t, const std::vector<std::size_t>& p) {
    Tensor out(p.size(), t.cols());
    for (std::size_t i = 0; i < p.size(); ++i)
        for (std::size_t j = 0; j < t.cols(); ++j) out(i, j) = t(p[i], j);
    return out;
}

}  // namespace

TEST_CASE("the benchmark has exactly the 12 disjoint proper-subset directions") {
    // Ordered pairs of disjoint, nonempty, proper subsets of {T, V, A}.
    std::set<std::pair<int, int>> expected;
    for (int q = 1; q < 8; ++q)
        for (int t = 1; t < 8; ++t)
            if ((q & t) == 0 && q != 7 && t != 7) expected.insert({q, t});
    CHECK(expected.size() == 12);

    const auto& dirs = benchmark_directions();
    REQUIRE(dirs.size() == 12);
    std::set<std::pair<int, int>> got;
    for (const auto& d : dirs) got.insert({d.query.mask(), d.target.mask()});
    CHECK(got == expected);
    for (int q = 1; q < 8; ++q)
        for (int t = 1; t < 8; ++t)
            CHECK(is_valid_direction(View(static_cast<std::uint8_t>(q)), View(static_cast<std::uint8_t>(t))) ==
                  expected.contains({q, t}));

    const char* order[] = {"t->v", "v->t", "t->a", "a->t", "v->a", "a->v",
                           "t->av", "av->t", "a->tv", "tv->a", "v->at", "at->v"};
    for (std::size_t i = 0; i < 12; ++i) {
        CHECK(dirs[i].name() == order[i]);
        CHECK(dirs[i].dual() == (i >= 6));
    }
}

TEST_CASE("view names round-trip") {
    for (View v : pool_views()) CHECK(View::parse(v.name()) == v);
    CHECK(View::parse("at") == View::of({Modality::A, Modality::T}));
    CHECK(pool_views().size() == 6);
    CHECK_THROWS(View::parse("tt"));
    CHECK_THROWS(View::parse("x"));
}

TEST_CASE("rank agrees with a sort oracle, ties included") {
    std::mt19937_64 rng(21);
    std::uniform_int_distribution<std::size_t> size(1, 64);
    std::uniform_int_distribution<int> coarse(0, 4);
    for (int pool = 0; pool < 50; ++pool) {
        const std::size_t n = size(rng);
        std::vector<double> scores(n);
        // Half the pools use a handful of values to force ties.
        std::normal_distribution<double> g;
        for (double& s : scores) s = pool % 2 == 0 ? static_cast<double>(coarse(rng)) : g(rng);
        for (std::size_t gold = 0; gold < n; ++gold) CHECK(rank_from_scores(scores, gold) == oracle::rank_by_sort(scores, gold));
    }
    const std::vector<double> flat(5, 0.3);
    CHECK(rank_from_scores(flat, 0) == 1);
    CHECK(rank_from_scores(flat, 4) == 5);
    CHECK_THROWS(rank_from_scores(flat, 5));
}

TEST_CASE("ndcg at 10") {
    CHECK(ndcg_at_10(1) == 1.0);
    CHECK(ndcg_at_10(3) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(ndcg_at_10(10) == doctest::Approx(1.0 / std::log2(11.0)));
    CHECK(ndcg_at_10(11) == 0.0);
    CHECK_THROWS(ndcg_at_10(0));
}

TEST_CASE("identical views retrieve perfectly") {
    std::mt19937_64 rng(3);
    const Tensor z = testutil::random_unit(40, 8, rng);
    ViewSet vs;
    for (View v : pool_views()) vs[v] = z;
    const RetrievalReport r = evaluate_views(vs);
    CHECK(r.n == 40);
    for (const auto& m : r.directions) {
        for (double v : m.recall) CHECK(v == 100.0);
        CHECK(m.ndcg10 == 100.0);
    }
    CHECK(r.avg_all == 100.0);
}

TEST_CASE("i.i.d. scores sit at the chance level") {
    // Independent scores make every query's gold rank uniform and independent,
    // so each R@k is a binomial proportion.
    const std::size_t n = 256;
    std::mt19937_64 rng(17);
    std::normal_distribution<double> g;
    Scorer scorer = [&](View, View) {
        Tensor s(n, n);
        for (double& v : s.data()) v = g(rng);
        return s;
    };
    const RetrievalReport r = evaluate_scores(scorer, n);
    for (const auto& m : r.directions) {
        for (std::size_t ki = 0; ki < r.ks.size(); ++ki) {
            const double p = static_cast<double>(r.ks[ki]) / static_cast<double>(n);
            const double sigma = 100.0 * std::sqrt(p * (1.0 - p) / static_cast<double>(n));
            INFO(m.direction.name() << " R@" << r.ks[ki]);
            CHECK(std::abs(m.recall[ki] - 100.0 * p) <= 3.0 * sigma);
        }
    }
    // AVG-all pools 12 independent directions.
    const double p1 = 1.0 / static_cast<double>(n);
    CHECK(std::abs(r.avg_all - 100.0 * p1) <= 3.0 * 100.0 * std::sqrt(p1 * (1.0 - p1) / (12.0 * n)));
}

TEST_CASE("report aggregates") {
    std::mt19937_64 rng(5);
    ViewSet vs = random_views(30, 4, rng);
    // Make a few directions partly aligned so the averages are not trivial.
    vs[View::parse("v")] = vs[View::parse("t")];
    const RetrievalReport r = evaluate_views(vs);
    double all = 0.0, single = 0.0, dual = 0.0;
    for (const auto& m : r.directions) {
        all += m.recall[0];
        (m.direction.dual() ? dual : single) += m.recall[0];
        CHECK(m.recall[0] <= m.recall[1]);
        CHECK(m.recall[1] <= m.recall[2]);
        CHECK(m.ndcg10 >= m.recall[0]);
        CHECK(m.ndcg10 <= m.recall[2]);
    }
    CHECK(r.avg_all == doctest::Approx(all / 12.0).epsilon(1e-14));
    CHECK(r.avg_single == doctest::Approx(single / 6.0).epsilon(1e-14));
    CHECK(r.avg_dual == doctest::Approx(dual / 6.0).epsilon(1e-14));
    CHECK(r.recall_at(benchmark_directions()[0], 1) == 100.0);
    CHECK_THROWS(r.recall_at(benchmark_directions()[0], 3));
}

TEST_CASE("custom ks and scorer") {
    // Scores that put the gold item at rank i % 4 + 1 for query i.
    const std::size_t n = 8;
    Scorer scorer = [&](View, View) {
        Tensor s(n, n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t ahead = i % 4;
            s(i, i) = 1.0;
            for (std::size_t j = 0, placed = 0; j < n && placed < ahead; ++j) {
                if (j == i) continue;
                s(i, j) = 2.0;
                ++placed;
            }
        }
        return s;
    };
    const std::vector<std::size_t> ks{1, 2, 4};
    const RetrievalReport r = evaluate_scores(scorer, n, ks);
    for (const auto& m : r.directions) {
        CHECK(m.recall == std::vector<double>{25.0, 50.0, 100.0});
        const double nd = 100.0 * (1.0 + 1.0 / std::log2(3.0) + 0.5 + 1.0 / std::log2(5.0)) / 4.0;
        CHECK(m.ndcg10 == doctest::Approx(nd).epsilon(1e-14));
    }
}

TEST_CASE("reports do not depend on storage order or thread count") {
    std::mt19937_64 rng(9);
    const ViewSet vs = random_views(50, 6, rng);
    const RetrievalReport base = evaluate_views(vs);

    std::vector<std::size_t> perm(50);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    ViewSet shuffled;
    for (const auto& [v, t] : vs) shuffled[v] = permute_rows(t, perm);
    const RetrievalReport moved = evaluate_views(shuffled);
    for (std::size_t i = 0; i < 12; ++i) {
        CHECK(moved.directions[i].recall == base.directions[i].recall);
        CHECK(moved.directions[i].ndcg10 == doctest::Approx(base.directions[i].ndcg10).epsilon(1e-12));
    }

    ::setenv("TRIRET_THREADS", "4", 1);
    CHECK(worker_threads() == 4);
    const RetrievalReport threaded = evaluate_views(vs);
    ::unsetenv("TRIRET_THREADS");
    for (std::size_t i = 0; i < 12; ++i) {
        CHECK(threaded.directions[i].recall == base.directions[i].recall);
        CHECK(threaded.directions[i].ndcg10 == base.directions[i].ndcg10);
    }
}

TEST_CASE("embed_pool builds the six views") {
    GenConfig gen;
    gen.n_train = 4;
    gen.n_eval = 20;
    const Corpus corpus = generate_corpus(gen);
    ModelConfig m;
    m.input_dim = gen.input_dim;
    const ParameterSet p = init_params(m);
    const ViewSet vs = embed_pool(m, p, corpus.eval);
    REQUIRE(vs.size() == 6);
    for (View v : pool_views()) {
        CHECK(vs.at(v).rows() == 20);
        CHECK(vs.at(v).cols() == m.embed_dim);
    }
    CHECK(vs.at(View::parse("t")) == encode_modality(m, p, Modality::T, corpus.eval.of(Modality::T)));
    const RetrievalReport a = evaluate_benchmark(m, p, corpus.eval);
    const RetrievalReport b = evaluate_views(vs);
    CHECK(a.avg_all == b.avg_all);
}

TEST_CASE("evaluate_views rejects missing or mismatched views") {
    std::mt19937_64 rng(1);
    ViewSet vs = random_views(10, 4, rng);
    vs[View::parse("av")] = testutil::random_unit(9, 4, rng);
    CHECK_THROWS(evaluate_views(vs));
    vs.erase(View::parse("av"));
    CHECK_THROWS(evaluate_views(vs));
}
