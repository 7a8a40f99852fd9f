#pragma once

// N -> N diagonal retrieval over the 12 query/target view pairs of the
// tri-modal grid. Query i's gold is row i of the target-view gallery, which
// stays in the gallery. Ranks break score ties by lower gallery index.

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "triret/autodiff.hpp"
#include "triret/model.hpp"
#include "triret/synthetic_data.hpp"

namespace triret {

// Nonempty subset of {T, V, A} as a bitmask (bit = 1 << index_of(m)).
class View {
public:
    constexpr View() = default;
    explicit constexpr View(std::uint8_t mask) : mask_(mask) {}
    static View of(std::initializer_list<Modality> ms);
    static View parse(const std::string& name);  // "t", "av", "tv", ...

    std::uint8_t mask() const { return mask_; }
    std::size_t count() const;
    bool contains(Modality m) const { return (mask_ >> index_of(m)) & 1U; }
    std::vector<Modality> modalities() const;  // T < V < A
    std::string name() const;                  // "t", "v", "a", "av", "at", "tv"

    friend constexpr auto operator<=>(const View&, const View&) = default;

private:
    std::uint8_t mask_ = 0;
};

struct Direction {
    View query;
    View target;

    bool dual() const { return query.count() == 2 || target.count() == 2; }
    std::string name() const;  // "a->tv"
    friend constexpr auto operator<=>(const Direction&, const Direction&) = default;
};

// Disjoint, nonempty, proper subsets: 6 single->single, 3 single->dual, 3 dual->single.
bool is_valid_direction(View query, View target);

// The 12 directions in reporting order:
// t->v v->t t->a a->t v->a a->v t->av av->t a->tv tv->a v->at at->v
const std::vector<Direction>& benchmark_directions();

// The 6 views the directions use: t, v, a, av, at, tv.
const std::vector<View>& pool_views();

using ViewSet = std::map<View, Tensor>;

inline constexpr std::array<std::size_t, 3> kDefaultKs{1, 5, 10};

// Embeds every pool view of `pool`: singles via encode_modality, pairs via encode_subset.
ViewSet embed_pool(const ModelConfig& config, const ParameterSet& params, const Split& pool);

// 1-based rank of `gold` by descending score, ties to the lower index.
std::size_t rank_from_scores(std::span<const double> scores, std::size_t gold);
std::size_t rank_query(std::span<const double> query, const Tensor& gallery, std::size_t gold);

// 1/log2(rank + 1) for rank <= 10, else 0.
double ndcg_at_10(std::size_t rank);

struct DirectionMetrics {
    Direction direction;
    std::vector<double> recall;  // percent, aligned with RetrievalReport::ks
    double ndcg10 = 0.0;         // percent
};

struct RetrievalReport {
    std::vector<std::size_t> ks;
    std::size_t n = 0;
    std::vector<DirectionMetrics> directions;  // benchmark_directions() order
    double avg_single = 0.0;  // mean R@1 over single->single
    double avg_dual = 0.0;    // mean R@1 over directions with a dual view
    double avg_all = 0.0;     // mean R@1 over all 12

    double recall_at(const Direction& d, std::size_t k) const;
    const DirectionMetrics& metrics(const Direction& d) const;
};

// N x N score matrix for one direction: row = query, column = gallery item.
using Scorer = std::function<Tensor(View query, View target)>;

Tensor dot_scores(const Tensor& queries, const Tensor& gallery);

RetrievalReport evaluate_scores(const Scorer& scorer, std::size_t n,
                                std::span<const std::size_t> ks = kDefaultKs);
RetrievalReport evaluate_views(const ViewSet& views, std::span<const std::size_t> ks = kDefaultKs);
RetrievalReport evaluate_benchmark(const ModelConfig& config, const ParameterSet& params,
                                   const Split& pool, std::span<const std::size_t> ks = kDefaultKs);

// Worker count for query-parallel ranking: TRIRET_THREADS, else 1.
std::size_t worker_threads();

}  // namespace triret
