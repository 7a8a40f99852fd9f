#include "triret/retrieval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <thread>

#include <fmt/format.h>

namespace triret {

View View::of(std::initializer_list<Modality> ms) {
    std::uint8_t mask = 0;
    for (Modality m : ms) mask |= static_cast<std::uint8_t>(1U << index_of(m));
    return View(mask);
}

View View::parse(const std::string& name) {
    std::uint8_t mask = 0;
    for (char c : name) {
        const auto bit = static_cast<std::uint8_t>(1U << index_of(modality_from_letter(c)));
        if (mask & bit) throw std::invalid_argument("repeated modality in view '" + name + "'");
        mask |= bit;
    }
    if (mask == 0) throw std::invalid_argument("empty view name");
    return View(mask);
}

std::size_t View::count() const { return static_cast<std::size_t>(std::popcount(mask_)); }

std::vector<Modality> View::modalities() const {
    std::vector<Modality> out;
    for (Modality m : kModalities)
        if (contains(m)) out.push_back(m);
    return out;
}

std::string View::name() const {
    // Pair views follow the reporting labels: av, at, tv.
    switch (mask_) {
        case 0b001: return "t";
        case 0b010: return "v";
        case 0b100: return "a";
        case 0b110: return "av";
        case 0b101: return "at";
        case 0b011: return "tv";
        case 0b111: return "tva";
        default: return "?";
    }
}

std::string Direction::name() const { return query.name() + "->" + target.name(); }

bool is_valid_direction(View query, View target) {
    const auto q = query.count();
    const auto t = target.count();
    if (q == 0 || t == 0 || q == 3 || t == 3) return false;
    if ((query.mask() & target.mask()) != 0) return false;
    return q + t <= 3;
}

const std::vector<Direction>& benchmark_directions() {
    static const std::vector<Direction> dirs = [] {
        std::vector<Direction> d;
        for (const char* spec : {"t:v", "v:t", "t:a", "a:t", "v:a", "a:v", "t:av", "av:t", "a:tv",
                                 "tv:a", "v:at", "at:v"}) {
            const std::string s(spec);
            const auto colon = s.find(':');
            d.push_back({View::parse(s.substr(0, colon)), View::parse(s.substr(colon + 1))});
        }
        return d;
    }();
    return dirs;
}

const std::vector<View>& pool_views() {
    static const std::vector<View> views{View::parse("t"),  View::parse("v"),  View::parse("a"),
                                         View::parse("av"), View::parse("at"), View::parse("tv")};
    return views;
}

ViewSet embed_pool(const ModelConfig& config, const ParameterSet& params, const Split& pool) {
    if (pool.size() == 0) throw std::invalid_argument("embed_pool: empty pool");
    Graph g;
    ModelGraph mg(g, config, params);
    std::array<NodeId, 3> xs{};
    for (Modality m : kModalities) {
        xs[index_of(m)] = g.input(fmt::format("x.{}", modality_letter(m)), pool.of(m));
    }
    ViewSet out;
    for (View v : pool_views()) {
        const auto ms = v.modalities();
        NodeId z;
        if (ms.size() == 1) {
            z = mg.encode_modality(ms[0], xs[index_of(ms[0])]);
        } else {
            std::vector<NodeId> ins;
            for (Modality m : ms) ins.push_back(xs[index_of(m)]);
            z = mg.encode_subset(ms, ins);
        }
        out.emplace(v, g.value(z));
    }
    return out;
}

std::size_t rank_from_scores(std::span<const double> scores, std::size_t gold) {
    if (gold >= scores.size()) {
        throw std::out_of_range(fmt::format("gold index {} outside gallery of {}", gold, scores.size()));
    }
    const double s = scores[gold];
    std::size_t ahead = 0;
    for (std::size_t j = 0; j < scores.size(); ++j) {
        if (scores[j] > s || (scores[j] == s && j < gold)) ++ahead;
    }
    return ahead + 1;
}

std::size_t rank_query(std::span<const double> query, const Tensor& gallery, std::size_t gold) {
    if (query.size() != gallery.cols()) {
        throw std::invalid_argument(
            fmt::format("rank_query: query dim {} vs gallery {}", query.size(), gallery.shape_str()));
    }
    std::vector<double> scores(gallery.rows());
    for (std::size_t j = 0; j < gallery.rows(); ++j) {
        double acc = 0.0;
        auto row = gallery.row(j);
        for (std::size_t k = 0; k < row.size(); ++k) acc += query[k] * row[k];
        scores[j] = acc;
    }
    return rank_from_scores(scores, gold);
}

double ndcg_at_10(std::size_t rank) {
    if (rank < 1) throw std::invalid_argument("ndcg_at_10: rank must be >= 1");
    if (rank > 10) return 0.0;
    return 1.0 / std::log2(static_cast<double>(rank) + 1.0);
}

double RetrievalReport::recall_at(const Direction& d, std::size_t k) const {
    const auto it = std::find(ks.begin(), ks.end(), k);
    if (it == ks.end()) throw std::out_of_range(fmt::format("R@{} not in report", k));
    return metrics(d).recall[static_cast<std::size_t>(it - ks.begin())];
}

const DirectionMetrics& RetrievalReport::metrics(const Direction& d) const {
    for (const auto& m : directions)
        if (m.direction == d) return m;
    throw std::out_of_range("direction not in report: " + d.name());
}

Tensor dot_scores(const Tensor& queries, const Tensor& gallery) {
    if (queries.cols() != gallery.cols()) throw ShapeError("dot_scores", queries, gallery);
    Tensor out(queries.rows(), gallery.rows());
    for (std::size_t i = 0; i < queries.rows(); ++i) {
        auto q = queries.row(i);
        for (std::size_t j = 0; j < gallery.rows(); ++j) {
            auto gr = gallery.row(j);
            double acc = 0.0;
            for (std::size_t k = 0; k < q.size(); ++k) acc += q[k] * gr[k];
            out(i, j) = acc;
        }
    }
    return out;
}

std::size_t worker_threads() {
    if (const char* env = std::getenv("TRIRET_THREADS")) {
        const long n = std::strtol(env, nullptr, 10);
        if (n >= 1) return static_cast<std::size_t>(n);
    }
    return 1;
}

namespace {

std::vector<std::size_t> ranks_of(const Tensor& scores) {
    const std::size_t n = scores.rows();
    std::vector<std::size_t> ranks(n);
    const std::size_t workers = std::min(worker_threads(), std::max<std::size_t>(n, 1));
    auto run = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) ranks[i] = rank_from_scores(scores.row(i), i);
    };
    if (workers <= 1) {
        run(0, n);
        return ranks;
    }
    {
        std::vector<std::jthread> pool;
        const std::size_t chunk = (n + workers - 1) / workers;
        for (std::size_t w = 0; w < workers; ++w) {
            const std::size_t begin = w * chunk;
            const std::size_t end = std::min(n, begin + chunk);
            if (begin < end) pool.emplace_back(run, begin, end);
        }
    }
    return ranks;
}

}  // namespace

RetrievalReport evaluate_scores(const Scorer& scorer, std::size_t n, std::span<const std::size_t> ks) {
    if (ks.empty() || ks.front() != 1 || !std::is_sorted(ks.begin(), ks.end()) ||
        std::adjacent_find(ks.begin(), ks.end()) != ks.end()) {
        throw std::invalid_argument("ks must be strictly ascending and start at 1");
    }
    if (n < ks.back()) {
        throw std::invalid_argument(fmt::format("pool of {} is smaller than max k = {}", n, ks.back()));
    }
    RetrievalReport report;
    report.ks.assign(ks.begin(), ks.end());
    report.n = n;
    double single = 0.0;
    double dual = 0.0;
    std::size_t n_single = 0;
    std::size_t n_dual = 0;
    for (const Direction& d : benchmark_directions()) {
        std::vector<std::size_t> ranks;
        {
            const Tensor scores = scorer(d.query, d.target);
            if (scores.rows() != n || scores.cols() != n) {
                throw std::invalid_argument(fmt::format("{}: score matrix {} for pool of {}", d.name(),
                                                        scores.shape_str(), n));
            }
            ranks = ranks_of(scores);
        }
        DirectionMetrics m{d, std::vector<double>(ks.size(), 0.0), 0.0};
        std::vector<std::size_t> hits(ks.size(), 0);
        double ndcg = 0.0;
        for (std::size_t r : ranks) {
            for (std::size_t k = 0; k < ks.size(); ++k) hits[k] += r <= ks[k] ? 1 : 0;
            ndcg += ndcg_at_10(r);
        }
        for (std::size_t k = 0; k < ks.size(); ++k) {
            m.recall[k] = 100.0 * static_cast<double>(hits[k]) / static_cast<double>(n);
        }
        m.ndcg10 = 100.0 * ndcg / static_cast<double>(n);
        if (d.dual()) {
            dual += m.recall[0];
            ++n_dual;
        } else {
            single += m.recall[0];
            ++n_single;
        }
        report.directions.push_back(std::move(m));
    }
    double all = 0.0;
    for (const auto& m : report.directions) all += m.recall[0];
    report.avg_single = single / static_cast<double>(n_single);
    report.avg_dual = dual / static_cast<double>(n_dual);
    report.avg_all = all / static_cast<double>(report.directions.size());
    return report;
}

RetrievalReport evaluate_views(const ViewSet& views, std::span<const std::size_t> ks) {
    std::size_t n = 0;
    for (View v : pool_views()) {
        auto it = views.find(v);
        if (it == views.end()) throw std::invalid_argument("view set lacks view " + v.name());
        if (n == 0) n = it->second.rows();
        if (it->second.rows() != n) throw std::invalid_argument("views disagree on pool size");
    }
    return evaluate_scores(
        [&](View q, View t) { return dot_scores(views.at(q), views.at(t)); }, n, ks);
}

RetrievalReport evaluate_benchmark(const ModelConfig& config, const ParameterSet& params,
                                   const Split& pool, std::span<const std::size_t> ks) {
    return evaluate_views(embed_pool(config, params, pool), ks);
}

}  // namespace triret
