#include "triret/diagnostics.hpp"

#include <algorithm>
#include <numeric>

#include <fmt/format.h>

namespace triret {

namespace {

double dot_rows(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
    auto x = a.row(i);
    auto y = b.row(j);
    double acc = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) acc += x[k] * y[k];
    return acc;
}

}  // namespace

GeometryReport triple_cosine_report(const Tensor& z_t, const Tensor& z_v, const Tensor& z_a) {
    if (!z_t.same_shape(z_v)) throw ShapeError("triple_cosine_report", z_t, z_v);
    if (!z_t.same_shape(z_a)) throw ShapeError("triple_cosine_report", z_t, z_a);
    const std::size_t n = z_t.rows();
    if (n < 2) throw std::invalid_argument("triple_cosine_report: need at least 2 samples");
    double intra = 0.0;
    double inter = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = (i + 1) % n;
        intra += (dot_rows(z_t, i, z_v, i) + dot_rows(z_t, i, z_a, i) + dot_rows(z_v, i, z_a, i)) / 3.0;
        inter += (dot_rows(z_t, i, z_v, j) + dot_rows(z_t, i, z_a, j) + dot_rows(z_v, j, z_a, j)) / 3.0;
    }
    GeometryReport r;
    r.intra_mean = intra / static_cast<double>(n);
    r.inter_mean = inter / static_cast<double>(n);
    r.gap = r.intra_mean - r.inter_mean;
    return r;
}

GeometryReport triple_cosine_report(const ViewSet& views) {
    return triple_cosine_report(views.at(View::parse("t")), views.at(View::parse("v")),
                                views.at(View::parse("a")));
}

std::vector<std::size_t> top1_indices(const Tensor& scores) {
    std::vector<std::size_t> out(scores.rows());
    for (std::size_t i = 0; i < scores.rows(); ++i) {
        auto row = scores.row(i);
        // max_element returns the first maximum, i.e. the lowest index on ties.
        out[i] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return out;
}

AttractorReport attractor_report(const Tensor& scores, std::size_t k) {
    const std::size_t n = scores.rows();
    if (n == 0 || scores.cols() == 0) throw std::invalid_argument("attractor_report: empty pool");
    if (k == 0) throw std::invalid_argument("attractor_report: K must be >= 1");
    std::vector<std::size_t> counts(scores.cols(), 0);
    for (std::size_t t : top1_indices(scores)) ++counts[t];

    std::vector<std::size_t> order(scores.cols());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return counts[a] > counts[b]; });

    AttractorReport r;
    r.k = k;
    const auto distinct = std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; });
    r.top1_coverage_fraction = static_cast<double>(distinct) / static_cast<double>(n);
    std::size_t mass = 0;
    for (std::size_t i = 0; i < std::min(k, order.size()); ++i) {
        r.top_targets.push_back(order[i]);
        mass += counts[order[i]];
    }
    r.topk_mass = static_cast<double>(mass) / static_cast<double>(n);
    return r;
}

AttractorReport attractor_report(const ViewSet& views, const Direction& direction, std::size_t k) {
    return attractor_report(dot_scores(views.at(direction.query), views.at(direction.target)), k);
}

AttractorReport attractor_report(const Direction& direction, const ModelConfig& config,
                                 const ParameterSet& params, const Split& pool, std::size_t k) {
    if (!is_valid_direction(direction.query, direction.target)) {
        throw std::invalid_argument("attractor_report: invalid direction " + direction.name());
    }
    return attractor_report(embed_pool(config, params, pool), direction, k);
}

}  // namespace triret
