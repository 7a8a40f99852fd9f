#pragma once

#include <cstddef>
#include <vector>

#include "triret/retrieval.hpp"

namespace triret {

// Mean triple-cosine c3 = (T.V + T.A + V.A) / 3 over matched triples (intra)
// and over T_i paired with V_{i+1}, A_{i+1} with wraparound (inter).
struct GeometryReport {
    double intra_mean = 0.0;
    double inter_mean = 0.0;
    double gap = 0.0;  // intra_mean - inter_mean
};

GeometryReport triple_cosine_report(const Tensor& z_t, const Tensor& z_v, const Tensor& z_a);
GeometryReport triple_cosine_report(const ViewSet& views);

// Concentration of top-1 retrievals on a few gallery items.
struct AttractorReport {
    double top1_coverage_fraction = 0.0;  // distinct top-1 targets / N
    double topk_mass = 0.0;               // queries whose top-1 is among the K most frequent / N
    std::size_t k = 3;
    std::vector<std::size_t> top_targets;  // the K most frequent, most frequent first
};

// Top-1 gallery index per query (ties to the lower index).
std::vector<std::size_t> top1_indices(const Tensor& scores);

AttractorReport attractor_report(const Tensor& scores, std::size_t k = 3);
AttractorReport attractor_report(const ViewSet& views, const Direction& direction, std::size_t k = 3);
AttractorReport attractor_report(const Direction& direction, const ModelConfig& config,
                                 const ParameterSet& params, const Split& pool, std::size_t k = 3);

}  // namespace triret
