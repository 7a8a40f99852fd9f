#pragma once

// Seeded ablation runs: for every seed, an untrained baseline and one trained
// model per loss-weight variant, all from the same initialization.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "triret/io.hpp"

namespace triret {

// (lambda_d, lambda_t, lambda_a)
using LossWeights = std::array<double, 3>;

// Pairwise, L_D + L_A, full objective.
inline const std::vector<LossWeights> kStairStep{{0, 0, 1}, {1, 0, 1}, {1, 1, 1}};

std::string weights_label(const LossWeights& w);  // "(1,0,1)"

struct VariantRun {
    LossWeights weights{};
    RetrievalReport report;
    GeometryReport geometry;
    std::string history;  // history_csv
    ParameterSet params;
    double wall_clock_seconds = 0.0;
};

struct SeedRun {
    std::uint64_t seed = 0;
    RetrievalReport untrained;
    GeometryReport untrained_geometry;
    std::vector<VariantRun> variants;
};

struct AblationResult {
    std::vector<LossWeights> variants;
    std::vector<SeedRun> seeds;

    // Per-seed AVG-all of the untrained model (variant < 0) or a variant.
    std::vector<double> avg_all(int variant) const;
    json to_json(const RunConfig& config) const;
    // Rows: untrained and each variant (mean over seeds), then the
    // per-variant change from the row above.
    std::string table_text() const;
};

// Model and optimizer seeds follow `seed`; the corpus is shared.
RunConfig config_for_seed(const RunConfig& config, std::uint64_t seed);

VariantRun train_variant(const Corpus& corpus, const RunConfig& seeded, const ParameterSet& init,
                         const LossWeights& weights);

AblationResult run_ablation(const Corpus& corpus, const RunConfig& config,
                            const std::vector<LossWeights>& variants = kStairStep);

double mean_of(const std::vector<double>& xs);
double sample_std(const std::vector<double>& xs);

}  // namespace triret
