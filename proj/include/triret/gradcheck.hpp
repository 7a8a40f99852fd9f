#pragma once

// Finite-difference checks of the training losses through the full encoder.

#include <cstdint>
#include <string>
#include <vector>

#include "triret/objectives.hpp"

namespace triret {

struct LossCheckConfig {
    std::size_t instances = 20;
    std::size_t batch = 4;
    std::size_t embed_dim = 8;
    std::size_t hidden_dim = 6;
    std::size_t input_dim = 5;
    double tau = 0.5;
    double tau_t = 0.5;
    double tolerance = 1e-4;
    std::uint64_t seed = 7;
};

struct LossCheckResult {
    std::string loss;  // "L_A", "L_D", "L_T", "total"
    double max_rel_error = 0.0;
    std::string worst_param;
    bool passed = false;
};

// One result per loss, each the worst case over all instances and parameters.
std::vector<LossCheckResult> check_loss_gradients(const LossCheckConfig& cfg);

}  // namespace triret
