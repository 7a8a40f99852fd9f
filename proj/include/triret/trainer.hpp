#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "triret/model.hpp"
#include "triret/objectives.hpp"
#include "triret/synthetic_data.hpp"

namespace triret {

enum class OptimizerKind : std::uint8_t { sgd, adam };
enum class LrSchedule : std::uint8_t { constant, warmup_cosine };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adam;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled (AdamW); ignored by sgd
    std::size_t steps = 500;
    std::size_t batch_size = 64;
    LrSchedule schedule = LrSchedule::constant;
    double warmup_fraction = 0.03;
    std::uint64_t seed = 42;

    void validate() const;
    double lr_at(std::size_t step) const;
    friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

struct OptimizerState {
    std::size_t t = 0;  // completed updates
    std::vector<Tensor> m;
    std::vector<Tensor> v;
};

// In-place update. Parameters without an entry in `grads` get a zero gradient.
void optimizer_step(ParameterSet& params, const Gradients& grads, const OptimizerConfig& cfg,
                    OptimizerState& state, double lr);

struct StepRecord {
    std::size_t step = 0;
    Modality slot = Modality::T;
    LossBreakdown loss;
};

struct StepResult {
    StepRecord record;
    int encoder_forwards = 0;
};

// One training step: three single-modal forwards and one joint forward, L_A,
// L_D against the stop-gradient joint teacher, the cycled hard negative, L_T,
// then an update on the lambda-weighted total. Updated parameters are rounded
// to single precision, the checkpoint dtype.
StepResult train_step(ParameterSet& params, const ModelConfig& model, const TripleBatch& batch,
                      std::size_t step, const LossConfig& loss, const OptimizerConfig& opt,
                      OptimizerState& state, std::mt19937_64& derangement_rng);

struct TrainRunRecord {
    ModelConfig model;
    LossConfig loss;
    OptimizerConfig optim;
    std::vector<StepRecord> history;
    ParameterSet params;
    double wall_clock_seconds = 0.0;
};

// Epoch loop over the training split. The step counter is global, so the
// T, V, A slot cycle continues across epoch boundaries. Data shuffling and
// derangements draw from independent streams seeded from opt.seed.
TrainRunRecord run_training(const Split& train, const ModelConfig& model, const LossConfig& loss,
                            const OptimizerConfig& opt, const ParameterSet& initial);

std::string history_csv(const std::vector<StepRecord>& history);

}  // namespace triret
