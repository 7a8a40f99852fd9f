#pragma once

// Contrastive objectives over tri-modal batch embeddings:
//   loss_la  pairwise symmetric InfoNCE over (T,V), (T,A), (V,A)
//   loss_ld  single-modal students against a stop-gradient joint teacher
//   loss_lt  Tuple-InfoNCE over averaged cross-modal cosines plus one
//            modality-cycled hard negative per anchor
// All losses are graph nodes; values come from Graph::value once built.

#include <array>
#include <cstddef>
#include <random>
#include <utility>
#include <vector>

#include "triret/autodiff.hpp"
#include "triret/model.hpp"

namespace triret {

struct LossConfig {
    double tau = 0.01;     // pairwise and distillation temperature
    double tau_t = 0.01;   // tuple temperature
    double lambda_d = 1.0;
    double lambda_t = 1.0;
    double lambda_a = 1.0;

    void validate() const;
    friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

inline constexpr std::array<std::pair<Modality, Modality>, 3> kPairSet{{
    {Modality::T, Modality::V},
    {Modality::T, Modality::A},
    {Modality::V, Modality::A},
}};

// Unit-norm B x d single-modal embeddings of one batch.
struct TupleEmbeddings {
    NodeId t;
    NodeId v;
    NodeId a;
    NodeId of(Modality m) const;
};

struct BatchEmbeddings {
    TupleEmbeddings single;
    NodeId tva;
};

struct HardNegativePlan {
    std::size_t step = 0;
    Modality slot = Modality::T;
    std::vector<std::size_t> sigma;  // derangement of 0..B-1
};

struct JointSimilarity {
    NodeId s;     // B x B
    NodeId s_hn;  // B x 1, anchor i vs its perturbed tuple
};

struct LossBreakdown {
    double la = 0.0;
    double ld = 0.0;
    double lt = 0.0;
    double total = 0.0;
};

struct LossNodes {
    NodeId total;
    NodeId la;
    NodeId ld;
    NodeId lt;
    LossBreakdown values(const Graph& g) const;
};

// One direction: -(1/B) sum_i log softmax_i(anchor_i . target_j / tau)[j = i].
NodeId infonce(Graph& g, NodeId anchor, NodeId target, double tau);
// Mean of the two directions.
NodeId symmetric_infonce(Graph& g, NodeId x, NodeId y, double tau);

NodeId loss_la(Graph& g, const BatchEmbeddings& be, const LossConfig& cfg);
NodeId loss_ld(Graph& g, const BatchEmbeddings& be, const LossConfig& cfg);

// Slot shuffled at `step`: T, V, A, T, ...
Modality cycled_slot(std::size_t step);

// Uniform permutation of 0..n-1 without fixed points (rejection sampling).
std::vector<std::size_t> sample_derangement(std::size_t n, std::mt19937_64& rng);

HardNegativePlan make_hard_negative_plan(std::size_t step, std::size_t batch_size,
                                         std::mt19937_64& rng);

// Perturbed tuples: slot `plan.slot` of row i comes from row sigma(i); the other
// two slots are the anchor's own nodes.
TupleEmbeddings build_hard_negative(Graph& g, const TupleEmbeddings& anchor,
                                    const HardNegativePlan& plan);

// s(i,j) = (1/6) sum over ordered m != m' of z_i^(m) . z_j^(m').
JointSimilarity joint_similarity(Graph& g, const TupleEmbeddings& anchor,
                                 const TupleEmbeddings& perturbed);

NodeId loss_lt(Graph& g, const BatchEmbeddings& be, const HardNegativePlan& plan,
               const LossConfig& cfg);

LossNodes total_loss(Graph& g, const BatchEmbeddings& be, const HardNegativePlan& plan,
                     const LossConfig& cfg);

}  // namespace triret
