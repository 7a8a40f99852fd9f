#include "triret/objectives.hpp"

#include <numeric>

#include <fmt/format.h>

namespace triret {

void LossConfig::validate() const {
    if (!(tau > 0.0)) throw std::invalid_argument("loss: tau must be > 0");
    if (!(tau_t > 0.0)) throw std::invalid_argument("loss: tau_t must be > 0");
    if (lambda_d < 0.0 || lambda_t < 0.0 || lambda_a < 0.0) {
        throw std::invalid_argument("loss: lambdas must be >= 0");
    }
}

NodeId TupleEmbeddings::of(Modality m) const {
    switch (m) {
        case Modality::T: return t;
        case Modality::V: return v;
        case Modality::A: return a;
    }
    return t;
}

LossBreakdown LossNodes::values(const Graph& g) const {
    return {g.value(la).item(), g.value(ld).item(), g.value(lt).item(), g.value(total).item()};
}

namespace {

std::size_t batch_rows(const Graph& g, NodeId x) { return g.value(x).rows(); }

void require_same_shape(const Graph& g, const char* op, NodeId a, NodeId b) {
    if (g.has_value(a) && g.has_value(b) && !g.value(a).same_shape(g.value(b))) {
        throw ShapeError(op, g.value(a), g.value(b));
    }
}

// Row-wise dot products: B x 1.
NodeId row_dots(Graph& g, NodeId a, NodeId b) { return g.sum_rows(g.multiply(a, b)); }

}  // namespace

NodeId infonce(Graph& g, NodeId anchor, NodeId target, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("infonce: tau must be > 0");
    require_same_shape(g, "infonce", anchor, target);
    if (g.has_value(anchor) && batch_rows(g, anchor) == 0) {
        throw std::invalid_argument("infonce: empty batch");
    }
    const double inv = 1.0 / tau;
    NodeId logits = g.scale(g.matmul(anchor, g.transpose(target)), inv);
    NodeId positive = g.scale(row_dots(g, anchor, target), inv);
    return g.mean(g.sub(g.logsumexp_rows(logits), positive));
}

NodeId symmetric_infonce(Graph& g, NodeId x, NodeId y, double tau) {
    return g.scale(g.add(infonce(g, x, y, tau), infonce(g, y, x, tau)), 0.5);
}

NodeId loss_la(Graph& g, const BatchEmbeddings& be, const LossConfig& cfg) {
    NodeId total = symmetric_infonce(g, be.single.of(kPairSet[0].first),
                                     be.single.of(kPairSet[0].second), cfg.tau);
    for (std::size_t p = 1; p < kPairSet.size(); ++p) {
        total = g.add(total, symmetric_infonce(g, be.single.of(kPairSet[p].first),
                                               be.single.of(kPairSet[p].second), cfg.tau));
    }
    return total;
}

NodeId loss_ld(Graph& g, const BatchEmbeddings& be, const LossConfig& cfg) {
    NodeId teacher = g.stop_gradient(be.tva);
    NodeId total = symmetric_infonce(g, be.single.t, teacher, cfg.tau);
    total = g.add(total, symmetric_infonce(g, be.single.v, teacher, cfg.tau));
    total = g.add(total, symmetric_infonce(g, be.single.a, teacher, cfg.tau));
    return g.scale(total, 1.0 / 3.0);
}

Modality cycled_slot(std::size_t step) { return kModalities[step % kModalities.size()]; }

std::vector<std::size_t> sample_derangement(std::size_t n, std::mt19937_64& rng) {
    if (n < 2) throw std::invalid_argument(fmt::format("derangement undefined for n = {}", n));
    std::vector<std::size_t> perm(n);
    for (;;) {
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        // Fisher-Yates with an explicit uniform draw per position.
        for (std::size_t i = n - 1; i > 0; --i) {
            std::uniform_int_distribution<std::size_t> pick(0, i);
            std::swap(perm[i], perm[pick(rng)]);
        }
        bool fixed = false;
        for (std::size_t i = 0; i < n && !fixed; ++i) fixed = perm[i] == i;
        if (!fixed) return perm;
    }
}

HardNegativePlan make_hard_negative_plan(std::size_t step, std::size_t batch_size,
                                         std::mt19937_64& rng) {
    return {step, cycled_slot(step), sample_derangement(batch_size, rng)};
}

TupleEmbeddings build_hard_negative(Graph& g, const TupleEmbeddings& anchor,
                                    const HardNegativePlan& plan) {
    const NodeId source = anchor.of(plan.slot);
    if (g.has_value(source) && g.value(source).rows() != plan.sigma.size()) {
        throw std::invalid_argument(fmt::format("hard negative: sigma of size {} for batch of {}",
                                                plan.sigma.size(), g.value(source).rows()));
    }
    for (std::size_t i = 0; i < plan.sigma.size(); ++i) {
        if (plan.sigma[i] == i) throw std::invalid_argument("hard negative: sigma has a fixed point");
    }
    TupleEmbeddings out = anchor;
    const NodeId shuffled = g.gather_rows(source, plan.sigma);
    switch (plan.slot) {
        case Modality::T: out.t = shuffled; break;
        case Modality::V: out.v = shuffled; break;
        case Modality::A: out.a = shuffled; break;
    }
    return out;
}

JointSimilarity joint_similarity(Graph& g, const TupleEmbeddings& anchor,
                                 const TupleEmbeddings& perturbed) {
    for (Modality m : kModalities) {
        require_same_shape(g, "joint_similarity", anchor.of(m), anchor.t);
        require_same_shape(g, "joint_similarity", perturbed.of(m), anchor.t);
    }
    std::optional<NodeId> grid;
    std::optional<NodeId> hard;
    for (Modality m : kModalities) {
        for (Modality n : kModalities) {
            if (m == n) continue;
            NodeId cross = g.matmul(anchor.of(m), g.transpose(anchor.of(n)));
            NodeId hn = row_dots(g, anchor.of(m), perturbed.of(n));
            grid = grid ? g.add(*grid, cross) : cross;
            hard = hard ? g.add(*hard, hn) : hn;
        }
    }
    constexpr double kPairs = 6.0;  // M (M - 1) with M = 3
    return {g.scale(*grid, 1.0 / kPairs), g.scale(*hard, 1.0 / kPairs)};
}

NodeId loss_lt(Graph& g, const BatchEmbeddings& be, const HardNegativePlan& plan,
               const LossConfig& cfg) {
    if (!(cfg.tau_t > 0.0)) throw std::invalid_argument("loss_lt: tau_t must be > 0");
    if (g.has_value(be.single.t) && batch_rows(g, be.single.t) < 2) {
        throw std::invalid_argument("loss_lt: batch size must be >= 2");
    }
    const TupleEmbeddings perturbed = build_hard_negative(g, be.single, plan);
    const JointSimilarity js = joint_similarity(g, be.single, perturbed);

    // Positive s(i,i), computed with the same summation order as the grid diagonal.
    std::optional<NodeId> diag;
    for (Modality m : kModalities) {
        for (Modality n : kModalities) {
            if (m == n) continue;
            NodeId d = row_dots(g, be.single.of(m), be.single.of(n));
            diag = diag ? g.add(*diag, d) : d;
        }
    }
    const double inv = 1.0 / cfg.tau_t;
    NodeId positive = g.scale(g.scale(*diag, 1.0 / 6.0), inv);
    NodeId logits = g.scale(g.concat_cols(js.s, js.s_hn), inv);
    return g.mean(g.sub(g.logsumexp_rows(logits), positive));
}

LossNodes total_loss(Graph& g, const BatchEmbeddings& be, const HardNegativePlan& plan,
                     const LossConfig& cfg) {
    cfg.validate();
    LossNodes out{};
    out.la = loss_la(g, be, cfg);
    out.ld = loss_ld(g, be, cfg);
    out.lt = loss_lt(g, be, plan, cfg);
    NodeId weighted = g.add(g.scale(out.ld, cfg.lambda_d), g.scale(out.lt, cfg.lambda_t));
    out.total = g.add(weighted, g.scale(out.la, cfg.lambda_a));
    return out;
}

}  // namespace triret
