#include "triret/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>

#include <fmt/format.h>

namespace triret {

void OptimizerConfig::validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("optim: lr must be > 0");
    if (batch_size < 2) throw std::invalid_argument("optim: batch_size must be >= 2");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw std::invalid_argument("optim: betas must lie in [0, 1)");
    }
    if (!(eps > 0.0)) throw std::invalid_argument("optim: eps must be > 0");
    if (weight_decay < 0.0) throw std::invalid_argument("optim: weight_decay must be >= 0");
    if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
        throw std::invalid_argument("optim: warmup_fraction must lie in [0, 1)");
    }
}

double OptimizerConfig::lr_at(std::size_t step) const {
    if (schedule == LrSchedule::constant || steps == 0) return lr;
    const auto warmup = static_cast<std::size_t>(std::floor(warmup_fraction * static_cast<double>(steps)));
    if (step < warmup) return lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
    const double span = static_cast<double>(std::max<std::size_t>(steps - warmup, 1));
    const double progress = std::min(1.0, static_cast<double>(step - warmup) / span);
    return lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void optimizer_step(ParameterSet& params, const Gradients& grads, const OptimizerConfig& cfg,
                    OptimizerState& state, double lr) {
    auto tensors = params.tensors();
    for (const auto& [name, g] : grads) {
        if (!params.contains(name)) throw std::invalid_argument("gradient for unknown parameter " + name);
        if (!g.same_shape(params.at(name))) throw ShapeError("optimizer_step " + name, params.at(name), g);
    }
    if (cfg.kind == OptimizerKind::adam && state.m.empty()) {
        for (const auto& t : tensors) {
            state.m.emplace_back(t.value.rows(), t.value.cols());
            state.v.emplace_back(t.value.rows(), t.value.cols());
        }
    }
    ++state.t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));

    for (std::size_t p = 0; p < tensors.size(); ++p) {
        auto it = grads.find(tensors[p].name);
        auto theta = tensors[p].value.data();
        if (cfg.kind == OptimizerKind::sgd) {
            if (it == grads.end()) continue;
            auto g = it->second.data();
            for (std::size_t k = 0; k < theta.size(); ++k) theta[k] -= lr * g[k];
            continue;
        }
        auto m = state.m[p].data();
        auto v = state.v[p].data();
        for (std::size_t k = 0; k < theta.size(); ++k) {
            const double g = it == grads.end() ? 0.0 : it->second.data()[k];
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
            const double update = (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg.eps);
            theta[k] -= lr * (update + cfg.weight_decay * theta[k]);
        }
    }
}

StepResult train_step(ParameterSet& params, const ModelConfig& model, const TripleBatch& batch,
                      std::size_t step, const LossConfig& loss, const OptimizerConfig& opt,
                      OptimizerState& state, std::mt19937_64& derangement_rng) {
    if (batch.size() < 2) throw std::invalid_argument("train_step: batch size must be >= 2");
    Graph g;
    ModelGraph mg(g, model, params);
    const NodeId xt = g.input("x.t", batch.of(Modality::T));
    const NodeId xv = g.input("x.v", batch.of(Modality::V));
    const NodeId xa = g.input("x.a", batch.of(Modality::A));

    BatchEmbeddings be{};
    be.single.t = mg.encode_modality(Modality::T, xt);
    be.single.v = mg.encode_modality(Modality::V, xv);
    be.single.a = mg.encode_modality(Modality::A, xa);
    const std::array<NodeId, 3> joint_inputs{xt, xv, xa};
    be.tva = mg.encode_subset(kModalities, joint_inputs);

    const HardNegativePlan plan = make_hard_negative_plan(step, batch.size(), derangement_rng);
    const LossNodes nodes = total_loss(g, be, plan, loss);

    Gradients grads = g.backprop(nodes.total);
    for (const std::string name : {"x.t", "x.v", "x.a"}) grads.erase(name);
    optimizer_step(params, grads, opt, state, opt.lr_at(step));
    // Parameters live at single precision between steps (the checkpoint dtype);
    // all arithmetic inside a step is double.
    for (auto& t : params.tensors()) {
        for (double& v : t.value.data()) v = static_cast<float>(v);
    }

    return {{step, plan.slot, nodes.values(g)}, mg.forward_count()};
}

TrainRunRecord run_training(const Split& train, const ModelConfig& model, const LossConfig& loss,
                            const OptimizerConfig& opt, const ParameterSet& initial) {
    model.validate();
    loss.validate();
    opt.validate();
    if (train.size() < opt.batch_size) {
        throw std::invalid_argument(fmt::format("training split of {} is smaller than batch size {}",
                                                train.size(), opt.batch_size));
    }
    const auto start = std::chrono::steady_clock::now();

    std::seed_seq data_seq{opt.seed, std::uint64_t{1}};
    std::seed_seq hn_seq{opt.seed, std::uint64_t{2}};
    std::mt19937_64 data_rng(data_seq);
    std::mt19937_64 hn_rng(hn_seq);

    TrainRunRecord record{.model = model, .loss = loss, .optim = opt, .history = {}, .params = initial};
    OptimizerState state;
    std::vector<std::size_t> order(train.size());
    const std::size_t per_epoch = train.size() / opt.batch_size;
    std::size_t cursor = per_epoch;  // forces a shuffle before the first batch

    for (std::size_t step = 0; step < opt.steps; ++step) {
        if (cursor == per_epoch) {
            std::iota(order.begin(), order.end(), std::size_t{0});
            for (std::size_t i = order.size() - 1; i > 0; --i) {
                std::uniform_int_distribution<std::size_t> pick(0, i);
                std::swap(order[i], order[pick(data_rng)]);
            }
            cursor = 0;
        }
        const std::span<const std::size_t> rows(order.data() + cursor * opt.batch_size, opt.batch_size);
        ++cursor;
        const TripleBatch batch = train.gather(rows);
        StepResult r = train_step(record.params, model, batch, step, loss, opt, state, hn_rng);
        record.history.push_back(r.record);
    }
    record.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return record;
}

std::string history_csv(const std::vector<StepRecord>& history) {
    std::string out = "step,slot,L_A,L_D,L_T,total\n";
    for (const auto& h : history) {
        out += fmt::format("{},{},{:.17g},{:.17g},{:.17g},{:.17g}\n", h.step, modality_letter(h.slot),
                           h.loss.la, h.loss.ld, h.loss.lt, h.loss.total);
    }
    return out;
}

}  // namespace triret
