#include "triret/gradcheck.hpp"

#include <random>

#include "triret/model.hpp"

namespace triret {

std::vector<LossCheckResult> check_loss_gradients(const LossCheckConfig& cfg) {
    std::vector<LossCheckResult> results;
    for (const char* name : {"L_A", "L_D", "L_T", "total"}) {
        LossCheckResult r;
        r.loss = name;
        results.push_back(r);
    }
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> weight(0.5, 2.0);

    for (std::size_t inst = 0; inst < cfg.instances; ++inst) {
        ModelConfig model;
        model.input_dim = {cfg.input_dim, cfg.input_dim, cfg.input_dim};
        model.hidden_dim = cfg.hidden_dim;
        model.embed_dim = cfg.embed_dim;
        model.seed = rng();
        ParameterSet params = init_params(model);
        // Nonzero biases so every term of the affine maps is exercised.
        for (auto& t : params.tensors()) {
            if (t.value.rows() == 1) {
                for (double& v : t.value.data()) v = 0.1 * normal(rng);
            }
        }
        LossConfig loss{.tau = cfg.tau, .tau_t = cfg.tau_t,
                        .lambda_d = weight(rng), .lambda_t = weight(rng), .lambda_a = weight(rng)};

        Graph g;
        ModelGraph mg(g, model, params);
        std::array<NodeId, 3> xs{};
        for (Modality m : kModalities) {
            Tensor x(cfg.batch, cfg.input_dim);
            for (double& v : x.data()) v = normal(rng);
            xs[index_of(m)] = g.input(std::string("x.") + modality_letter(m), x);
        }
        BatchEmbeddings be{};
        be.single.t = mg.encode_modality(Modality::T, xs[0]);
        be.single.v = mg.encode_modality(Modality::V, xs[1]);
        be.single.a = mg.encode_modality(Modality::A, xs[2]);
        be.tva = mg.encode_subset(kModalities, xs);
        const HardNegativePlan plan = make_hard_negative_plan(inst, cfg.batch, rng);
        const LossNodes nodes = total_loss(g, be, plan, loss);

        std::vector<std::string> names;
        for (const auto& t : params.tensors()) names.push_back(t.name);
        const std::array<NodeId, 4> roots{nodes.la, nodes.ld, nodes.lt, nodes.total};
        for (std::size_t r = 0; r < roots.size(); ++r) {
            const GradCheckReport rep = grad_check(g, roots[r], cfg.tolerance, 1e-5, names);
            if (rep.max_rel_error >= results[r].max_rel_error) {
                results[r].max_rel_error = rep.max_rel_error;
                results[r].worst_param = rep.worst_input;
            }
        }
    }
    for (auto& r : results) r.passed = r.max_rel_error <= cfg.tolerance;
    return results;
}

}  // namespace triret
