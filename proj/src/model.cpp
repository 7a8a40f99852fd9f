#include "triret/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>

#include <fmt/format.h>

namespace triret {

char modality_letter(Modality m) {
    switch (m) {
        case Modality::T: return 'T';
        case Modality::V: return 'V';
        case Modality::A: return 'A';
    }
    return '?';
}

Modality modality_from_letter(char c) {
    switch (std::toupper(static_cast<unsigned char>(c))) {
        case 'T': return Modality::T;
        case 'V': return Modality::V;
        case 'A': return Modality::A;
        default: throw std::invalid_argument(fmt::format("unknown modality '{}'", c));
    }
}

void ModelConfig::validate() const {
    for (std::size_t d : input_dim) {
        if (d == 0) throw std::invalid_argument("model: input_dim must be >= 1");
    }
    if (hidden_dim == 0) throw std::invalid_argument("model: hidden_dim must be >= 1");
    if (embed_dim == 0) throw std::invalid_argument("model: embed_dim must be >= 1");
}

ParamGroup encoder_group(Modality m) {
    switch (m) {
        case Modality::T: return ParamGroup::encoder_t;
        case Modality::V: return ParamGroup::encoder_v;
        case Modality::A: return ParamGroup::encoder_a;
    }
    return ParamGroup::fusion;
}

const Tensor& ParameterSet::at(const std::string& name) const {
    for (const auto& t : tensors_) {
        if (t.name == name) return t.value;
    }
    throw std::out_of_range("no parameter named " + name);
}

Tensor& ParameterSet::at(const std::string& name) {
    return const_cast<Tensor&>(std::as_const(*this).at(name));
}

bool ParameterSet::contains(const std::string& name) const {
    return std::any_of(tensors_.begin(), tensors_.end(),
                       [&](const NamedTensor& t) { return t.name == name; });
}

std::size_t ParameterSet::parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.value.size();
    return n;
}

bool ParameterSet::all_finite() const {
    for (const auto& t : tensors_)
        for (double v : t.value.data())
            if (!std::isfinite(v)) return false;
    return true;
}

bool operator==(const ParameterSet& a, const ParameterSet& b) {
    if (a.tensors_.size() != b.tensors_.size()) return false;
    for (std::size_t i = 0; i < a.tensors_.size(); ++i) {
        const auto& x = a.tensors_[i];
        const auto& y = b.tensors_[i];
        if (x.name != y.name || x.group != y.group || !(x.value == y.value)) return false;
    }
    return true;
}

namespace {
std::string tag(Modality m) { return std::string(1, static_cast<char>(std::tolower(modality_letter(m)))); }
}  // namespace

std::string trunk_w1(Modality m) { return "enc." + tag(m) + ".w1"; }
std::string trunk_b1(Modality m) { return "enc." + tag(m) + ".b1"; }
std::string trunk_w2(Modality m) { return "enc." + tag(m) + ".w2"; }
std::string trunk_b2(Modality m) { return "enc." + tag(m) + ".b2"; }
std::string proj_w(Modality m) { return "enc." + tag(m) + ".proj_w"; }
std::string proj_b(Modality m) { return "enc." + tag(m) + ".proj_b"; }

ParameterSet init_params(const ModelConfig& config) {
    config.validate();
    std::mt19937_64 rng(config.seed);
    std::vector<NamedTensor> out;

    auto weight = [&](std::string name, ParamGroup group, std::size_t fan_in, std::size_t fan_out) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        Tensor w(fan_in, fan_out);
        // Single-precision representable, so checkpoints reproduce the init exactly.
        for (double& v : w.data()) {
            float f = static_cast<float>(dist(rng));
            if (std::abs(static_cast<double>(f)) > bound) f = std::nextafter(f, 0.0f);
            v = f;
        }
        out.push_back({std::move(name), group, std::move(w)});
    };
    auto bias = [&](std::string name, ParamGroup group, std::size_t width) {
        out.push_back({std::move(name), group, Tensor(1, width)});
    };

    const std::size_t h = config.hidden_dim;
    const std::size_t d = config.embed_dim;
    for (Modality m : kModalities) {
        const ParamGroup g = encoder_group(m);
        weight(trunk_w1(m), g, config.input_dim[index_of(m)], h);
        bias(trunk_b1(m), g, h);
        weight(trunk_w2(m), g, h, h);
        bias(trunk_b2(m), g, h);
        weight(proj_w(m), g, h, d);
        bias(proj_b(m), g, d);
    }
    weight(kFusionW1, ParamGroup::fusion, h, h);
    bias(kFusionB1, ParamGroup::fusion, h);
    weight(kFusionW2, ParamGroup::fusion, h, d);
    bias(kFusionB2, ParamGroup::fusion, d);
    return ParameterSet(std::move(out));
}

ModelGraph::ModelGraph(Graph& graph, const ModelConfig& config, const ParameterSet& params)
    : graph_(graph), config_(config) {
    config_.validate();
    for (const auto& t : params.tensors()) {
        params_.emplace_back(t.name, graph_.input(t.name, t.value));
    }
}

NodeId ModelGraph::param(const std::string& name) const {
    for (const auto& [n, id] : params_) {
        if (n == name) return id;
    }
    throw std::out_of_range("no parameter named " + name);
}

NodeId ModelGraph::linear(NodeId x, const std::string& w, const std::string& b) {
    return graph_.add(graph_.matmul(x, param(w)), param(b));
}

void ModelGraph::check_input(Modality m, NodeId x) const {
    if (!graph_.has_value(x)) return;
    const std::size_t expected = config_.input_dim[index_of(m)];
    if (graph_.value(x).cols() != expected) {
        throw std::invalid_argument(fmt::format("modality {}: expected input dim {}, got {}",
                                                modality_letter(m), expected,
                                                graph_.value(x).cols()));
    }
}

NodeId ModelGraph::trunk(Modality m, NodeId x) {
    check_input(m, x);
    NodeId h = graph_.gelu(linear(x, trunk_w1(m), trunk_b1(m)));
    return graph_.gelu(linear(h, trunk_w2(m), trunk_b2(m)));
}

NodeId ModelGraph::encode_modality(Modality m, NodeId x) {
    ++forward_count_;
    return graph_.l2_normalize(linear(trunk(m, x), proj_w(m), proj_b(m)));
}

NodeId ModelGraph::encode_subset(std::span<const Modality> present, std::span<const NodeId> xs) {
    if (present.empty()) throw std::invalid_argument("encode_subset: empty modality subset");
    if (present.size() != xs.size()) {
        throw std::invalid_argument("encode_subset: one input per present modality required");
    }
    // Canonical T < V < A order keeps pooling bitwise independent of argument order.
    std::vector<std::pair<Modality, NodeId>> items;
    for (std::size_t i = 0; i < present.size(); ++i) items.emplace_back(present[i], xs[i]);
    std::sort(items.begin(), items.end());
    for (std::size_t i = 1; i < items.size(); ++i) {
        if (items[i].first == items[i - 1].first) {
            throw std::invalid_argument("encode_subset: modality listed twice");
        }
    }
    std::optional<std::size_t> batch;
    for (const auto& [m, x] : items) {
        if (!graph_.has_value(x)) continue;
        const std::size_t rows = graph_.value(x).rows();
        if (batch && *batch != rows) {
            throw std::invalid_argument(
                fmt::format("encode_subset: batch size mismatch {} vs {}", *batch, rows));
        }
        batch = rows;
    }

    ++forward_count_;
    NodeId pooled = trunk(items[0].first, items[0].second);
    for (std::size_t i = 1; i < items.size(); ++i) {
        pooled = graph_.add(pooled, trunk(items[i].first, items[i].second));
    }
    if (items.size() > 1) pooled = graph_.scale(pooled, 1.0 / static_cast<double>(items.size()));
    NodeId h = graph_.gelu(linear(pooled, kFusionW1, kFusionB1));
    return graph_.l2_normalize(linear(h, kFusionW2, kFusionB2));
}

Tensor encode_modality(const ModelConfig& config, const ParameterSet& params, Modality m,
                       const Tensor& x) {
    Graph g;
    ModelGraph mg(g, config, params);
    return g.value(mg.encode_modality(m, g.input("x", x)));
}

Tensor encode_subset(const ModelConfig& config, const ParameterSet& params,
                     std::span<const Modality> present, std::span<const Tensor> xs) {
    if (present.size() != xs.size()) {
        throw std::invalid_argument("encode_subset: one input per present modality required");
    }
    Graph g;
    ModelGraph mg(g, config, params);
    std::vector<NodeId> ids;
    for (std::size_t i = 0; i < xs.size(); ++i) ids.push_back(g.input(fmt::format("x{}", i), xs[i]));
    return g.value(mg.encode_subset(present, ids));
}

}  // namespace triret
