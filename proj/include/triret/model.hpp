#pragma once

// Toy tri-modal encoder. Each modality has a two-layer GELU trunk followed by
// its own linear projection; subset fusion mean-pools trunk features of the
// present modalities and runs them through a shared two-layer fusion head.
// Every embedding is L2-normalized.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "triret/autodiff.hpp"

namespace triret {

enum class Modality : std::uint8_t { T = 0, V = 1, A = 2 };

inline constexpr std::array<Modality, 3> kModalities{Modality::T, Modality::V, Modality::A};

inline std::size_t index_of(Modality m) { return static_cast<std::size_t>(m); }
char modality_letter(Modality m);        // 'T', 'V', 'A'
Modality modality_from_letter(char c);   // case-insensitive

enum class Activation : std::uint8_t { gelu };

struct ModelConfig {
    std::array<std::size_t, 3> input_dim{16, 16, 16};  // indexed by Modality
    std::size_t hidden_dim = 64;
    std::size_t embed_dim = 32;
    Activation activation = Activation::gelu;
    std::uint64_t seed = 42;

    void validate() const;
    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Which part of the network a tensor belongs to.
enum class ParamGroup : std::uint8_t { encoder_t, encoder_v, encoder_a, fusion };

ParamGroup encoder_group(Modality m);

struct NamedTensor {
    std::string name;
    ParamGroup group;
    Tensor value;
};

class ParameterSet {
public:
    ParameterSet() = default;
    explicit ParameterSet(std::vector<NamedTensor> tensors) : tensors_(std::move(tensors)) {}

    std::span<const NamedTensor> tensors() const { return tensors_; }
    std::span<NamedTensor> tensors() { return tensors_; }
    std::size_t size() const { return tensors_.size(); }

    const Tensor& at(const std::string& name) const;
    Tensor& at(const std::string& name);
    bool contains(const std::string& name) const;

    std::size_t parameter_count() const;
    bool all_finite() const;

    friend bool operator==(const ParameterSet& a, const ParameterSet& b);

private:
    std::vector<NamedTensor> tensors_;
};

// Canonical tensor names. Encoder groups hold the trunk and projection.
std::string trunk_w1(Modality m);
std::string trunk_b1(Modality m);
std::string trunk_w2(Modality m);
std::string trunk_b2(Modality m);
std::string proj_w(Modality m);
std::string proj_b(Modality m);
inline const std::string kFusionW1 = "fusion.w1";
inline const std::string kFusionB1 = "fusion.b1";
inline const std::string kFusionW2 = "fusion.w2";
inline const std::string kFusionB2 = "fusion.b2";

// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero. Deterministic per seed.
ParameterSet init_params(const ModelConfig& config);

// Binds a ParameterSet into a Graph as named inputs and builds encoder
// forwards on top of it. Counts encoder passes (one per encode_* call).
class ModelGraph {
public:
    ModelGraph(Graph& graph, const ModelConfig& config, const ParameterSet& params);

    // B x input_dim[m] -> B x d, unit rows.
    NodeId encode_modality(Modality m, NodeId x);
    // Nonempty subset with one input per present modality (same order).
    NodeId encode_subset(std::span<const Modality> present, std::span<const NodeId> xs);

    NodeId param(const std::string& name) const;
    int forward_count() const { return forward_count_; }
    Graph& graph() { return graph_; }

private:
    NodeId trunk(Modality m, NodeId x);
    NodeId linear(NodeId x, const std::string& w, const std::string& b);
    void check_input(Modality m, NodeId x) const;

    Graph& graph_;
    ModelConfig config_;
    std::vector<std::pair<std::string, NodeId>> params_;
    int forward_count_ = 0;
};

// Eager helpers over plain tensors.
Tensor encode_modality(const ModelConfig& config, const ParameterSet& params, Modality m,
                       const Tensor& x);
Tensor encode_subset(const ModelConfig& config, const ParameterSet& params,
                     std::span<const Modality> present, std::span<const Tensor> xs);

}  // namespace triret
