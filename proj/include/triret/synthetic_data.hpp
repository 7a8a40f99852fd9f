#pragma once

// Synthetic tri-modal corpora. Each sample draws a latent u ~ N(0, I) and
// emits x_m = coupling_m * (W_m u) + noise_m * eps for m in {T, V, A}, with a
// fixed random projection W_m per modality. Lower audio coupling and higher
// audio noise give the weak-audio regime used by default.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "triret/autodiff.hpp"
#include "triret/model.hpp"

namespace triret {

struct GenConfig {
    std::size_t n_train = 2048;
    std::size_t n_eval = 256;
    std::size_t latent_dim = 8;
    std::array<std::size_t, 3> input_dim{16, 16, 16};
    std::array<double, 3> noise_sigma{0.1, 0.1, 0.3};
    std::array<double, 3> coupling{1.0, 1.0, 0.4};
    std::uint64_t seed = 42;

    std::size_t n_samples() const { return n_train + n_eval; }
    void validate() const;
    friend bool operator==(const GenConfig&, const GenConfig&) = default;
};

struct TripleSample {
    std::array<std::vector<double>, 3> x;  // indexed by Modality
    std::int64_t sample_id = 0;
};

// A batch of B triples: one B x input_dim matrix per modality.
struct TripleBatch {
    std::array<Tensor, 3> x;
    std::vector<std::int64_t> ids;

    std::size_t size() const { return ids.size(); }
    const Tensor& of(Modality m) const { return x[index_of(m)]; }
};

// Column-major-by-modality storage of one split.
struct Split {
    std::array<Tensor, 3> x;
    std::vector<std::int64_t> ids;

    std::size_t size() const { return ids.size(); }
    const Tensor& of(Modality m) const { return x[index_of(m)]; }
    TripleSample sample(std::size_t i) const;
    TripleBatch gather(std::span<const std::size_t> rows) const;
    TripleBatch all() const;
};

struct Corpus {
    GenConfig config;
    Split train;
    Split eval;
};

Corpus generate_corpus(const GenConfig& config);

}  // namespace triret
