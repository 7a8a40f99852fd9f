#include "triret/synthetic_data.hpp"

#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>

namespace triret {

void GenConfig::validate() const {
    if (n_samples() < 2) throw std::invalid_argument("gen: need at least 2 samples");
    if (n_train == 0 || n_eval == 0) throw std::invalid_argument("gen: both splits must be nonempty");
    if (latent_dim == 0) throw std::invalid_argument("gen: latent_dim must be >= 1");
    for (std::size_t m = 0; m < 3; ++m) {
        if (input_dim[m] == 0) throw std::invalid_argument("gen: input_dim must be >= 1");
        if (!(noise_sigma[m] >= 0.0)) throw std::invalid_argument("gen: noise_sigma must be >= 0");
        if (!(coupling[m] >= 0.0 && coupling[m] <= 1.0)) {
            throw std::invalid_argument("gen: coupling must lie in [0, 1]");
        }
    }
}

TripleSample Split::sample(std::size_t i) const {
    if (i >= size()) throw std::out_of_range(fmt::format("sample {} of {}", i, size()));
    TripleSample s;
    s.sample_id = ids[i];
    for (std::size_t m = 0; m < 3; ++m) s.x[m].assign(x[m].row(i).begin(), x[m].row(i).end());
    return s;
}

TripleBatch Split::gather(std::span<const std::size_t> rows) const {
    TripleBatch b;
    for (std::size_t m = 0; m < 3; ++m) {
        b.x[m] = Tensor(rows.size(), x[m].cols());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            if (rows[r] >= size()) throw std::out_of_range("batch row out of range");
            auto src = x[m].row(rows[r]);
            std::copy(src.begin(), src.end(), b.x[m].row(r).begin());
        }
    }
    for (std::size_t r : rows) b.ids.push_back(ids[r]);
    return b;
}

TripleBatch Split::all() const {
    std::vector<std::size_t> rows(size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    return gather(rows);
}

Corpus generate_corpus(const GenConfig& config) {
    config.validate();
    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    std::array<Tensor, 3> proj;
    const double w_scale = 1.0 / std::sqrt(static_cast<double>(config.latent_dim));
    for (std::size_t m = 0; m < 3; ++m) {
        proj[m] = Tensor(config.input_dim[m], config.latent_dim);
        for (double& w : proj[m].data()) w = normal(rng) * w_scale;
    }

    auto make_split = [&](std::size_t n, std::int64_t first_id) {
        Split s;
        for (std::size_t m = 0; m < 3; ++m) s.x[m] = Tensor(n, config.input_dim[m]);
        std::vector<double> u(config.latent_dim);
        for (std::size_t i = 0; i < n; ++i) {
            for (double& v : u) v = normal(rng);
            for (std::size_t m = 0; m < 3; ++m) {
                auto row = s.x[m].row(i);
                for (std::size_t j = 0; j < row.size(); ++j) {
                    double signal = 0.0;
                    for (std::size_t k = 0; k < u.size(); ++k) signal += proj[m](j, k) * u[k];
                    // Stored at single precision so corpus files round-trip exactly.
                    row[j] = static_cast<float>(config.coupling[m] * signal +
                                                config.noise_sigma[m] * normal(rng));
                }
            }
            s.ids.push_back(first_id + static_cast<std::int64_t>(i));
        }
        return s;
    };

    Corpus c{.config = config};
    c.train = make_split(config.n_train, 0);
    c.eval = make_split(config.n_eval, static_cast<std::int64_t>(config.n_train));
    return c;
}

}  // namespace triret
