#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "oracles.hpp"
#include "triret/autodiff.hpp"

namespace testutil {

inline triret::Tensor to_tensor(const oracle::Mat& m) {
    triret::Tensor t(m.size(), m.empty() ? 0 : m[0].size());
    for (std::size_t i = 0; i < m.size(); ++i)
        for (std::size_t j = 0; j < m[i].size(); ++j) t(i, j) = m[i][j];
    return t;
}

inline oracle::Mat to_mat(const triret::Tensor& t) {
    oracle::Mat m(t.rows(), std::vector<double>(t.cols()));
    for (std::size_t i = 0; i < t.rows(); ++i)
        for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t(i, j);
    return m;
}

inline triret::Tensor random_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng, double sd = 1.0) {
    std::normal_distribution<double> g(0.0, sd);
    triret::Tensor t(r, c);
    for (double& v : t.data()) v = g(rng);
    return t;
}

inline triret::Tensor random_unit(std::size_t r, std::size_t c, std::mt19937_64& rng) {
    return to_tensor(oracle::random_unit_rows(r, c, rng));
}

// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path = std::filesystem::temp_directory_path() / ("triret_" + tag + "_" + std::to_string(rd()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
};

}  // namespace testutil
