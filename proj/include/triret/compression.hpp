#pragma once

// Post-hoc compression of pool embeddings: dimension selection (random or
// front) followed by fp32, symmetric int8, or sign-bit storage, then
// re-evaluation of the 12 retrieval directions.

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "triret/retrieval.hpp"

namespace triret {

enum class DimSelect : std::uint8_t { none, random, front };
enum class Quantization : std::uint8_t { fp32, int8, binary };

struct CompressionSpec {
    DimSelect select = DimSelect::none;
    std::size_t k = 0;  // target dimension; ignored for `none`
    Quantization quant = Quantization::fp32;
    std::uint64_t seed = 0;  // dimension-sampling seed for `random`

    // "<none|random|front>:<k>:<fp32|int8|binary>", e.g. "random:16:int8".
    static CompressionSpec parse(const std::string& text);
    std::string str() const;
    friend bool operator==(const CompressionSpec&, const CompressionSpec&) = default;
};

// Column indices kept by `spec` from a d-dimensional embedding (ascending).
// One spec yields one index set, shared by query and gallery.
std::vector<std::size_t> selected_dims(const CompressionSpec& spec, std::size_t d);

// N x d -> N x k. `none` returns the input unchanged; otherwise rows are
// re-normalized unless `renormalize` is false (zero rows stay zero).
Tensor select_dims(const Tensor& e, const CompressionSpec& spec, bool renormalize = true);

struct Int8Codes {
    std::size_t rows = 0;
    std::size_t dim = 0;
    std::vector<std::int8_t> codes;  // rows * dim
    std::vector<double> scales;      // per row, max|x| / 127
    std::size_t zero_rows = 0;       // rows with scale 0 (all-zero input)

    std::size_t code_bytes_per_vector() const { return dim * sizeof(std::int8_t); }
};

Int8Codes quantize_int8(const Tensor& e);
Tensor dequantize(const Int8Codes& q);

struct BinaryCodes {
    std::size_t rows = 0;
    std::size_t dim = 0;             // bits per row, multiple of 8
    std::vector<std::uint8_t> bits;  // rows * dim / 8, MSB-first within a byte

    std::size_t bytes_per_vector() const { return dim / 8; }
    std::span<const std::uint8_t> row(std::size_t r) const {
        return {bits.data() + r * bytes_per_vector(), bytes_per_vector()};
    }
};

// bit_j = x_j >= 0. Requires dim % 8 == 0.
BinaryCodes binarize(const Tensor& e);
// k - 2 * popcount(a XOR b), in [-k, k].
int hamming_similarity(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b, std::size_t k);
Tensor hamming_scores(const BinaryCodes& queries, const BinaryCodes& gallery);

// One compressed view: the retained dimensions plus its stored form.
struct CompressedView {
    std::vector<std::size_t> dims;
    std::variant<Tensor, Int8Codes, BinaryCodes> data;  // fp32 | int8 | binary
};

CompressedView compress_view(const Tensor& e, const CompressionSpec& spec);
Tensor compressed_scores(const CompressedView& queries, const CompressedView& gallery);

struct CompressedReport {
    CompressionSpec spec;
    std::vector<std::uint64_t> dim_seeds;
    RetrievalReport mean;
    // Sample std over dim seeds, same layout as `mean`.
    RetrievalReport stddev;
    std::vector<RetrievalReport> per_seed;
};

inline constexpr std::size_t kCompressionSeeds = 5;

// Seeds spec.seed, spec.seed + 1, ... ; every view uses the same index set per seed.
CompressedReport evaluate_compressed(const ViewSet& views, const CompressionSpec& spec,
                                     std::size_t seeds = kCompressionSeeds,
                                     std::span<const std::size_t> ks = kDefaultKs);
CompressedReport evaluate_compressed(const ModelConfig& config, const ParameterSet& params,
                                     const Split& pool, const CompressionSpec& spec,
                                     std::size_t seeds = kCompressionSeeds,
                                     std::span<const std::size_t> ks = kDefaultKs);

// Mean and sample std of reports sharing ks, n and direction order.
// The mean of identical reports reproduces them exactly.
RetrievalReport mean_report(std::span<const RetrievalReport> reports);
RetrievalReport std_report(std::span<const RetrievalReport> reports);

}  // namespace triret
