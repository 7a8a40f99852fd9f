#include "triret/compression.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>

namespace triret {

CompressionSpec CompressionSpec::parse(const std::string& text) {
    const auto a = text.find(':');
    const auto b = text.find(':', a == std::string::npos ? a : a + 1);
    if (a == std::string::npos || b == std::string::npos) {
        throw std::invalid_argument("compression spec must look like select:k:quant, got '" + text + "'");
    }
    const std::string select = text.substr(0, a);
    const std::string k = text.substr(a + 1, b - a - 1);
    const std::string quant = text.substr(b + 1);

    CompressionSpec spec;
    if (select == "none") spec.select = DimSelect::none;
    else if (select == "random") spec.select = DimSelect::random;
    else if (select == "front") spec.select = DimSelect::front;
    else throw std::invalid_argument("unknown dimension selection '" + select + "'");

    if (quant == "fp32") spec.quant = Quantization::fp32;
    else if (quant == "int8") spec.quant = Quantization::int8;
    else if (quant == "binary") spec.quant = Quantization::binary;
    else throw std::invalid_argument("unknown quantization '" + quant + "'");

    std::size_t pos = 0;
    if (k.empty() || !std::isdigit(static_cast<unsigned char>(k[0]))) {
        throw std::invalid_argument("bad target dimension '" + k + "'");
    }
    try {
        spec.k = std::stoul(k, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (k.empty() || pos != k.size()) throw std::invalid_argument("bad target dimension '" + k + "'");
    return spec;
}

std::string CompressionSpec::str() const {
    constexpr const char* sel[] = {"none", "random", "front"};
    constexpr const char* qn[] = {"fp32", "int8", "binary"};
    return fmt::format("{}:{}:{}", sel[static_cast<int>(select)], k, qn[static_cast<int>(quant)]);
}

std::vector<std::size_t> selected_dims(const CompressionSpec& spec, std::size_t d) {
    std::vector<std::size_t> idx(d);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (spec.select == DimSelect::none) return idx;
    if (spec.k > d) throw std::invalid_argument(fmt::format("target dimension {} exceeds {}", spec.k, d));
    if (spec.k == 0) throw std::invalid_argument("target dimension must be >= 1");
    if (spec.select == DimSelect::front) {
        idx.resize(spec.k);
        return idx;
    }
    // Partial Fisher-Yates: the first k entries are a uniform sample without replacement.
    std::mt19937_64 rng(spec.seed);
    for (std::size_t i = 0; i < spec.k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, d - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(spec.k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

Tensor select_dims(const Tensor& e, const CompressionSpec& spec, bool renormalize) {
    if (spec.select == DimSelect::none) {
        if (spec.k > e.cols()) {
            throw std::invalid_argument(fmt::format("target dimension {} exceeds {}", spec.k, e.cols()));
        }
        return e;
    }
    const auto idx = selected_dims(spec, e.cols());
    Tensor out(e.rows(), idx.size());
    for (std::size_t i = 0; i < e.rows(); ++i) {
        auto dst = out.row(i);
        for (std::size_t j = 0; j < idx.size(); ++j) dst[j] = e(i, idx[j]);
        if (!renormalize) continue;
        double ss = 0.0;
        for (double v : dst) ss += v * v;
        if (ss == 0.0) continue;
        const double norm = std::sqrt(ss);
        for (double& v : dst) v /= norm;
    }
    return out;
}

Int8Codes quantize_int8(const Tensor& e) {
    Int8Codes q{.rows = e.rows(), .dim = e.cols(), .codes = {}, .scales = {}};
    q.codes.resize(e.size());
    q.scales.resize(e.rows());
    for (std::size_t i = 0; i < e.rows(); ++i) {
        auto row = e.row(i);
        double max_abs = 0.0;
        for (double v : row) {
            if (!std::isfinite(v)) throw std::invalid_argument("quantize_int8: non-finite value");
            max_abs = std::max(max_abs, std::abs(v));
        }
        const double scale = max_abs / 127.0;
        q.scales[i] = scale;
        std::int8_t* codes = q.codes.data() + i * e.cols();
        if (scale == 0.0) {
            ++q.zero_rows;
            std::fill(codes, codes + e.cols(), std::int8_t{0});
            continue;
        }
        for (std::size_t j = 0; j < row.size(); ++j) {
            const double c = std::clamp(std::round(row[j] / scale), -127.0, 127.0);
            codes[j] = static_cast<std::int8_t>(c);
        }
    }
    return q;
}

Tensor dequantize(const Int8Codes& q) {
    Tensor out(q.rows, q.dim);
    for (std::size_t i = 0; i < q.rows; ++i) {
        auto dst = out.row(i);
        for (std::size_t j = 0; j < q.dim; ++j) {
            dst[j] = static_cast<double>(q.codes[i * q.dim + j]) * q.scales[i];
        }
    }
    return out;
}

BinaryCodes binarize(const Tensor& e) {
    if (e.cols() % 8 != 0) {
        throw std::invalid_argument(fmt::format("binarize: dimension {} is not a multiple of 8", e.cols()));
    }
    BinaryCodes b{.rows = e.rows(), .dim = e.cols(), .bits = {}};
    b.bits.assign(e.rows() * e.cols() / 8, 0);
    for (std::size_t i = 0; i < e.rows(); ++i) {
        std::uint8_t* dst = b.bits.data() + i * b.bytes_per_vector();
        for (std::size_t j = 0; j < e.cols(); ++j) {
            if (e(i, j) >= 0.0) dst[j / 8] |= static_cast<std::uint8_t>(0x80U >> (j % 8));
        }
    }
    return b;
}

int hamming_similarity(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b, std::size_t k) {
    if (a.size() != b.size() || a.size() * 8 != k) {
        throw std::invalid_argument("hamming_similarity: code length mismatch");
    }
    int differing = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        differing += std::popcount(static_cast<unsigned>(a[i] ^ b[i]));
    }
    return static_cast<int>(k) - 2 * differing;
}

Tensor hamming_scores(const BinaryCodes& queries, const BinaryCodes& gallery) {
    if (queries.dim != gallery.dim) {
        throw std::invalid_argument("hamming_scores: query and gallery code lengths differ");
    }
    Tensor out(queries.rows, gallery.rows);
    for (std::size_t i = 0; i < queries.rows; ++i)
        for (std::size_t j = 0; j < gallery.rows; ++j)
            out(i, j) = hamming_similarity(queries.row(i), gallery.row(j), queries.dim);
    return out;
}

CompressedView compress_view(const Tensor& e, const CompressionSpec& spec) {
    CompressedView out;
    out.dims = selected_dims(spec, e.cols());
    switch (spec.quant) {
        case Quantization::fp32:
            out.data = select_dims(e, spec);
            break;
        case Quantization::int8:
            out.data = quantize_int8(select_dims(e, spec));
            break;
        case Quantization::binary:
            out.data = binarize(select_dims(e, spec, false));
            break;
    }
    return out;
}

Tensor compressed_scores(const CompressedView& queries, const CompressedView& gallery) {
    if (queries.dims != gallery.dims) {
        throw std::invalid_argument("compressed_scores: query and gallery use different dimensions");
    }
    if (queries.data.index() != gallery.data.index()) {
        throw std::invalid_argument("compressed_scores: query and gallery use different storage");
    }
    switch (queries.data.index()) {
        case 0:
            return dot_scores(std::get<Tensor>(queries.data), std::get<Tensor>(gallery.data));
        case 1:
            return dot_scores(dequantize(std::get<Int8Codes>(queries.data)),
                              dequantize(std::get<Int8Codes>(gallery.data)));
        default:
            return hamming_scores(std::get<BinaryCodes>(queries.data),
                                  std::get<BinaryCodes>(gallery.data));
    }
}

namespace {

void require_compatible(std::span<const RetrievalReport> reports) {
    if (reports.empty()) throw std::invalid_argument("no reports to combine");
    for (const auto& r : reports) {
        if (r.ks != reports[0].ks || r.n != reports[0].n ||
            r.directions.size() != reports[0].directions.size()) {
            throw std::invalid_argument("reports disagree on ks, pool size, or directions");
        }
        for (std::size_t d = 0; d < r.directions.size(); ++d) {
            if (!(r.directions[d].direction == reports[0].directions[d].direction)) {
                throw std::invalid_argument("reports disagree on direction order");
            }
        }
    }
}

// Applies `f` to the sequence of each scalar field across reports.
template <class F>
RetrievalReport combine(std::span<const RetrievalReport> reports, F f) {
    require_compatible(reports);
    RetrievalReport out = reports[0];
    std::vector<double> xs(reports.size());
    auto field = [&](auto get) {
        for (std::size_t r = 0; r < reports.size(); ++r) xs[r] = get(reports[r]);
        return f(xs);
    };
    for (std::size_t d = 0; d < out.directions.size(); ++d) {
        for (std::size_t k = 0; k < out.ks.size(); ++k) {
            out.directions[d].recall[k] = field([&](const RetrievalReport& r) { return r.directions[d].recall[k]; });
        }
        out.directions[d].ndcg10 = field([&](const RetrievalReport& r) { return r.directions[d].ndcg10; });
    }
    out.avg_single = field([](const RetrievalReport& r) { return r.avg_single; });
    out.avg_dual = field([](const RetrievalReport& r) { return r.avg_dual; });
    out.avg_all = field([](const RetrievalReport& r) { return r.avg_all; });
    return out;
}

double anchored_mean(const std::vector<double>& xs) {
    double delta = 0.0;
    for (double x : xs) delta += x - xs[0];
    return xs[0] + delta / static_cast<double>(xs.size());
}

double sample_std(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    const double mu = anchored_mean(xs);
    double ss = 0.0;
    for (double x : xs) ss += (x - mu) * (x - mu);
    return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

}  // namespace

RetrievalReport mean_report(std::span<const RetrievalReport> reports) {
    return combine(reports, anchored_mean);
}

RetrievalReport std_report(std::span<const RetrievalReport> reports) {
    return combine(reports, sample_std);
}

CompressedReport evaluate_compressed(const ViewSet& views, const CompressionSpec& spec,
                                     std::size_t seeds, std::span<const std::size_t> ks) {
    if (seeds == 0) throw std::invalid_argument("evaluate_compressed: need at least one seed");
    CompressedReport out{.spec = spec, .dim_seeds = {}, .mean = {}, .stddev = {}, .per_seed = {}};
    std::size_t n = 0;
    for (View v : pool_views()) {
        if (!views.contains(v)) throw std::invalid_argument("view set lacks view " + v.name());
        n = views.at(v).rows();
    }
    for (std::size_t s = 0; s < seeds; ++s) {
        CompressionSpec seeded = spec;
        seeded.seed = spec.seed + s;
        out.dim_seeds.push_back(seeded.seed);
        std::map<View, CompressedView> compressed;
        for (View v : pool_views()) compressed.emplace(v, compress_view(views.at(v), seeded));
        out.per_seed.push_back(evaluate_scores(
            [&](View q, View t) { return compressed_scores(compressed.at(q), compressed.at(t)); }, n,
            ks));
    }
    out.mean = mean_report(out.per_seed);
    out.stddev = std_report(out.per_seed);
    return out;
}

CompressedReport evaluate_compressed(const ModelConfig& config, const ParameterSet& params,
                                     const Split& pool, const CompressionSpec& spec,
                                     std::size_t seeds, std::span<const std::size_t> ks) {
    return evaluate_compressed(embed_pool(config, params, pool), spec, seeds, ks);
}

}  // namespace triret
