#pragma once

// On-disk formats.
//
// Artifact file (checkpoints, corpora, embeddings, compressed indexes):
//   8 bytes   magic "TRIRET1\n"
//   8 bytes   manifest length L, little-endian u64
//   L bytes   manifest JSON: kind, meta (config echo, seed), tensor table
//             [{name, dtype, shape, offset, nbytes}], blob_bytes, blob_sha256
//   rest      blob: tensors concatenated in manifest order, little-endian
// dtypes: f32, f64, i8, u8, i64. Reads verify the blob hash before anything else.
//
// Run configuration: INI-style sections [gen] [model] [loss] [optim] [eval]
// [compression] [run]; unknown sections or keys are rejected.

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "triret/compression.hpp"
#include "triret/diagnostics.hpp"
#include "triret/model.hpp"
#include "triret/objectives.hpp"
#include "triret/retrieval.hpp"
#include "triret/synthetic_data.hpp"
#include "triret/trainer.hpp"

namespace triret {

using json = nlohmann::ordered_json;

class CorruptArtifact : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string sha256_hex(std::span<const std::uint8_t> bytes);
// SHA-256 over "blob <size>\0" + content, as git object ids are formed.
std::string git_blob_hash(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
// Writes to a sibling temp file, then renames over `path`.
void atomic_write(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void atomic_write(const std::filesystem::path& path, const std::string& text);

struct ArtifactTensor {
    std::string name;
    std::string dtype;  // f32 | f64 | i8 | u8 | i64
    std::vector<std::size_t> shape;
    std::vector<std::uint8_t> bytes;
};

struct Artifact {
    std::string kind;
    json meta = json::object();
    std::vector<ArtifactTensor> tensors;

    const ArtifactTensor& tensor(const std::string& name) const;
};

std::vector<std::uint8_t> encode_artifact(const Artifact& a);
Artifact decode_artifact(std::span<const std::uint8_t> bytes);
void write_artifact(const std::filesystem::path& path, const Artifact& a);
Artifact read_artifact(const std::filesystem::path& path);

ArtifactTensor f32_tensor(std::string name, const Tensor& t);
ArtifactTensor f64_tensor(std::string name, const Tensor& t);
// Accepts f32 or f64.
Tensor tensor_from(const ArtifactTensor& t);
ArtifactTensor i64_tensor(std::string name, std::span<const std::int64_t> values);
std::vector<std::int64_t> i64_values(const ArtifactTensor& t);

// Configs as JSON (manifest echo) and back.
json to_json(const GenConfig& c);
json to_json(const ModelConfig& c);
json to_json(const LossConfig& c);
json to_json(const OptimizerConfig& c);
GenConfig gen_config_from_json(const json& j);
ModelConfig model_config_from_json(const json& j);

struct RunConfig {
    GenConfig gen;
    ModelConfig model;
    LossConfig loss;
    OptimizerConfig optim;
    std::vector<std::size_t> ks{1, 5, 10};
    std::vector<CompressionSpec> compression;
    std::size_t compression_seeds = kCompressionSeeds;
    std::vector<std::uint64_t> seeds{42, 43, 44};

    json to_json() const;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
// Defaults in config-file syntax.
std::string default_run_config_text();

// Model input dims follow the corpus.
ModelConfig model_for_corpus(ModelConfig model, const GenConfig& gen);

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& model,
                     const ParameterSet& params, const json& meta = json::object());
struct Checkpoint {
    ModelConfig model;
    ParameterSet params;
    json meta;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);
Artifact checkpoint_artifact(const ModelConfig& model, const ParameterSet& params,
                             const json& meta = json::object());

Artifact corpus_artifact(const Corpus& c);
Corpus corpus_from_artifact(const Artifact& a);
void save_corpus(const std::filesystem::path& path, const Corpus& c);
Corpus load_corpus(const std::filesystem::path& path);

void save_embeddings(const std::filesystem::path& path, const Tensor& e, const json& meta = json::object());
Tensor load_embeddings(const std::filesystem::path& path);

Artifact compressed_index_artifact(const CompressedView& view, const CompressionSpec& spec,
                                   const std::string& view_name);

json report_to_json(const RetrievalReport& r);
RetrievalReport report_from_json(const json& j);
json compressed_report_to_json(const CompressedReport& r);
json geometry_to_json(const GeometryReport& g);
json attractor_to_json(const AttractorReport& a, const Direction& d);

// Column labels: the 12 directions, then single, dual, all.
std::vector<std::string> table_columns();
std::vector<double> table_row(const RetrievalReport& r);  // R@1 per column

struct MetricsTable {
    json data;
    std::string text;
};

// One row per labelled report; with more than one report, mean and std rows follow.
MetricsTable metrics_report(std::span<const std::string> labels, std::span<const RetrievalReport> reports);

}  // namespace triret
