// triret: generate -> train -> eval -> compress -> diagnose -> ablate.
//
// Exit codes: 0 ok, 1 usage, 2 runtime failure, 3 failed assertion
// (grad-check, ablate --assert). Failures print one JSON line on stderr.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "triret/experiment.hpp"
#include "triret/gradcheck.hpp"
#include "triret/io.hpp"

namespace fs = std::filesystem;
using namespace triret;

namespace {

constexpr int kUsage = 1;
constexpr int kRuntime = 2;
constexpr int kAssertion = 3;

struct AssertionFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void report_error(const std::string& kind, const std::string& command, const std::string& message) {
    json j = {{"error", kind}, {"command", command}, {"message", message}};
    std::cerr << j.dump() << std::endl;
}

std::string file_hash(const fs::path& p) { return sha256_hex(read_file(p)); }
std::string corpus_hash(const fs::path& p) { return git_blob_hash(read_file(p)); }

void write_json(const fs::path& p, const json& j) { atomic_write(p, j.dump(2) + "\n"); }

LossWeights parse_weights(const std::string& s) {
    std::vector<double> xs;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');) xs.push_back(std::stod(item));
    if (xs.size() != 3) throw std::invalid_argument("loss weights need three values d,t,a: " + s);
    return {xs[0], xs[1], xs[2]};
}

std::string spec_file_stem(const CompressionSpec& s) {
    std::string out = s.str();
    for (char& c : out) {
        if (c == ':') c = '_';
    }
    return out;
}

struct Options {
    std::string config_path;
    std::string corpus;
    std::string checkpoint;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> steps;
    std::string lambdas;
    std::vector<std::string> specs;
    std::optional<std::size_t> dim_seeds;
    bool write_index = false;
    std::size_t top_k = 3;
    std::string variants;
    bool assert_mode = false;
    std::size_t instances = 20;
    double tolerance = 1e-4;
};

RunConfig load_config(const Options& o) {
    RunConfig c = o.config_path.empty() ? RunConfig{} : load_run_config(o.config_path);
    if (o.steps) c.optim.steps = *o.steps;
    if (!o.lambdas.empty()) {
        const auto w = parse_weights(o.lambdas);
        c.loss.lambda_d = w[0];
        c.loss.lambda_t = w[1];
        c.loss.lambda_a = w[2];
    }
    if (o.dim_seeds) c.compression_seeds = *o.dim_seeds;
    c.loss.validate();
    c.optim.validate();
    return c;
}

Corpus corpus_for(const Options& o, const RunConfig& c) {
    return o.corpus.empty() ? generate_corpus(c.gen) : load_corpus(o.corpus);
}

json provenance(const Options& o) {
    json j = json::object();
    if (!o.corpus.empty()) j["corpus_hash"] = corpus_hash(o.corpus);
    if (!o.checkpoint.empty()) j["checkpoint_sha256"] = file_hash(o.checkpoint);
    return j;
}

int cmd_gen_data(const Options& o) {
    RunConfig c = load_config(o);
    if (o.seed) c.gen.seed = *o.seed;
    const Corpus corpus = generate_corpus(c.gen);
    save_corpus(o.out, corpus);
    fmt::print("wrote {} ({} train, {} eval)\n", o.out, corpus.train.size(), corpus.eval.size());
    return 0;
}

int cmd_train(const Options& o) {
    RunConfig c = load_config(o);
    if (o.seed) c = config_for_seed(c, *o.seed);
    const Corpus corpus = load_corpus(o.corpus);
    c.model = model_for_corpus(c.model, corpus.config);
    const ParameterSet init = init_params(c.model);
    const TrainRunRecord rec = run_training(corpus.train, c.model, c.loss, c.optim, init);

    const fs::path dir = o.out;
    fs::create_directories(dir);
    json meta = {{"config", c.to_json()}, {"seed", c.model.seed}, {"corpus_hash", corpus_hash(o.corpus)}};
    save_checkpoint(dir / "checkpoint.bin", c.model, rec.params, meta);
    atomic_write(dir / "history.csv", history_csv(rec.history));
    json manifest = meta;
    manifest["steps"] = rec.history.size();
    manifest["checkpoint_sha256"] = file_hash(dir / "checkpoint.bin");
    manifest["history_sha256"] = file_hash(dir / "history.csv");
    manifest["wall_clock_seconds"] = rec.wall_clock_seconds;
    if (!rec.history.empty()) {
        const auto& last = rec.history.back().loss;
        manifest["final_loss"] = {{"L_A", last.la}, {"L_D", last.ld}, {"L_T", last.lt}, {"total", last.total}};
    }
    write_json(dir / "manifest.json", manifest);
    fmt::print("trained {} steps in {:.1f}s -> {}\n", rec.history.size(), rec.wall_clock_seconds, dir.string());
    return 0;
}

int cmd_eval(const Options& o) {
    const RunConfig c = load_config(o);
    const Corpus corpus = load_corpus(o.corpus);
    const Checkpoint ck = load_checkpoint(o.checkpoint);
    const RetrievalReport r = evaluate_benchmark(ck.model, ck.params, corpus.eval, c.ks);
    json j = report_to_json(r);
    j["model"] = to_json(ck.model);
    j["seed"] = ck.model.seed;
    if (ck.meta.contains("config")) j["config"] = ck.meta["config"];
    j["provenance"] = provenance(o);
    write_json(o.out, j);
    const std::array<std::string, 1> labels{"checkpoint"};
    const std::array<RetrievalReport, 1> reports{r};
    fmt::print("{}", metrics_report(labels, reports).text);
    return 0;
}

int cmd_compress(const Options& o) {
    const RunConfig c = load_config(o);
    const Corpus corpus = load_corpus(o.corpus);
    const Checkpoint ck = load_checkpoint(o.checkpoint);
    std::vector<CompressionSpec> specs = c.compression;
    if (!o.specs.empty()) {
        specs.clear();
        for (const auto& s : o.specs) specs.push_back(CompressionSpec::parse(s));
    }
    if (specs.empty()) throw std::invalid_argument("no compression specs given (--spec or [compression] specs)");

    const fs::path dir = o.out;
    fs::create_directories(dir);
    const ViewSet views = embed_pool(ck.model, ck.params, corpus.eval);
    for (const auto& spec : specs) {
        const CompressedReport r = evaluate_compressed(views, spec, c.compression_seeds, c.ks);
        json j = compressed_report_to_json(r);
        j["model"] = to_json(ck.model);
        j["seed"] = ck.model.seed;
        j["provenance"] = provenance(o);
        write_json(dir / (spec_file_stem(spec) + ".json"), j);
        if (o.write_index) {
            for (const auto& [view, e] : views) {
                write_artifact(dir / fmt::format("{}.{}.idx", spec_file_stem(spec), view.name()),
                               compressed_index_artifact(compress_view(e, spec), spec, view.name()));
            }
        }
        fmt::print("{:<20} avg_all {:6.2f} (std {:.2f}) over {} dim-seeds\n", spec.str(), r.mean.avg_all,
                   r.stddev.avg_all, r.dim_seeds.size());
    }
    return 0;
}

int cmd_diagnose(const Options& o) {
    const Corpus corpus = load_corpus(o.corpus);
    const Checkpoint ck = load_checkpoint(o.checkpoint);
    const ViewSet views = embed_pool(ck.model, ck.params, corpus.eval);
    const GeometryReport geo = triple_cosine_report(views);
    json attractors = json::array();
    for (const auto& d : benchmark_directions()) {
        attractors.push_back(attractor_to_json(attractor_report(views, d, o.top_k), d));
    }
    json j = {{"geometry", geometry_to_json(geo)}, {"attractors", attractors},
              {"model", to_json(ck.model)}, {"seed", ck.model.seed}, {"provenance", provenance(o)}};
    write_json(o.out, j);
    fmt::print("triple-cosine intra {:.4f} inter {:.4f} gap {:.4f}\n", geo.intra_mean, geo.inter_mean, geo.gap);
    return 0;
}

int cmd_ablate(const Options& o) {
    const RunConfig c = load_config(o);
    const Corpus corpus = corpus_for(o, c);
    std::vector<LossWeights> variants = kStairStep;
    if (!o.variants.empty()) {
        variants.clear();
        std::stringstream ss(o.variants);
        for (std::string item; std::getline(ss, item, ';');) variants.push_back(parse_weights(item));
    }
    const AblationResult r = run_ablation(corpus, c, variants);

    const fs::path dir = o.out;
    fs::create_directories(dir);
    json j = r.to_json(c);
    j["corpus_hash"] = git_blob_hash(encode_artifact(corpus_artifact(corpus)));
    write_json(dir / "ablation.json", j);
    atomic_write(dir / "ablation.txt", r.table_text());
    for (const auto& s : r.seeds) {
        for (const auto& v : s.variants) {
            const std::string stem = fmt::format("seed{}_{:g}-{:g}-{:g}", s.seed, v.weights[0], v.weights[1], v.weights[2]);
            atomic_write(dir / (stem + ".history.csv"), v.history);
            RunConfig seeded = config_for_seed(c, s.seed);
            seeded.loss.lambda_d = v.weights[0];
            seeded.loss.lambda_t = v.weights[1];
            seeded.loss.lambda_a = v.weights[2];
            save_checkpoint(dir / (stem + ".checkpoint.bin"), model_for_corpus(seeded.model, corpus.config),
                            v.params, {{"config", seeded.to_json()}, {"seed", s.seed}});
        }
    }
    fmt::print("{}", r.table_text());

    if (o.assert_mode) {
        // Stair-step ordering on AVG-all with a margin above the seed spread,
        // and a wider triple-cosine gap after training for every seed.
        std::vector<std::string> failures;
        std::vector<int> chain{-1};
        for (std::size_t v = 0; v < variants.size() && v < 2; ++v) chain.push_back(static_cast<int>(v));
        for (std::size_t i = 1; i < chain.size(); ++i) {
            const auto a = r.avg_all(chain[i - 1]);
            const auto b = r.avg_all(chain[i]);
            const double margin = mean_of(b) - mean_of(a);
            if (!(margin > std::max(sample_std(a), sample_std(b)))) {
                failures.push_back(fmt::format("avg_all step {} -> {}: margin {:.3f}", chain[i - 1], chain[i], margin));
            }
        }
        for (const auto& s : r.seeds) {
            for (const auto& v : s.variants) {
                if (!(v.geometry.gap > 0.0 && v.geometry.gap > s.untrained_geometry.gap)) {
                    failures.push_back(fmt::format("seed {} {}: gap {:.4f} vs untrained {:.4f}", s.seed,
                                                   weights_label(v.weights), v.geometry.gap,
                                                   s.untrained_geometry.gap));
                }
            }
        }
        if (!failures.empty()) {
            std::string msg;
            for (const auto& f : failures) msg += (msg.empty() ? "" : "; ") + f;
            throw AssertionFailure(msg);
        }
        fmt::print("assertions passed\n");
    }
    return 0;
}

int cmd_grad_check(const Options& o) {
    LossCheckConfig cfg;
    cfg.instances = o.instances;
    cfg.tolerance = o.tolerance;
    if (o.seed) cfg.seed = *o.seed;
    bool ok = true;
    double worst = 0.0;
    for (const auto& r : check_loss_gradients(cfg)) {
        fmt::print("{:<6} max_rel_error {:.3e} ({}) {}\n", r.loss, r.max_rel_error, r.worst_param,
                   r.passed ? "ok" : "FAIL");
        ok = ok && r.passed;
        worst = std::max(worst, r.max_rel_error);
    }
    fmt::print("max relative error {:.3e}\n", worst);
    if (!ok) throw AssertionFailure(fmt::format("max relative error {:.3e} exceeds {:.1e}", worst, cfg.tolerance));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tri-modal retrieval toolkit"};
    app.require_subcommand(1);
    Options o;
    bool print_config = false;
    app.add_flag("--print-default-config", print_config, "print the default configuration file and exit");
    app.add_option("--config", o.config_path, "configuration file")->check(CLI::ExistingFile);

    auto* gen = app.add_subcommand("gen-data", "write a synthetic corpus");
    gen->add_option("--out", o.out, "corpus file")->required();
    gen->add_option("--seed", o.seed, "corpus seed");

    auto* train = app.add_subcommand("train", "train one model");
    train->add_option("--corpus", o.corpus)->required()->check(CLI::ExistingFile);
    train->add_option("--out", o.out, "output directory")->required();
    train->add_option("--steps", o.steps);
    train->add_option("--lambda", o.lambdas, "loss weights d,t,a");
    train->add_option("--seed", o.seed, "model and optimizer seed");

    auto* eval = app.add_subcommand("eval", "retrieval report for a checkpoint");
    eval->add_option("--corpus", o.corpus)->required()->check(CLI::ExistingFile);
    eval->add_option("--checkpoint", o.checkpoint)->required()->check(CLI::ExistingFile);
    eval->add_option("--out", o.out, "report JSON")->required();

    auto* compress = app.add_subcommand("compress", "compressed retrieval reports");
    compress->add_option("--corpus", o.corpus)->required()->check(CLI::ExistingFile);
    compress->add_option("--checkpoint", o.checkpoint)->required()->check(CLI::ExistingFile);
    compress->add_option("--out", o.out, "output directory")->required();
    compress->add_option("--spec", o.specs, "select:k:quant, repeatable");
    compress->add_option("--dim-seeds", o.dim_seeds);
    compress->add_flag("--write-index", o.write_index, "also write compressed index files");

    auto* diagnose = app.add_subcommand("diagnose", "geometry and attractor reports");
    diagnose->add_option("--corpus", o.corpus)->required()->check(CLI::ExistingFile);
    diagnose->add_option("--checkpoint", o.checkpoint)->required()->check(CLI::ExistingFile);
    diagnose->add_option("--out", o.out, "report JSON")->required();
    diagnose->add_option("--top-k", o.top_k);

    auto* ablate = app.add_subcommand("ablate", "loss ablation across seeds");
    ablate->add_option("--corpus", o.corpus, "corpus file (default: generate from config)")
        ->check(CLI::ExistingFile);
    ablate->add_option("--out", o.out, "output directory")->required();
    ablate->add_option("--steps", o.steps);
    ablate->add_option("--variants", o.variants, "d,t,a;d,t,a;...");
    ablate->add_flag("--assert", o.assert_mode, "exit 3 unless the ordering checks hold");

    auto* gc = app.add_subcommand("grad-check", "finite-difference check of every loss");
    gc->add_option("--instances", o.instances);
    gc->add_option("--tol", o.tolerance);
    gc->add_option("--seed", o.seed);

    std::string command;
    try {
        // --print-default-config stands alone.
        if (argc == 2 && std::string(argv[1]) == "--print-default-config") {
            std::cout << default_run_config_text();
            return 0;
        }
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        report_error("usage", "", e.what());
        return kUsage;
    }

    try {
        for (auto* sub : app.get_subcommands()) command = sub->get_name();
        if (command == "gen-data") return cmd_gen_data(o);
        if (command == "train") return cmd_train(o);
        if (command == "eval") return cmd_eval(o);
        if (command == "compress") return cmd_compress(o);
        if (command == "diagnose") return cmd_diagnose(o);
        if (command == "ablate") return cmd_ablate(o);
        if (command == "grad-check") return cmd_grad_check(o);
        report_error("usage", command, "unknown subcommand");
        return kUsage;
    } catch (const AssertionFailure& e) {
        report_error("assertion", command, e.what());
        return kAssertion;
    } catch (const std::exception& e) {
        report_error("runtime", command, e.what());
        return kRuntime;
    }
}
