#include "triret/experiment.hpp"

#include <cmath>

#include <fmt/format.h>

namespace triret {

std::string weights_label(const LossWeights& w) { return fmt::format("({:g},{:g},{:g})", w[0], w[1], w[2]); }

double mean_of(const std::vector<double>& xs) {
    if (xs.empty()) throw std::invalid_argument("mean of an empty list");
    double acc = 0.0;
    for (double x : xs) acc += x - xs[0];
    return xs[0] + acc / static_cast<double>(xs.size());
}

double sample_std(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    const double m = mean_of(xs);
    double ss = 0.0;
    for (double x : xs) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

RunConfig config_for_seed(const RunConfig& config, std::uint64_t seed) {
    RunConfig c = config;
    c.model.seed = seed;
    c.optim.seed = seed;
    return c;
}

VariantRun train_variant(const Corpus& corpus, const RunConfig& seeded, const ParameterSet& init,
                         const LossWeights& weights) {
    LossConfig loss = seeded.loss;
    loss.lambda_d = weights[0];
    loss.lambda_t = weights[1];
    loss.lambda_a = weights[2];
    const ModelConfig model = model_for_corpus(seeded.model, corpus.config);
    TrainRunRecord rec = run_training(corpus.train, model, loss, seeded.optim, init);

    VariantRun v;
    v.weights = weights;
    const ViewSet views = embed_pool(model, rec.params, corpus.eval);
    v.report = evaluate_views(views, seeded.ks);
    v.geometry = triple_cosine_report(views);
    v.history = history_csv(rec.history);
    v.params = std::move(rec.params);
    v.wall_clock_seconds = rec.wall_clock_seconds;
    return v;
}

AblationResult run_ablation(const Corpus& corpus, const RunConfig& config,
                            const std::vector<LossWeights>& variants) {
    if (variants.empty()) throw std::invalid_argument("ablation: no variants");
    AblationResult out;
    out.variants = variants;
    for (std::uint64_t seed : config.seeds) {
        const RunConfig seeded = config_for_seed(config, seed);
        const ModelConfig model = model_for_corpus(seeded.model, corpus.config);
        const ParameterSet init = init_params(model);

        SeedRun run;
        run.seed = seed;
        const ViewSet views = embed_pool(model, init, corpus.eval);
        run.untrained = evaluate_views(views, seeded.ks);
        run.untrained_geometry = triple_cosine_report(views);
        for (const auto& w : variants) run.variants.push_back(train_variant(corpus, seeded, init, w));
        out.seeds.push_back(std::move(run));
    }
    return out;
}

std::vector<double> AblationResult::avg_all(int variant) const {
    std::vector<double> xs;
    for (const auto& s : seeds) {
        xs.push_back(variant < 0 ? s.untrained.avg_all : s.variants.at(static_cast<std::size_t>(variant)).report.avg_all);
    }
    return xs;
}

namespace {

std::vector<std::vector<double>> mean_rows(const AblationResult& r) {
    // Row 0: untrained; row i+1: variant i.
    std::vector<std::vector<double>> rows;
    for (int v = -1; v < static_cast<int>(r.variants.size()); ++v) {
        std::vector<std::vector<double>> per_seed;
        for (const auto& s : r.seeds) {
            per_seed.push_back(table_row(v < 0 ? s.untrained : s.variants[static_cast<std::size_t>(v)].report));
        }
        std::vector<double> row;
        for (std::size_t c = 0; c < per_seed[0].size(); ++c) {
            std::vector<double> col;
            for (const auto& p : per_seed) col.push_back(p[c]);
            row.push_back(mean_of(col));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace

json AblationResult::to_json(const RunConfig& config) const {
    json j;
    j["config"] = config.to_json();
    j["columns"] = table_columns();
    json vs = json::array();
    for (const auto& w : variants) vs.push_back(weights_label(w));
    j["variants"] = vs;

    const auto rows = mean_rows(*this);
    json mean = json::array();
    json delta = json::array();
    mean.push_back({{"label", "untrained"}, {"values", rows[0]}});
    for (std::size_t v = 0; v < variants.size(); ++v) {
        std::vector<double> d;
        for (std::size_t c = 0; c < rows[v + 1].size(); ++c) d.push_back(rows[v + 1][c] - rows[v][c]);
        mean.push_back({{"label", weights_label(variants[v])}, {"values", rows[v + 1]}});
        delta.push_back({{"label", weights_label(variants[v])}, {"values", d}});
    }
    j["mean"] = mean;
    j["delta"] = delta;

    json avg = json::object();
    avg["untrained"] = {{"mean", mean_of(avg_all(-1))}, {"std", sample_std(avg_all(-1))}};
    for (std::size_t v = 0; v < variants.size(); ++v) {
        const auto xs = avg_all(static_cast<int>(v));
        avg[weights_label(variants[v])] = {{"mean", mean_of(xs)}, {"std", sample_std(xs)}};
    }
    j["avg_all"] = avg;

    json per_seed = json::array();
    for (const auto& s : seeds) {
        json runs = json::array();
        for (const auto& v : s.variants) {
            runs.push_back({{"weights", weights_label(v.weights)},
                            {"report", report_to_json(v.report)},
                            {"geometry", geometry_to_json(v.geometry)}});
        }
        per_seed.push_back({{"seed", s.seed},
                            {"untrained", report_to_json(s.untrained)},
                            {"untrained_geometry", geometry_to_json(s.untrained_geometry)},
                            {"variants", runs}});
    }
    j["seeds"] = per_seed;
    return j;
}

std::string AblationResult::table_text() const {
    const auto rows = mean_rows(*this);
    const auto cols = table_columns();
    auto header = [&](const std::string& title) {
        std::string s = fmt::format("{:<10}", title);
        for (const auto& c : cols) s += fmt::format(" {:>7}", c);
        return s + "\n";
    };
    auto line = [](const std::string& label, const std::vector<double>& xs, bool sign) {
        std::string s = fmt::format("{:<10}", label);
        for (double x : xs) s += sign ? fmt::format(" {:>+7.2f}", x) : fmt::format(" {:>7.2f}", x);
        return s + "\n";
    };
    std::string out = header(fmt::format("R@1 (n={})", seeds.size()));
    out += line("untrained", rows[0], false);
    for (std::size_t v = 0; v < variants.size(); ++v) out += line(weights_label(variants[v]), rows[v + 1], false);
    out += "\n" + header("delta");
    for (std::size_t v = 0; v < variants.size(); ++v) {
        std::vector<double> d;
        for (std::size_t c = 0; c < rows[v + 1].size(); ++c) d.push_back(rows[v + 1][c] - rows[v][c]);
        out += line(weights_label(variants[v]), d, true);
    }
    return out;
}

}  // namespace triret
