#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <fstream>

#include "helpers.hpp"
#include "triret/io.hpp"

using namespace triret;
namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

// Splits an encoded artifact into its manifest and blob, for tampering.
std::pair<json, std::vector<std::uint8_t>> split_artifact(const std::vector<std::uint8_t>& b) {
    std::uint64_t len = 0;
    for (int i = 7; i >= 0; --i) len = (len << 8) | b[8 + static_cast<std::size_t>(i)];
    const json m = json::parse(b.begin() + 16, b.begin() + 16 + static_cast<std::ptrdiff_t>(len));
    return {m, std::vector<std::uint8_t>(b.begin() + 16 + static_cast<std::ptrdiff_t>(len), b.end())};
}

std::vector<std::uint8_t> join_artifact(const json& m, const std::vector<std::uint8_t>& blob) {
    const std::string text = m.dump();
    std::vector<std::uint8_t> out = bytes_of("TRIRET1\n");
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(text.size() >> (8 * i)));
    out.insert(out.end(), text.begin(), text.end());
    out.insert(out.end(), blob.begin(), blob.end());
    return out;
}

RetrievalReport random_report(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    ViewSet vs;
    for (View v : pool_views()) vs[v] = testutil::random_unit(24, 4, rng);
    vs[View::parse("v")] = vs[View::parse("t")];
    return evaluate_views(vs);
}

}  // namespace

TEST_CASE("hashes match known digests") {
    CHECK(sha256_hex({}) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    const auto abc = bytes_of("abc");
    CHECK(sha256_hex(abc) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    // git hash-object --object-format=sha256 on an empty file.
    CHECK(git_blob_hash({}) == "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813");
}

TEST_CASE("artifact round trip is bitwise") {
    testutil::TempDir dir("artifact");
    std::mt19937_64 rng(1);
    Artifact a;
    a.kind = "test";
    a.meta = {{"seed", 3}, {"note", "x"}};
    const Tensor t = testutil::random_tensor(3, 5, rng);
    a.tensors.push_back(f64_tensor("t64", t));
    a.tensors.push_back(f32_tensor("t32", t));
    const std::vector<std::int64_t> ids{-1, 0, 7, 1LL << 40};
    a.tensors.push_back(i64_tensor("ids", ids));

    const fs::path p = dir.path / "a.bin";
    write_artifact(p, a);
    CHECK_FALSE(fs::exists(p.string() + ".tmp"));
    const auto raw = read_file(p);
    CHECK(std::memcmp(raw.data(), "TRIRET1\n", 8) == 0);
    const Artifact b = read_artifact(p);
    CHECK(b.kind == "test");
    CHECK(b.meta == a.meta);
    CHECK(tensor_from(b.tensor("t64")) == t);
    const Tensor t32 = tensor_from(b.tensor("t32"));
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(t32.data()[i] == static_cast<double>(static_cast<float>(t.data()[i])));
    CHECK(i64_values(b.tensor("ids")) == ids);
    CHECK(encode_artifact(b) == raw);
    CHECK_THROWS(b.tensor("missing"));

    const auto [m, blob] = split_artifact(raw);
    CHECK(m.at("format") == "triret-artifact");
    CHECK(m.at("version") == 1);
    CHECK(m.at("blob_bytes") == blob.size());
    CHECK(m.at("blob_sha256") == sha256_hex(blob));
    CHECK(m.at("tensors")[1].at("offset") == 3 * 5 * 8);
}

TEST_CASE("damaged artifacts are rejected") {
    Artifact a;
    a.kind = "test";
    a.tensors.push_back(f32_tensor("w", Tensor(2, 3, 1.5)));
    const auto good = encode_artifact(a);

    auto expect_corrupt = [](std::span<const std::uint8_t> b) {
        try {
            decode_artifact(b);
            FAIL("no error");
        } catch (const CorruptArtifact& e) {
            CHECK(std::string(e.what()).starts_with("corrupt artifact"));
        }
    };
    SUBCASE("truncated") {
        for (std::size_t cut : {std::size_t{0}, std::size_t{7}, std::size_t{20}, good.size() - 1})
            expect_corrupt(std::span(good).first(cut));
    }
    SUBCASE("bad magic") {
        auto b = good;
        b[3] = 'X';
        expect_corrupt(b);
    }
    SUBCASE("flipped blob byte") {
        auto b = good;
        b.back() ^= 0x01;
        expect_corrupt(b);
    }
    SUBCASE("trailing bytes") {
        auto b = good;
        b.push_back(0);
        expect_corrupt(b);
    }
    SUBCASE("shape disagrees with byte length") {
        auto [m, blob] = split_artifact(good);
        m["tensors"][0]["shape"] = {3, 3};
        try {
            decode_artifact(join_artifact(m, blob));
            FAIL("no error");
        } catch (const std::runtime_error& e) {
            CHECK(std::string(e.what()).find("shape disagrees with byte length") != std::string::npos);
        }
    }
    SUBCASE("unknown format version") {
        auto [m, blob] = split_artifact(good);
        m["version"] = 2;
        expect_corrupt(join_artifact(m, blob));
    }
    CHECK_THROWS_AS(read_artifact("/nonexistent/file.bin"), std::runtime_error);
}

TEST_CASE("checkpoint round trip") {
    testutil::TempDir dir("ckpt");
    ModelConfig m;
    m.input_dim = {4, 5, 6};
    m.hidden_dim = 7;
    m.embed_dim = 3;
    m.seed = 9;
    const ParameterSet p = init_params(m);
    save_checkpoint(dir.path / "c.bin", m, p, {{"seed", 9}});
    const Checkpoint c = load_checkpoint(dir.path / "c.bin");
    CHECK(c.model == m);
    CHECK(c.params == p);
    CHECK(c.meta.at("seed") == 9);
    const Artifact art = read_artifact(dir.path / "c.bin");
    for (const auto& t : art.tensors) CHECK(t.dtype == "f32");

    // Values that would be silently rounded are refused.
    ParameterSet bad = p;
    bad.tensors()[0].value.data()[0] = 0.1;
    CHECK_THROWS(save_checkpoint(dir.path / "bad.bin", m, bad));

    // A checkpoint whose layout does not match its model config is refused.
    Artifact wrong = checkpoint_artifact(m, p);
    wrong.tensors.pop_back();
    write_artifact(dir.path / "wrong.bin", wrong);
    CHECK_THROWS(load_checkpoint(dir.path / "wrong.bin"));
}

TEST_CASE("corpus and embeddings round trip") {
    testutil::TempDir dir("corpus");
    GenConfig g;
    g.n_train = 20;
    g.n_eval = 6;
    g.input_dim = {3, 4, 5};
    const Corpus c = generate_corpus(g);
    save_corpus(dir.path / "c.bin", c);
    const Corpus back = load_corpus(dir.path / "c.bin");
    CHECK(back.config == g);
    for (Modality m : kModalities) {
        CHECK(back.train.of(m) == c.train.of(m));
        CHECK(back.eval.of(m) == c.eval.of(m));
    }
    CHECK(back.train.ids == c.train.ids);
    CHECK(back.eval.ids == c.eval.ids);
    save_corpus(dir.path / "c2.bin", back);
    CHECK(read_file(dir.path / "c.bin") == read_file(dir.path / "c2.bin"));

    std::mt19937_64 rng(2);
    const Tensor e = testutil::random_unit(7, 3, rng);
    save_embeddings(dir.path / "e.bin", e);
    CHECK(load_embeddings(dir.path / "e.bin") == e);
    CHECK_THROWS(load_corpus(dir.path / "e.bin"));
}

TEST_CASE("compressed index artifacts") {
    std::mt19937_64 rng(3);
    const Tensor e = testutil::random_unit(5, 16, rng);
    const auto spec_i8 = CompressionSpec::parse("front:8:int8");
    const Artifact i8 = compressed_index_artifact(compress_view(e, spec_i8), spec_i8, "t");
    CHECK(i8.tensor("codes").dtype == "i8");
    CHECK(i8.tensor("codes").bytes.size() == 5 * 8);
    const auto spec_bin = CompressionSpec::parse("front:16:binary");
    const Artifact bin = compressed_index_artifact(compress_view(e, spec_bin), spec_bin, "t");
    CHECK(bin.tensor("bits").dtype == "u8");
    CHECK(bin.tensor("bits").bytes.size() == 5 * 2);
    const auto spec_f = CompressionSpec::parse("random:4:fp32");
    const Artifact f = compressed_index_artifact(compress_view(e, spec_f), spec_f, "t");
    CHECK(f.tensor("vectors").dtype == "f32");
    CHECK(decode_artifact(encode_artifact(f)).meta == f.meta);
}

TEST_CASE("run config parsing") {
    const RunConfig d = parse_run_config(default_run_config_text());
    const RunConfig defaults;
    CHECK(d.gen == defaults.gen);
    CHECK(d.model == defaults.model);
    CHECK(d.loss == defaults.loss);
    CHECK(d.optim == defaults.optim);
    CHECK(d.seeds == std::vector<std::uint64_t>{42, 43, 44});
    CHECK(d.compression_seeds == 5);

    const RunConfig c = parse_run_config(
        "# comment\n[gen]\nn_train = 100\ninput_dim = 4,5,6\n[loss]\ntau = 0.05\nlambda_t = 0\n"
        "[optim]\nkind = sgd\nschedule = warmup_cosine\n[eval]\nks = 1,3\n"
        "[compression]\nspecs = front:8:binary\n[run]\nseeds = 1,2\n");
    CHECK(c.gen.n_train == 100);
    CHECK(c.gen.input_dim == std::array<std::size_t, 3>{4, 5, 6});
    CHECK(c.loss.tau == 0.05);
    CHECK(c.loss.lambda_t == 0.0);
    CHECK(c.optim.kind == OptimizerKind::sgd);
    CHECK(c.optim.schedule == LrSchedule::warmup_cosine);
    CHECK(c.ks == std::vector<std::size_t>{1, 3});
    CHECK(c.compression == std::vector<CompressionSpec>{CompressionSpec::parse("front:8:binary")});
    CHECK(c.seeds == std::vector<std::uint64_t>{1, 2});

    CHECK_THROWS(parse_run_config("[gen]\nn_trian = 5\n"));
    CHECK_THROWS(parse_run_config("[bogus]\nx = 1\n"));
    CHECK_THROWS(parse_run_config("[loss]\ntau = -1\n"));
    CHECK_THROWS(parse_run_config("[optim]\nkind = rmsprop\n"));
    CHECK_THROWS(parse_run_config("[gen]\ninput_dim = 4,5\n"));
    CHECK_THROWS(parse_run_config("[optim]\nbatch_size = abc\n"));

    testutil::TempDir dir("cfg");
    std::ofstream(dir.path / "run.ini") << "[model]\nembed_dim = 12\n";
    CHECK(load_run_config(dir.path / "run.ini").model.embed_dim == 12);
}

TEST_CASE("report json round trip") {
    const RetrievalReport r = random_report(4);
    const json j = report_to_json(r);
    CHECK(j.at("directions").size() == 12);
    CHECK(j.at("directions")[6].at("direction") == "t->av");
    CHECK(j.at("directions")[0].at("recall").contains("R@5"));
    const RetrievalReport back = report_from_json(j);
    CHECK(back.n == r.n);
    CHECK(back.ks == r.ks);
    CHECK(back.avg_all == r.avg_all);
    for (std::size_t i = 0; i < 12; ++i) {
        CHECK(back.directions[i].direction == r.directions[i].direction);
        CHECK(back.directions[i].recall == r.directions[i].recall);
        CHECK(back.directions[i].ndcg10 == r.directions[i].ndcg10);
    }
}

TEST_CASE("metrics report tables") {
    const auto cols = table_columns();
    REQUIRE(cols.size() == 15);
    CHECK(cols[0] == "t->v");
    CHECK(cols[11] == "at->v");
    CHECK(cols[12] == "single");
    CHECK(cols[13] == "dual");
    CHECK(cols[14] == "all");

    const RetrievalReport r = random_report(5);
    SUBCASE("one report gives one row") {
        const std::array<std::string, 1> labels{"run"};
        const std::array<RetrievalReport, 1> reports{r};
        const MetricsTable t = metrics_report(labels, reports);
        CHECK(t.data.at("rows").size() == 1);
        const auto values = t.data.at("rows")[0].at("values").get<std::vector<double>>();
        CHECK(values == table_row(r));
        CHECK(values[14] == r.avg_all);
        CHECK(std::count(t.text.begin(), t.text.end(), '\n') == 2);
    }
    SUBCASE("three identical reports add a mean row and a zero std row") {
        const std::array<std::string, 3> labels{"a", "b", "c"};
        const std::array<RetrievalReport, 3> reports{r, r, r};
        const MetricsTable t = metrics_report(labels, reports);
        REQUIRE(t.data.at("rows").size() == 5);
        CHECK(t.data.at("rows")[3].at("label") == "mean");
        CHECK(t.data.at("rows")[3].at("values").get<std::vector<double>>() == table_row(r));
        for (double v : t.data.at("rows")[4].at("values").get<std::vector<double>>()) CHECK(v == 0.0);
    }
    SUBCASE("mean and std against direct formulas") {
        const std::array<std::string, 3> labels{"a", "b", "c"};
        const std::array<RetrievalReport, 3> reports{r, random_report(6), random_report(7)};
        const MetricsTable t = metrics_report(labels, reports);
        const auto mean = t.data.at("rows")[3].at("values").get<std::vector<double>>();
        const auto sd = t.data.at("rows")[4].at("values").get<std::vector<double>>();
        for (std::size_t c = 0; c < 15; ++c) {
            const double x[3] = {table_row(reports[0])[c], table_row(reports[1])[c], table_row(reports[2])[c]};
            const double mu = (x[0] + x[1] + x[2]) / 3.0;
            const double var = ((x[0] - mu) * (x[0] - mu) + (x[1] - mu) * (x[1] - mu) + (x[2] - mu) * (x[2] - mu)) / 2.0;
            CHECK(mean[c] == doctest::Approx(mu).epsilon(1e-13));
            CHECK(sd[c] == doctest::Approx(std::sqrt(var)).epsilon(1e-12));
        }
    }
    SUBCASE("mismatched inputs are refused") {
        RetrievalReport shuffled = r;
        std::swap(shuffled.directions[0], shuffled.directions[1]);
        const std::array<std::string, 2> labels{"a", "b"};
        const std::array<RetrievalReport, 2> reports{r, shuffled};
        CHECK_THROWS(metrics_report(labels, reports));
        const std::array<std::string, 1> one{"a"};
        CHECK_THROWS(metrics_report(one, reports));
    }
}
