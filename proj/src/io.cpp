#include "triret/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <openssl/evp.h>

namespace triret {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'T', 'R', 'I', 'R', 'E', 'T', '1', '\n'};
constexpr int kFormatVersion = 1;

std::size_t dtype_size(const std::string& dtype) {
    if (dtype == "f32") return 4;
    if (dtype == "f64" || dtype == "i64") return 8;
    if (dtype == "i8" || dtype == "u8") return 1;
    throw std::invalid_argument("unknown dtype " + dtype);
}

std::size_t element_count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t s : shape) n *= s;
    return n;
}

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename U>
U get_le(const std::uint8_t* p) {
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
    return v;
}

std::string hex(const unsigned char* d, std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) s += fmt::format("{:02x}", d[i]);
    return s;
}

std::string digest(std::span<const std::uint8_t> prefix, std::span<const std::uint8_t> bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (ctx == nullptr) throw std::runtime_error("sha256: context allocation failed");
    const bool ok = EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) == 1 &&
                    EVP_DigestUpdate(ctx, prefix.data(), prefix.size()) == 1 &&
                    EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) == 1 &&
                    EVP_DigestFinal_ex(ctx, md, &len) == 1;
    EVP_MD_CTX_free(ctx);
    if (!ok) throw std::runtime_error("sha256 failed");
    return hex(md, len);
}

ParamGroup group_for(const std::string& name) {
    if (name.starts_with("enc.t.")) return ParamGroup::encoder_t;
    if (name.starts_with("enc.v.")) return ParamGroup::encoder_v;
    if (name.starts_with("enc.a.")) return ParamGroup::encoder_a;
    if (name.starts_with("fusion.")) return ParamGroup::fusion;
    throw std::invalid_argument("checkpoint: unrecognized tensor " + name);
}

template <typename T, std::size_t N>
json array_json(const std::array<T, N>& a) {
    json j = json::array();
    for (const T& v : a) j.push_back(v);
    return j;
}

template <typename T, std::size_t N>
std::array<T, N> array_from(const json& j) {
    if (!j.is_array() || j.size() != N) throw std::invalid_argument(fmt::format("expected {} values", N));
    std::array<T, N> a{};
    for (std::size_t i = 0; i < N; ++i) a[i] = j[i].get<T>();
    return a;
}

}  // namespace

std::string sha256_hex(std::span<const std::uint8_t> bytes) { return digest({}, bytes); }

std::string git_blob_hash(std::span<const std::uint8_t> bytes) {
    const std::string header = fmt::format("blob {}", bytes.size());
    std::vector<std::uint8_t> prefix(header.begin(), header.end());
    prefix.push_back(0);
    return digest(prefix, bytes);
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<std::uint8_t> out((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return out;
}

void atomic_write(const fs::path& path, std::span<const std::uint8_t> bytes) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) {
            out.close();
            fs::remove(tmp);
            throw std::runtime_error("write failed: " + tmp.string());
        }
    }
    fs::rename(tmp, path);
}

void atomic_write(const fs::path& path, const std::string& text) {
    atomic_write(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

const ArtifactTensor& Artifact::tensor(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return t;
    }
    throw std::out_of_range(fmt::format("{} artifact has no tensor {}", kind, name));
}

std::vector<std::uint8_t> encode_artifact(const Artifact& a) {
    std::vector<std::uint8_t> blob;
    json table = json::array();
    for (const auto& t : a.tensors) {
        const std::size_t nbytes = element_count(t.shape) * dtype_size(t.dtype);
        if (nbytes != t.bytes.size()) {
            throw std::invalid_argument(fmt::format("tensor {}: shape needs {} bytes, have {}", t.name,
                                                    nbytes, t.bytes.size()));
        }
        table.push_back({{"name", t.name}, {"dtype", t.dtype}, {"shape", t.shape},
                         {"offset", blob.size()}, {"nbytes", nbytes}});
        blob.insert(blob.end(), t.bytes.begin(), t.bytes.end());
    }
    json manifest = {{"format", "triret-artifact"}, {"version", kFormatVersion}, {"kind", a.kind},
                     {"meta", a.meta}, {"tensors", table}, {"blob_bytes", blob.size()},
                     {"blob_sha256", sha256_hex(blob)}};
    const std::string text = manifest.dump();

    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    put_le<std::uint64_t>(out, text.size());
    out.insert(out.end(), text.begin(), text.end());
    out.insert(out.end(), blob.begin(), blob.end());
    return out;
}

Artifact decode_artifact(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
        throw CorruptArtifact("corrupt artifact: bad header");
    }
    const auto len = get_le<std::uint64_t>(bytes.data() + 8);
    if (len > bytes.size() - 16) throw CorruptArtifact("corrupt artifact: truncated manifest");
    json manifest;
    try {
        manifest = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
    } catch (const json::exception&) {
        throw CorruptArtifact("corrupt artifact: unreadable manifest");
    }
    const auto blob = bytes.subspan(16 + len);
    if (manifest.value("format", "") != "triret-artifact" || manifest.value("version", 0) != kFormatVersion) {
        throw CorruptArtifact("corrupt artifact: unsupported format");
    }
    if (sha256_hex(blob) != manifest.at("blob_sha256").get<std::string>()) {
        throw CorruptArtifact("corrupt artifact: blob hash mismatch");
    }
    if (blob.size() != manifest.at("blob_bytes").get<std::size_t>()) {
        throw CorruptArtifact("corrupt artifact: blob length mismatch");
    }

    Artifact a;
    a.kind = manifest.at("kind").get<std::string>();
    a.meta = manifest.at("meta");
    for (const auto& e : manifest.at("tensors")) {
        ArtifactTensor t;
        t.name = e.at("name").get<std::string>();
        t.dtype = e.at("dtype").get<std::string>();
        t.shape = e.at("shape").get<std::vector<std::size_t>>();
        const auto offset = e.at("offset").get<std::size_t>();
        const auto nbytes = e.at("nbytes").get<std::size_t>();
        if (nbytes != element_count(t.shape) * dtype_size(t.dtype)) {
            throw std::runtime_error(fmt::format("artifact tensor {}: shape disagrees with byte length {}",
                                                 t.name, nbytes));
        }
        if (offset > blob.size() || nbytes > blob.size() - offset) {
            throw std::runtime_error(fmt::format("artifact tensor {}: extends past the blob", t.name));
        }
        t.bytes.assign(blob.begin() + static_cast<std::ptrdiff_t>(offset),
                       blob.begin() + static_cast<std::ptrdiff_t>(offset + nbytes));
        a.tensors.push_back(std::move(t));
    }
    return a;
}

void write_artifact(const fs::path& path, const Artifact& a) { atomic_write(path, encode_artifact(a)); }

Artifact read_artifact(const fs::path& path) { return decode_artifact(read_file(path)); }

ArtifactTensor f32_tensor(std::string name, const Tensor& t) {
    ArtifactTensor out{std::move(name), "f32", {t.rows(), t.cols()}, {}};
    out.bytes.reserve(t.size() * 4);
    for (double v : t.data()) put_le(out.bytes, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    return out;
}

ArtifactTensor f64_tensor(std::string name, const Tensor& t) {
    ArtifactTensor out{std::move(name), "f64", {t.rows(), t.cols()}, {}};
    out.bytes.reserve(t.size() * 8);
    for (double v : t.data()) put_le(out.bytes, std::bit_cast<std::uint64_t>(v));
    return out;
}

Tensor tensor_from(const ArtifactTensor& t) {
    if (t.shape.size() != 2) throw std::runtime_error(fmt::format("tensor {} is not a matrix", t.name));
    Tensor out(t.shape[0], t.shape[1]);
    auto d = out.data();
    if (t.dtype == "f32") {
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = std::bit_cast<float>(get_le<std::uint32_t>(&t.bytes[4 * i]));
    } else if (t.dtype == "f64") {
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = std::bit_cast<double>(get_le<std::uint64_t>(&t.bytes[8 * i]));
    } else {
        throw std::runtime_error(fmt::format("tensor {}: expected a float dtype, got {}", t.name, t.dtype));
    }
    return out;
}

ArtifactTensor i64_tensor(std::string name, std::span<const std::int64_t> values) {
    ArtifactTensor out{std::move(name), "i64", {values.size()}, {}};
    for (std::int64_t v : values) put_le(out.bytes, static_cast<std::uint64_t>(v));
    return out;
}

std::vector<std::int64_t> i64_values(const ArtifactTensor& t) {
    if (t.dtype != "i64") throw std::runtime_error("tensor " + t.name + " is not i64");
    std::vector<std::int64_t> out(t.bytes.size() / 8);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<std::int64_t>(get_le<std::uint64_t>(&t.bytes[8 * i]));
    return out;
}

// ---- configs ----

json to_json(const GenConfig& c) {
    return {{"n_train", c.n_train}, {"n_eval", c.n_eval}, {"latent_dim", c.latent_dim},
            {"input_dim", array_json(c.input_dim)}, {"noise_sigma", array_json(c.noise_sigma)},
            {"coupling", array_json(c.coupling)}, {"seed", c.seed}};
}

json to_json(const ModelConfig& c) {
    return {{"input_dim", array_json(c.input_dim)}, {"hidden_dim", c.hidden_dim},
            {"embed_dim", c.embed_dim}, {"activation", "gelu"}, {"seed", c.seed}};
}

json to_json(const LossConfig& c) {
    return {{"tau", c.tau}, {"tau_t", c.tau_t}, {"lambda_d", c.lambda_d}, {"lambda_t", c.lambda_t},
            {"lambda_a", c.lambda_a}};
}

json to_json(const OptimizerConfig& c) {
    return {{"kind", c.kind == OptimizerKind::adam ? "adam" : "sgd"}, {"lr", c.lr}, {"beta1", c.beta1},
            {"beta2", c.beta2}, {"eps", c.eps}, {"weight_decay", c.weight_decay}, {"steps", c.steps},
            {"batch_size", c.batch_size},
            {"schedule", c.schedule == LrSchedule::constant ? "constant" : "warmup_cosine"},
            {"warmup_fraction", c.warmup_fraction}, {"seed", c.seed}};
}

GenConfig gen_config_from_json(const json& j) {
    GenConfig c;
    c.n_train = j.at("n_train").get<std::size_t>();
    c.n_eval = j.at("n_eval").get<std::size_t>();
    c.latent_dim = j.at("latent_dim").get<std::size_t>();
    c.input_dim = array_from<std::size_t, 3>(j.at("input_dim"));
    c.noise_sigma = array_from<double, 3>(j.at("noise_sigma"));
    c.coupling = array_from<double, 3>(j.at("coupling"));
    c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    c.input_dim = array_from<std::size_t, 3>(j.at("input_dim"));
    c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    c.embed_dim = j.at("embed_dim").get<std::size_t>();
    if (j.value("activation", "gelu") != "gelu") throw std::invalid_argument("model: unsupported activation");
    c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
}

json RunConfig::to_json() const {
    json specs = json::array();
    for (const auto& s : compression) specs.push_back(s.str());
    return {{"gen", triret::to_json(gen)},
            {"model", triret::to_json(model)},
            {"loss", triret::to_json(loss)},
            {"optim", triret::to_json(optim)},
            {"eval", {{"ks", ks}}},
            {"compression", {{"specs", specs}, {"seeds", compression_seeds}}},
            {"run", {{"seeds", seeds}}}};
}

ModelConfig model_for_corpus(ModelConfig model, const GenConfig& gen) {
    model.input_dim = gen.input_dim;
    return model;
}

namespace {

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
    std::istringstream in(v);
    T out{};
    in >> out;
    if (in.fail() || !in.eof()) throw std::invalid_argument(fmt::format("config: bad value '{}' for {}", v, key));
    if constexpr (std::is_unsigned_v<T>) {
        if (trim(v).starts_with("-")) throw std::invalid_argument(fmt::format("config: {} must be >= 0", key));
    }
    return out;
}

template <typename T>
std::array<T, 3> parse_triple(const std::string& key, const std::string& v) {
    const auto items = split_list(v);
    if (items.size() != 3) throw std::invalid_argument(fmt::format("config: {} needs 3 values (T,V,A)", key));
    return {parse_number<T>(key, items[0]), parse_number<T>(key, items[1]), parse_number<T>(key, items[2])};
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
    // '#' comments are accepted alongside ';'.
    std::string cleaned;
    std::istringstream lines(text);
    for (std::string line; std::getline(lines, line);) {
        if (trim(line).starts_with("#")) continue;
        cleaned += line + "\n";
    }

    boost::property_tree::ptree tree;
    std::istringstream in(cleaned);
    try {
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw std::invalid_argument(fmt::format("config: line {}: {}", e.line(), e.message()));
    }

    RunConfig c;
    using Setter = std::function<void(const std::string&)>;
    const std::map<std::string, std::map<std::string, Setter>> keys{
        {"gen",
         {{"n_train", [&](auto& v) { c.gen.n_train = parse_number<std::size_t>("gen.n_train", v); }},
          {"n_eval", [&](auto& v) { c.gen.n_eval = parse_number<std::size_t>("gen.n_eval", v); }},
          {"latent_dim", [&](auto& v) { c.gen.latent_dim = parse_number<std::size_t>("gen.latent_dim", v); }},
          {"input_dim", [&](auto& v) { c.gen.input_dim = parse_triple<std::size_t>("gen.input_dim", v); }},
          {"noise_sigma", [&](auto& v) { c.gen.noise_sigma = parse_triple<double>("gen.noise_sigma", v); }},
          {"coupling", [&](auto& v) { c.gen.coupling = parse_triple<double>("gen.coupling", v); }},
          {"seed", [&](auto& v) { c.gen.seed = parse_number<std::uint64_t>("gen.seed", v); }}}},
        {"model",
         {{"hidden_dim", [&](auto& v) { c.model.hidden_dim = parse_number<std::size_t>("model.hidden_dim", v); }},
          {"embed_dim", [&](auto& v) { c.model.embed_dim = parse_number<std::size_t>("model.embed_dim", v); }},
          {"activation",
           [&](auto& v) {
               if (v != "gelu") throw std::invalid_argument("config: model.activation must be gelu");
           }},
          {"seed", [&](auto& v) { c.model.seed = parse_number<std::uint64_t>("model.seed", v); }}}},
        {"loss",
         {{"tau", [&](auto& v) { c.loss.tau = parse_number<double>("loss.tau", v); }},
          {"tau_t", [&](auto& v) { c.loss.tau_t = parse_number<double>("loss.tau_t", v); }},
          {"lambda_d", [&](auto& v) { c.loss.lambda_d = parse_number<double>("loss.lambda_d", v); }},
          {"lambda_t", [&](auto& v) { c.loss.lambda_t = parse_number<double>("loss.lambda_t", v); }},
          {"lambda_a", [&](auto& v) { c.loss.lambda_a = parse_number<double>("loss.lambda_a", v); }}}},
        {"optim",
         {{"kind",
           [&](auto& v) {
               if (v == "adam") c.optim.kind = OptimizerKind::adam;
               else if (v == "sgd") c.optim.kind = OptimizerKind::sgd;
               else throw std::invalid_argument("config: optim.kind must be adam or sgd");
           }},
          {"lr", [&](auto& v) { c.optim.lr = parse_number<double>("optim.lr", v); }},
          {"beta1", [&](auto& v) { c.optim.beta1 = parse_number<double>("optim.beta1", v); }},
          {"beta2", [&](auto& v) { c.optim.beta2 = parse_number<double>("optim.beta2", v); }},
          {"eps", [&](auto& v) { c.optim.eps = parse_number<double>("optim.eps", v); }},
          {"weight_decay", [&](auto& v) { c.optim.weight_decay = parse_number<double>("optim.weight_decay", v); }},
          {"steps", [&](auto& v) { c.optim.steps = parse_number<std::size_t>("optim.steps", v); }},
          {"batch_size", [&](auto& v) { c.optim.batch_size = parse_number<std::size_t>("optim.batch_size", v); }},
          {"schedule",
           [&](auto& v) {
               if (v == "constant") c.optim.schedule = LrSchedule::constant;
               else if (v == "warmup_cosine") c.optim.schedule = LrSchedule::warmup_cosine;
               else throw std::invalid_argument("config: optim.schedule must be constant or warmup_cosine");
           }},
          {"warmup_fraction",
           [&](auto& v) { c.optim.warmup_fraction = parse_number<double>("optim.warmup_fraction", v); }},
          {"seed", [&](auto& v) { c.optim.seed = parse_number<std::uint64_t>("optim.seed", v); }}}},
        {"eval",
         {{"ks",
           [&](auto& v) {
               c.ks.clear();
               for (const auto& k : split_list(v)) c.ks.push_back(parse_number<std::size_t>("eval.ks", k));
           }}}},
        {"compression",
         {{"specs",
           [&](auto& v) {
               c.compression.clear();
               for (const auto& s : split_list(v)) c.compression.push_back(CompressionSpec::parse(s));
           }},
          {"seeds", [&](auto& v) { c.compression_seeds = parse_number<std::size_t>("compression.seeds", v); }}}},
        {"run",
         {{"seeds",
           [&](auto& v) {
               c.seeds.clear();
               for (const auto& s : split_list(v)) c.seeds.push_back(parse_number<std::uint64_t>("run.seeds", s));
           }}}},
    };

    for (const auto& [section, body] : tree) {
        auto sec = keys.find(section);
        if (sec == keys.end()) throw std::invalid_argument("config: unknown section [" + section + "]");
        if (!body.data().empty()) throw std::invalid_argument("config: key outside any section: " + section);
        for (const auto& [key, value] : body) {
            auto setter = sec->second.find(key);
            if (setter == sec->second.end()) {
                throw std::invalid_argument(fmt::format("config: unknown key {}.{}", section, key));
            }
            setter->second(trim(value.get_value<std::string>()));
        }
    }

    c.model = model_for_corpus(c.model, c.gen);
    c.gen.validate();
    c.model.validate();
    c.loss.validate();
    c.optim.validate();
    if (c.ks.empty()) throw std::invalid_argument("config: eval.ks is empty");
    if (c.seeds.empty()) throw std::invalid_argument("config: run.seeds is empty");
    if (c.compression_seeds == 0) throw std::invalid_argument("config: compression.seeds must be >= 1");
    return c;
}

RunConfig load_run_config(const fs::path& path) {
    const auto bytes = read_file(path);
    return parse_run_config(std::string(bytes.begin(), bytes.end()));
}

std::string default_run_config_text() {
    const RunConfig c;
    auto join = [](const auto& xs) {
        std::string s;
        for (const auto& x : xs) s += (s.empty() ? "" : ",") + fmt::format("{}", x);
        return s;
    };
    return fmt::format(
        "[gen]\nn_train = {}\nn_eval = {}\nlatent_dim = {}\ninput_dim = {}\nnoise_sigma = {}\n"
        "coupling = {}\nseed = {}\n\n"
        "[model]\nhidden_dim = {}\nembed_dim = {}\nactivation = gelu\nseed = {}\n\n"
        "[loss]\ntau = {}\ntau_t = {}\nlambda_d = {}\nlambda_t = {}\nlambda_a = {}\n\n"
        "[optim]\nkind = adam\nlr = {}\nbeta1 = {}\nbeta2 = {}\neps = {}\nweight_decay = {}\n"
        "steps = {}\nbatch_size = {}\nschedule = constant\nwarmup_fraction = {}\nseed = {}\n\n"
        "[eval]\nks = {}\n\n"
        "[compression]\nspecs = random:16:fp32,random:16:int8,front:16:binary\nseeds = {}\n\n"
        "[run]\nseeds = {}\n",
        c.gen.n_train, c.gen.n_eval, c.gen.latent_dim, join(c.gen.input_dim), join(c.gen.noise_sigma),
        join(c.gen.coupling), c.gen.seed, c.model.hidden_dim, c.model.embed_dim, c.model.seed, c.loss.tau,
        c.loss.tau_t, c.loss.lambda_d, c.loss.lambda_t, c.loss.lambda_a, c.optim.lr, c.optim.beta1,
        c.optim.beta2, c.optim.eps, c.optim.weight_decay, c.optim.steps, c.optim.batch_size,
        c.optim.warmup_fraction, c.optim.seed, join(c.ks), c.compression_seeds, join(c.seeds));
}

// ---- artifacts ----

Artifact checkpoint_artifact(const ModelConfig& model, const ParameterSet& params, const json& meta) {
    Artifact a;
    a.kind = "checkpoint";
    a.meta = meta;
    a.meta["model"] = to_json(model);
    a.meta["seed"] = model.seed;
    for (const auto& t : params.tensors()) {
        for (double v : t.value.data()) {
            if (static_cast<double>(static_cast<float>(v)) != v) {
                throw std::invalid_argument("checkpoint: " + t.name + " is not representable at single precision");
            }
        }
        a.tensors.push_back(f32_tensor(t.name, t.value));
    }
    return a;
}

void save_checkpoint(const fs::path& path, const ModelConfig& model, const ParameterSet& params,
                     const json& meta) {
    write_artifact(path, checkpoint_artifact(model, params, meta));
}

Checkpoint load_checkpoint(const fs::path& path) {
    const Artifact a = read_artifact(path);
    if (a.kind != "checkpoint") throw std::runtime_error("not a checkpoint: " + path.string());
    Checkpoint c;
    c.model = model_config_from_json(a.meta.at("model"));
    c.meta = a.meta;
    const ParameterSet layout = init_params(c.model);
    std::vector<NamedTensor> tensors;
    for (const auto& t : a.tensors) tensors.push_back({t.name, group_for(t.name), tensor_from(t)});
    if (tensors.size() != layout.size()) throw std::runtime_error("checkpoint: wrong tensor count");
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        const auto& want = layout.tensors()[i];
        if (tensors[i].name != want.name || !tensors[i].value.same_shape(want.value)) {
            throw std::runtime_error(fmt::format("checkpoint: tensor {} does not match the model layout",
                                                 tensors[i].name));
        }
    }
    c.params = ParameterSet(std::move(tensors));
    return c;
}

Artifact corpus_artifact(const Corpus& c) {
    Artifact a;
    a.kind = "corpus";
    a.meta["gen"] = to_json(c.config);
    a.meta["seed"] = c.config.seed;
    a.meta["counts"] = {{"train", c.train.size()}, {"eval", c.eval.size()}};
    for (auto [prefix, split] : {std::pair{"train", &c.train}, std::pair{"eval", &c.eval}}) {
        for (Modality m : kModalities) {
            a.tensors.push_back(f32_tensor(fmt::format("{}.{}", prefix, modality_letter(m)), split->of(m)));
        }
        a.tensors.push_back(i64_tensor(fmt::format("{}.ids", prefix), split->ids));
    }
    return a;
}

Corpus corpus_from_artifact(const Artifact& a) {
    if (a.kind != "corpus") throw std::runtime_error("not a corpus artifact");
    Corpus c;
    c.config = gen_config_from_json(a.meta.at("gen"));
    for (auto [prefix, split] : {std::pair{"train", &c.train}, std::pair{"eval", &c.eval}}) {
        for (Modality m : kModalities) {
            split->x[index_of(m)] = tensor_from(a.tensor(fmt::format("{}.{}", prefix, modality_letter(m))));
        }
        split->ids = i64_values(a.tensor(fmt::format("{}.ids", prefix)));
        for (const auto& x : split->x) {
            if (x.rows() != split->ids.size()) throw std::runtime_error("corpus: row count mismatch");
        }
    }
    return c;
}

void save_corpus(const fs::path& path, const Corpus& c) { write_artifact(path, corpus_artifact(c)); }

Corpus load_corpus(const fs::path& path) { return corpus_from_artifact(read_artifact(path)); }

void save_embeddings(const fs::path& path, const Tensor& e, const json& meta) {
    Artifact a;
    a.kind = "embeddings";
    a.meta = meta;
    a.tensors.push_back(f64_tensor("embeddings", e));
    write_artifact(path, a);
}

Tensor load_embeddings(const fs::path& path) {
    const Artifact a = read_artifact(path);
    if (a.kind != "embeddings") throw std::runtime_error("not an embeddings artifact: " + path.string());
    return tensor_from(a.tensor("embeddings"));
}

Artifact compressed_index_artifact(const CompressedView& view, const CompressionSpec& spec,
                                   const std::string& view_name) {
    Artifact a;
    a.kind = "compressed-index";
    a.meta = {{"spec", spec.str()}, {"seed", spec.seed}, {"view", view_name}, {"dims", view.dims}};
    std::visit(
        [&](const auto& d) {
            using D = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<D, Tensor>) {
                a.tensors.push_back(f32_tensor("vectors", d));
            } else if constexpr (std::is_same_v<D, Int8Codes>) {
                ArtifactTensor codes{"codes", "i8", {d.rows, d.dim}, {}};
                for (std::int8_t v : d.codes) codes.bytes.push_back(static_cast<std::uint8_t>(v));
                a.tensors.push_back(std::move(codes));
                a.tensors.push_back(f64_tensor("scales", Tensor(d.rows, 1, d.scales)));
            } else {
                a.tensors.push_back({"bits", "u8", {d.rows, d.bytes_per_vector()}, d.bits});
            }
        },
        view.data);
    return a;
}

// ---- reports ----

json report_to_json(const RetrievalReport& r) {
    json dirs = json::array();
    for (const auto& m : r.directions) {
        json recall = json::object();
        for (std::size_t i = 0; i < r.ks.size(); ++i) recall[fmt::format("R@{}", r.ks[i])] = m.recall[i];
        dirs.push_back({{"direction", m.direction.name()}, {"recall", recall}, {"ndcg10", m.ndcg10}});
    }
    return {{"n", r.n},          {"ks", r.ks},
            {"directions", dirs}, {"avg_single", r.avg_single},
            {"avg_dual", r.avg_dual}, {"avg_all", r.avg_all}};
}

RetrievalReport report_from_json(const json& j) {
    RetrievalReport r;
    r.n = j.at("n").get<std::size_t>();
    r.ks = j.at("ks").get<std::vector<std::size_t>>();
    for (const auto& d : j.at("directions")) {
        const auto name = d.at("direction").get<std::string>();
        const auto arrow = name.find("->");
        if (arrow == std::string::npos) throw std::invalid_argument("bad direction " + name);
        DirectionMetrics m{{View::parse(name.substr(0, arrow)), View::parse(name.substr(arrow + 2))}, {}, 0.0};
        for (std::size_t k : r.ks) m.recall.push_back(d.at("recall").at(fmt::format("R@{}", k)).get<double>());
        m.ndcg10 = d.at("ndcg10").get<double>();
        r.directions.push_back(std::move(m));
    }
    r.avg_single = j.at("avg_single").get<double>();
    r.avg_dual = j.at("avg_dual").get<double>();
    r.avg_all = j.at("avg_all").get<double>();
    return r;
}

json compressed_report_to_json(const CompressedReport& r) {
    json per_seed = json::array();
    for (const auto& p : r.per_seed) per_seed.push_back(report_to_json(p));
    return {{"spec", r.spec.str()}, {"dim_seeds", r.dim_seeds}, {"mean", report_to_json(r.mean)},
            {"std", report_to_json(r.stddev)}, {"per_seed", per_seed}};
}

json geometry_to_json(const GeometryReport& g) {
    return {{"intra_mean", g.intra_mean}, {"inter_mean", g.inter_mean}, {"gap", g.gap}};
}

json attractor_to_json(const AttractorReport& a, const Direction& d) {
    return {{"direction", d.name()}, {"k", a.k}, {"top1_coverage_fraction", a.top1_coverage_fraction},
            {"topk_mass", a.topk_mass}, {"top_targets", a.top_targets}};
}

std::vector<std::string> table_columns() {
    std::vector<std::string> cols;
    for (const auto& d : benchmark_directions()) cols.push_back(d.name());
    cols.insert(cols.end(), {"single", "dual", "all"});
    return cols;
}

std::vector<double> table_row(const RetrievalReport& r) {
    std::vector<double> row;
    for (const auto& d : benchmark_directions()) row.push_back(r.recall_at(d, 1));
    row.insert(row.end(), {r.avg_single, r.avg_dual, r.avg_all});
    return row;
}

MetricsTable metrics_report(std::span<const std::string> labels, std::span<const RetrievalReport> reports) {
    if (reports.empty()) throw std::invalid_argument("metrics_report: no reports");
    if (labels.size() != reports.size()) throw std::invalid_argument("metrics_report: one label per report");
    const auto& dirs = benchmark_directions();
    for (const auto& r : reports) {
        bool same = r.directions.size() == dirs.size();
        for (std::size_t i = 0; same && i < dirs.size(); ++i) same = r.directions[i].direction == dirs[i];
        if (!same) throw std::invalid_argument("metrics_report: reports disagree on the direction set");
        if (std::find(r.ks.begin(), r.ks.end(), std::size_t{1}) == r.ks.end()) {
            throw std::invalid_argument("metrics_report: report lacks R@1");
        }
    }

    std::vector<std::pair<std::string, std::vector<double>>> rows;
    for (std::size_t i = 0; i < reports.size(); ++i) rows.emplace_back(labels[i], table_row(reports[i]));
    if (reports.size() > 1) {
        const std::size_t cols = rows[0].second.size();
        const double n = static_cast<double>(reports.size());
        std::vector<double> mean(cols), sd(cols);
        for (std::size_t c = 0; c < cols; ++c) {
            // Anchored at the first row so identical rows give an exact mean and zero std.
            const double x0 = rows[0].second[c];
            double acc = 0.0;
            for (std::size_t r = 0; r < reports.size(); ++r) acc += rows[r].second[c] - x0;
            mean[c] = x0 + acc / n;
            double ss = 0.0;
            for (std::size_t r = 0; r < reports.size(); ++r) {
                const double dev = rows[r].second[c] - mean[c];
                ss += dev * dev;
            }
            sd[c] = std::sqrt(ss / (n - 1.0));
        }
        rows.emplace_back("mean", std::move(mean));
        rows.emplace_back("std", std::move(sd));
    }

    const auto columns = table_columns();
    MetricsTable out;
    out.data = {{"metric", "R@1"}, {"columns", columns}, {"rows", json::array()}};
    std::size_t label_width = 5;
    for (const auto& [label, _] : rows) label_width = std::max(label_width, label.size());
    out.text = fmt::format("{:<{}}", "label", label_width);
    for (const auto& c : columns) out.text += fmt::format(" {:>7}", c);
    out.text += "\n";
    for (const auto& [label, values] : rows) {
        out.data["rows"].push_back({{"label", label}, {"values", values}});
        out.text += fmt::format("{:<{}}", label, label_width);
        for (double v : values) out.text += fmt::format(" {:>7.2f}", v);
        out.text += "\n";
    }
    return out;
}

}  // namespace triret
