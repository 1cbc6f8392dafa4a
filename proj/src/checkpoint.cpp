#include "seednorm/checkpoint.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace seednorm {

namespace {

using ojson = nlohmann::ordered_json;

constexpr const char* kFormat = "seednorm-checkpoint";
constexpr int kVersion = 1;

[[noreturn]] void bad(const std::string& msg) {
    throw std::invalid_argument("checkpoint: " + msg);
}

std::uint64_t parse_u64(const ojson& j, const char* key) {
    try {
        return std::stoull(j.at(key).get<std::string>());
    } catch (const std::exception&) {
        bad(std::string("bad ") + key);
    }
}

Vector read_vector(const ojson& j, const char* key, std::size_t size, const std::string& name) {
    Vector v = j.at(key).get<Vector>();
    if (v.size() != size) bad(name + "." + key + " has the wrong length");
    return v;
}

}  // namespace

ojson model_config_to_json(const ModelConfig& cfg) {
    ojson j;
    j["layers"] = cfg.layers;
    j["hidden"] = cfg.hidden;
    j["attn_heads"] = cfg.attn_heads;
    j["vocab"] = cfg.vocab;
    j["context"] = cfg.context;
    j["ffn_hidden"] = cfg.ffn_hidden;
    j["norm"] = std::string(to_string(cfg.norm));
    j["norm_heads"] = cfg.norm_heads;
    j["alpha_init"] = cfg.alpha_init;
    j["dyt_alpha_init"] = cfg.dyt_alpha_init;
    j["eps"] = cfg.eps;
    j["qk_norm_per_head"] = cfg.qk_norm_per_head;
    return j;
}

ModelConfig model_config_from_json(const ojson& j) {
    static const std::set<std::string> keys{
        "layers",     "hidden",     "attn_heads", "vocab", "context",          "ffn_hidden",
        "norm",       "norm_heads", "alpha_init", "eps",   "qk_norm_per_head", "dyt_alpha_init"};
    if (!j.is_object()) bad("model_config must be an object");
    for (const auto& [k, v] : j.items()) {
        if (!keys.contains(k)) bad("unknown model_config key " + k);
    }
    try {
        ModelConfig c;
        c.layers = j.at("layers").get<std::size_t>();
        c.hidden = j.at("hidden").get<std::size_t>();
        c.attn_heads = j.at("attn_heads").get<std::size_t>();
        c.vocab = j.at("vocab").get<std::size_t>();
        c.context = j.at("context").get<std::size_t>();
        c.ffn_hidden = j.at("ffn_hidden").get<std::size_t>();
        c.norm = parse_norm_kind(j.at("norm").get<std::string>());
        c.norm_heads = j.at("norm_heads").get<std::size_t>();
        c.alpha_init = j.at("alpha_init").get<double>();
        c.dyt_alpha_init = j.at("dyt_alpha_init").get<double>();
        c.eps = j.at("eps").get<double>();
        c.qk_norm_per_head = j.at("qk_norm_per_head").get<bool>();
        validate(c);
        return c;
    } catch (const nlohmann::json::exception& e) {
        bad(std::string("model_config: ") + e.what());
    }
}

ojson checkpoint_to_json(const TrainSession& s) {
    ojson j;
    j["format"] = kFormat;
    j["version"] = kVersion;
    j["model_config"] = model_config_to_json(s.model.cfg);
    j["optimizer"] = {{"step", s.optimizer.step}, {"last_lr", s.optimizer.last_lr}};
    j["data_rng"] = {{"seed", std::to_string(s.data_rng.seed())},
                     {"counter", std::to_string(s.data_rng.counter())}};
    ojson curve = ojson::array();
    for (const auto& r : s.curve.records) curve.push_back({r.step, r.loss, r.grad_norm, r.wall_time});
    j["curve"] = std::move(curve);

    const auto views = tensor_views(s.model);
    ojson tensors = ojson::array();
    for (std::size_t t = 0; t < s.layout.size(); ++t) {
        const TensorInfo& info = s.layout[t];
        ojson e;
        e["name"] = info.name;
        e["role"] = std::string(to_string(info.role));
        e["rows"] = info.rows;
        e["cols"] = info.cols;
        e["decay"] = static_cast<bool>(s.optimizer.decay[t]);
        e["data"] = Vector(views[t].begin(), views[t].end());
        e["m"] = s.optimizer.m[t];
        e["v"] = s.optimizer.v[t];
        tensors.push_back(std::move(e));
    }
    j["tensors"] = std::move(tensors);
    return j;
}

TrainSession checkpoint_from_json(const ojson& j) {
    try {
        if (j.at("format") != kFormat) bad("unrecognized format");
        if (j.at("version") != kVersion) bad("unsupported version");
        TrainSession s;
        const ModelConfig cfg = model_config_from_json(j.at("model_config"));
        Rng unused;
        s.model = build_model(cfg, unused);
        s.layout = parameter_layout(cfg);

        const auto& opt = j.at("optimizer");
        s.optimizer.step = opt.at("step").get<std::uint64_t>();
        s.optimizer.last_lr = opt.at("last_lr").get<double>();
        const auto& rng = j.at("data_rng");
        s.data_rng = Rng(parse_u64(rng, "seed"), parse_u64(rng, "counter"));
        for (const auto& r : j.at("curve")) {
            if (!r.is_array() || r.size() != 4) bad("curve rows must have 4 entries");
            s.curve.records.push_back({r[0].get<std::uint64_t>(), r[1].get<double>(),
                                       r[2].get<double>(), r[3].get<double>()});
        }

        const auto& tensors = j.at("tensors");
        if (!tensors.is_array() || tensors.size() != s.layout.size()) bad("tensor count mismatch");
        auto views = tensor_views(s.model);
        for (std::size_t t = 0; t < s.layout.size(); ++t) {
            const TensorInfo& info = s.layout[t];
            const auto& e = tensors[t];
            if (e.at("name") != info.name) bad("expected tensor " + info.name);
            if (e.at("rows") != info.rows || e.at("cols") != info.cols) bad(info.name + " shape");
            const Vector data = read_vector(e, "data", info.size(), info.name);
            std::ranges::copy(data, views[t].begin());
            s.optimizer.m.push_back(read_vector(e, "m", info.size(), info.name));
            s.optimizer.v.push_back(read_vector(e, "v", info.size(), info.name));
            s.optimizer.decay.push_back(e.at("decay").get<bool>());
        }
        return s;
    } catch (const nlohmann::json::exception& e) {
        bad(e.what());
    }
}

void save_checkpoint(const TrainSession& session, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
    out << checkpoint_to_json(session).dump() << '\n';
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

TrainSession load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("checkpoint: cannot open " + path);
    ojson j;
    try {
        j = ojson::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        bad(e.what());
    }
    return checkpoint_from_json(j);
}

}  // namespace seednorm
