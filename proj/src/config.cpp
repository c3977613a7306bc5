#include "shiftforge/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "shiftforge/data.hpp"

namespace shiftforge {

namespace {
std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("key '" + key + "' expects a boolean, got '" + v + "'");
}

template <typename T>
T parse_num(const std::string& v, const std::string& key) {
    std::istringstream is(v);
    T out{};
    is >> out;
    if (!is || !is.eof()) throw ConfigError("key '" + key + "' expects a number, got '" + v + "'");
    return out;
}
}  // namespace

ModelSpec ExperimentConfig::model_spec() const {
    ModelSpec ms;
    ms.arch = architecture_from_string(model);
    ms.mode = weight_mode_from_string(mode);
    ms.t = t;
    ms.first_layer_fp32 = first_layer_fp32;
    ms.quantize_last = quantize_last;
    ms.ste.clip_range = ste_clip;
    ms.delta_auto = delta_mode == "auto";
    ms.delta = delta;
    ms.ternary_scaled = ternary_scaled;
    ms.ds_pmin = ds_pmin;
    ms.ds_pmax = ds_pmax;
    return ms;
}

RegularizerConfig ExperimentConfig::reg_config() const {
    RegularizerConfig rc;
    rc.alpha = alpha;
    rc.lambda = lambda;
    rc.alpha_decay = alpha_decay_from_string(alpha_decay);
    return rc;
}

LrSchedule ExperimentConfig::lr_sched() const {
    LrSchedule s;
    s.initial_lr = lr;
    s.total_epochs = epochs;
    s.kind = lr_kind_from_string(lr_schedule);
    return s;
}

std::string ExperimentConfig::resolved_data_dir() const {
    if (!data_dir.empty()) return data_dir;
    const char* root = std::getenv("SHIFTFORGE_DATA");
    std::string base = root ? root : "data";
    std::string ds = dataset;
    auto open_paren = ds.find('(');
    if (open_paren != std::string::npos) ds = ds.substr(0, open_paren);
    if (ds == "cifar10_subset") ds = "cifar10";
    return (std::filesystem::path(base) / ds).string();
}

void ExperimentConfig::set_key(const std::string& key, const std::string& value) {
    if (key == "model") model = value;
    else if (key == "mode") mode = value;
    else if (key == "t") t = parse_num<int>(value, key);
    else if (key == "first_layer_fp32") first_layer_fp32 = parse_bool(value, key);
    else if (key == "quantize_last") quantize_last = parse_bool(value, key);
    else if (key == "ste_clip") ste_clip = parse_num<float>(value, key);
    else if (key == "delta_mode") delta_mode = value;
    else if (key == "delta") delta = parse_num<float>(value, key);
    else if (key == "ternary_scaled") ternary_scaled = parse_bool(value, key);
    else if (key == "ds_pmin") ds_pmin = parse_num<int>(value, key);
    else if (key == "ds_pmax") ds_pmax = parse_num<int>(value, key);
    else if (key == "dataset") dataset = value;
    else if (key == "data_dir") data_dir = value;
    else if (key == "epochs") epochs = parse_num<int>(value, key);
    else if (key == "batch_size") batch_size = parse_num<int>(value, key);
    else if (key == "lr") lr = parse_num<float>(value, key);
    else if (key == "lr_schedule") lr_schedule = value;
    else if (key == "momentum") momentum = parse_num<float>(value, key);
    else if (key == "latent_lr_scale") latent_lr_scale = parse_num<float>(value, key);
    else if (key == "lambda") lambda = parse_num<float>(value, key);
    else if (key == "alpha") alpha = parse_num<float>(value, key);
    else if (key == "alpha_decay") alpha_decay = value;
    else if (key == "l2_scope") l2_scope = value;
    else if (key == "seed") seed = parse_num<uint64_t>(value, key);
    else if (key == "snapshot_every") snapshot_every = parse_num<int>(value, key);
    else if (key == "histogram_bins") histogram_bins = parse_num<int>(value, key);
    else if (key == "out_dir") out_dir = value;
    else if (key == "threads") threads = parse_num<int>(value, key);
    else if (key == "eval_batch") eval_batch = parse_num<int>(value, key);
    else throw ConfigError("unknown config key '" + key + "'");
}

void ExperimentConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 2) throw ConfigError("batch_size must be >= 2 (batchnorm training mode)");
    if (lr <= 0.0f) throw ConfigError("lr must be positive");
    if (momentum < 0.0f || momentum >= 1.0f) throw ConfigError("momentum must be in [0,1)");
    if (latent_lr_scale <= 0.0f) throw ConfigError("latent_lr_scale must be positive");
    if (snapshot_every < 1) throw ConfigError("snapshot_every must be >= 1");
    if (t < 1) throw ConfigError("t must be >= 1");
    if (delta_mode != "auto" && delta_mode != "fixed")
        throw ConfigError("delta_mode must be auto|fixed");
    if (l2_scope != "all" && l2_scope != "weights" && l2_scope != "fp_layers")
        throw ConfigError("l2_scope must be all|weights|fp_layers");
    // fail fast on bad enum strings
    model_spec();
    reg_config();
    lr_sched();
    int subset = 0;
    dataset_kind_from_string(dataset, &subset);
}

nlohmann::json ExperimentConfig::to_json() const {
    return {{"model", model},
            {"mode", mode},
            {"t", t},
            {"first_layer_fp32", first_layer_fp32},
            {"quantize_last", quantize_last},
            {"ste_clip", ste_clip},
            {"delta_mode", delta_mode},
            {"delta", delta},
            {"ternary_scaled", ternary_scaled},
            {"ds_pmin", ds_pmin},
            {"ds_pmax", ds_pmax},
            {"dataset", dataset},
            {"data_dir", data_dir},
            {"epochs", epochs},
            {"batch_size", batch_size},
            {"lr", lr},
            {"lr_schedule", lr_schedule},
            {"momentum", momentum},
            {"latent_lr_scale", latent_lr_scale},
            {"lambda", lambda},
            {"alpha", alpha},
            {"alpha_decay", alpha_decay},
            {"l2_scope", l2_scope},
            {"seed", seed},
            {"snapshot_every", snapshot_every},
            {"histogram_bins", histogram_bins},
            {"out_dir", out_dir},
            {"threads", threads},
            {"eval_batch", eval_batch}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    c.model = j.at("model").get<std::string>();
    c.mode = j.at("mode").get<std::string>();
    c.t = j.at("t").get<int>();
    c.first_layer_fp32 = j.at("first_layer_fp32").get<bool>();
    c.quantize_last = j.at("quantize_last").get<bool>();
    c.ste_clip = j.at("ste_clip").get<float>();
    c.delta_mode = j.at("delta_mode").get<std::string>();
    c.delta = j.at("delta").get<float>();
    c.ternary_scaled = j.at("ternary_scaled").get<bool>();
    c.ds_pmin = j.at("ds_pmin").get<int>();
    c.ds_pmax = j.at("ds_pmax").get<int>();
    c.dataset = j.at("dataset").get<std::string>();
    c.data_dir = j.at("data_dir").get<std::string>();
    c.epochs = j.at("epochs").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.lr = j.at("lr").get<float>();
    c.lr_schedule = j.at("lr_schedule").get<std::string>();
    c.momentum = j.at("momentum").get<float>();
    c.latent_lr_scale = j.at("latent_lr_scale").get<float>();
    c.lambda = j.at("lambda").get<float>();
    c.alpha = j.at("alpha").get<float>();
    c.alpha_decay = j.at("alpha_decay").get<std::string>();
    c.l2_scope = j.at("l2_scope").get<std::string>();
    c.seed = j.at("seed").get<uint64_t>();
    c.snapshot_every = j.at("snapshot_every").get<int>();
    c.histogram_bins = j.at("histogram_bins").get<int>();
    c.out_dir = j.at("out_dir").get<std::string>();
    c.threads = j.at("threads").get<int>();
    c.eval_batch = j.at("eval_batch").get<int>();
    return c;
}

ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config '" + path + "'");
    ExperimentConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
        cfg.set_key(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    cfg.validate();
    return cfg;
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string::npos)
        throw ConfigError("override '" + assignment + "' is not of the form key=value");
    cfg.set_key(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void write_config_file(const std::string& path, const ExperimentConfig& cfg) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write config '" + path + "'");
    nlohmann::json j = cfg.to_json();
    for (auto& [key, value] : j.items()) {
        os << key << " = ";
        if (value.is_string()) os << value.get<std::string>();
        else os << value.dump();
        os << '\n';
    }
}

}  // namespace shiftforge
