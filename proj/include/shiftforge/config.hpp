#pragma once

#include <map>
#include <string>

#include "shiftforge/layers.hpp"
#include "shiftforge/regularize.hpp"

#include "json.hpp"

namespace shiftforge {

// Flat declarative run configuration. Parsed from `key = value` text files;
// every key has a default, unknown keys are rejected.
struct ExperimentConfig {
    // model
    std::string model = "cnn_mnist";
    std::string mode = "fp32";
    int t = 2;
    bool first_layer_fp32 = true;
    bool quantize_last = true;
    float ste_clip = 1.0f;
    std::string delta_mode = "auto";  // auto | fixed
    float delta = 0.3f;
    bool ternary_scaled = false;
    int ds_pmin = -3;
    int ds_pmax = 0;
    // data
    std::string dataset = "mnist";
    std::string data_dir;  // empty: $SHIFTFORGE_DATA/<dataset>
    // optimization
    int epochs = 10;
    int batch_size = 128;
    float lr = 0.05f;
    std::string lr_schedule = "cosine";
    float momentum = 0.9f;
    float latent_lr_scale = 1.0f;
    float lambda = 1e-4f;
    float alpha = 1e-5f;
    std::string alpha_decay = "none";
    std::string l2_scope = "all";  // all | weights
    uint64_t seed = 1;
    // bookkeeping
    int snapshot_every = 1;
    int histogram_bins = 40;
    std::string out_dir = "runs/run";
    int threads = 0;  // 0: leave OpenMP defaults
    int eval_batch = 256;

    ModelSpec model_spec() const;
    RegularizerConfig reg_config() const;
    LrSchedule lr_sched() const;
    std::string resolved_data_dir() const;

    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);

    void set_key(const std::string& key, const std::string& value);
    void validate() const;
};

ExperimentConfig parse_config_file(const std::string& path);
// "key=value" override, CLI-style
void apply_override(ExperimentConfig& cfg, const std::string& assignment);
void write_config_file(const std::string& path, const ExperimentConfig& cfg);

}  // namespace shiftforge
