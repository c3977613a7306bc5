#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "shiftforge/ops.hpp"
#include "shiftforge/quantize.hpp"
#include "shiftforge/tensor.hpp"

#include "json.hpp"

namespace shiftforge {

enum class WeightMode { Fp32, TernaryQuant, DeepShift, S3Ternary, S3Shift };

WeightMode weight_mode_from_string(const std::string& s);
std::string to_string(WeightMode m);

struct QuantConfig {
    WeightMode mode = WeightMode::Fp32;
    int t = 2;  // shift latent count for s3_shift
    SteConfig ste{};
    bool delta_auto = true;  // ternary baseline: delta = 0.7 * mean|w|
    float delta = 0.3f;      // used when delta_auto is false
    bool ternary_scaled = false;  // multiply the projection by mean(|w| : |w| >= delta)
    int ds_pmin = -3;
    int ds_pmax = 0;
};

// One conv or linear layer whose weight is produced by the configured
// parameterization. The bias, when present, stays full precision.
struct WeightLayer {
    enum class Kind { Conv2d, Linear };

    Kind kind = Kind::Linear;
    std::string name;
    // linear
    int in_features = 0, out_features = 0;
    // conv
    int in_ch = 0, out_ch = 0, ksize = 0, stride = 1, pad = 0;
    bool has_bias = true;
    QuantConfig qc;

    Tensor weight;  // latent for fp32 / ternary / deepshift modes
    S3Weight s3;    // latents for s3 modes
    Tensor bias;

    Tensor last_effective;    // discrete (or fp32) weight used by the last forward
    float last_delta = 0.0f;  // ternary threshold actually applied

    static WeightLayer conv2d(const std::string& name, int in_ch, int out_ch, int ksize, int stride,
                              int pad, bool bias, const QuantConfig& qc);
    static WeightLayer linear(const std::string& name, int in_features, int out_features, bool bias,
                              const QuantConfig& qc);

    void init(Rng& rng);
    std::vector<int> weight_shape() const;
    Tensor effective_weight();
    Tensor forward(const Tensor& x);
    bool quantized() const { return qc.mode != WeightMode::Fp32; }
};

struct BatchNormLayer {
    std::string name;
    int channels = 0;
    float momentum = 0.1f;
    float eps = 1e-5f;
    Tensor gamma, beta, running_mean, running_var;

    static BatchNormLayer make(const std::string& name, int channels);
    Tensor forward(const Tensor& x, bool training);
};

enum class Architecture { MlpMnist, CnnMnist, ResNet20Cifar };

Architecture architecture_from_string(const std::string& s);
std::string to_string(Architecture a);

struct ModelSpec {
    Architecture arch = Architecture::MlpMnist;
    WeightMode mode = WeightMode::Fp32;
    int t = 2;
    bool first_layer_fp32 = true;
    bool quantize_last = true;
    SteConfig ste{};
    bool delta_auto = true;
    float delta = 0.3f;
    bool ternary_scaled = false;
    int ds_pmin = -3;
    int ds_pmax = 0;

    QuantConfig quant_config() const;
    int input_channels() const;
    int input_size() const;
    int num_classes() const { return 10; }
};

struct ParamInfo {
    std::string name;
    Tensor tensor;
    bool is_w_sparse = false;
    bool is_quant_latent = false;  // latent behind a discrete projection
};

class Model {
public:
    virtual ~Model() = default;
    virtual Tensor forward(const Tensor& x, bool training) = 0;
    virtual std::vector<ParamInfo> parameters() = 0;
    virtual std::vector<WeightLayer*> weight_layers() = 0;
    virtual std::vector<BatchNormLayer*> norm_layers() = 0;
    const ModelSpec& spec() const { return spec_; }

    size_t parameter_count();
    // every persistent tensor, for checkpoints: parameters + running stats
    std::vector<ParamInfo> state();
    void zero_grad();

protected:
    ModelSpec spec_;
};

std::unique_ptr<Model> build_model(const ModelSpec& spec, Rng& rng);

struct LayerGradStats {
    std::string name;
    double grad_l2 = 0.0;
    double zero_fraction = 0.0;
};

// Per-layer gradient norms of the effective weights after one backward.
std::vector<LayerGradStats> grad_flow_report(Model& model);

// ---- named-tensor container (.sft), shared by checkpoints and snapshots ----
void save_named_tensors(const std::string& path, const nlohmann::json& meta,
                        const std::vector<std::pair<std::string, Tensor>>& tensors);
nlohmann::json load_named_tensors(const std::string& path,
                                  std::map<std::string, Tensor>& tensors);

}  // namespace shiftforge
