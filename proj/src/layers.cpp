#include "shiftforge/layers.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace shiftforge {

WeightMode weight_mode_from_string(const std::string& s) {
    if (s == "fp32") return WeightMode::Fp32;
    if (s == "ternary_quantizer") return WeightMode::TernaryQuant;
    if (s == "deepshift") return WeightMode::DeepShift;
    if (s == "s3_ternary") return WeightMode::S3Ternary;
    if (s == "s3_shift") return WeightMode::S3Shift;
    throw ConfigError("unknown weight mode '" + s +
                      "' (expected fp32|ternary_quantizer|deepshift|s3_ternary|s3_shift)");
}

std::string to_string(WeightMode m) {
    switch (m) {
        case WeightMode::Fp32: return "fp32";
        case WeightMode::TernaryQuant: return "ternary_quantizer";
        case WeightMode::DeepShift: return "deepshift";
        case WeightMode::S3Ternary: return "s3_ternary";
        case WeightMode::S3Shift: return "s3_shift";
    }
    return "fp32";
}

Architecture architecture_from_string(const std::string& s) {
    if (s == "mlp_mnist") return Architecture::MlpMnist;
    if (s == "cnn_mnist") return Architecture::CnnMnist;
    if (s == "resnet20_cifar") return Architecture::ResNet20Cifar;
    throw ConfigError("unknown architecture '" + s +
                      "' (expected mlp_mnist|cnn_mnist|resnet20_cifar)");
}

std::string to_string(Architecture a) {
    switch (a) {
        case Architecture::MlpMnist: return "mlp_mnist";
        case Architecture::CnnMnist: return "cnn_mnist";
        case Architecture::ResNet20Cifar: return "resnet20_cifar";
    }
    return "mlp_mnist";
}

QuantConfig ModelSpec::quant_config() const {
    QuantConfig qc;
    qc.mode = mode;
    qc.t = t;
    qc.ste = ste;
    qc.delta_auto = delta_auto;
    qc.delta = delta;
    qc.ternary_scaled = ternary_scaled;
    qc.ds_pmin = ds_pmin;
    qc.ds_pmax = ds_pmax;
    return qc;
}

int ModelSpec::input_channels() const {
    return arch == Architecture::ResNet20Cifar ? 3 : 1;
}

int ModelSpec::input_size() const { return arch == Architecture::ResNet20Cifar ? 32 : 28; }

WeightLayer WeightLayer::conv2d(const std::string& name, int in_ch, int out_ch, int ksize,
                                int stride, int pad, bool bias, const QuantConfig& qc) {
    WeightLayer l;
    l.kind = Kind::Conv2d;
    l.name = name;
    l.in_ch = in_ch;
    l.out_ch = out_ch;
    l.ksize = ksize;
    l.stride = stride;
    l.pad = pad;
    l.has_bias = bias;
    l.qc = qc;
    return l;
}

WeightLayer WeightLayer::linear(const std::string& name, int in_features, int out_features,
                                bool bias, const QuantConfig& qc) {
    WeightLayer l;
    l.kind = Kind::Linear;
    l.name = name;
    l.in_features = in_features;
    l.out_features = out_features;
    l.has_bias = bias;
    l.qc = qc;
    return l;
}

std::vector<int> WeightLayer::weight_shape() const {
    if (kind == Kind::Conv2d) return {out_ch, in_ch, ksize, ksize};
    return {out_features, in_features};
}

void WeightLayer::init(Rng& rng) {
    auto shape = weight_shape();
    int fan_in = kind == Kind::Conv2d ? in_ch * ksize * ksize : in_features;
    switch (qc.mode) {
        case WeightMode::Fp32:
        case WeightMode::TernaryQuant: {
            float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
            weight = Tensor::uniform(shape, -bound, bound, rng, true);
            break;
        }
        case WeightMode::DeepShift:
            // latents spread across the representable power-of-two range so the
            // quantizer does not zero the whole layer at initialization
            weight = Tensor::uniform(shape, -1.0f, 1.0f, rng, true);
            break;
        case WeightMode::S3Ternary:
            s3 = init_s3(shape, 0, rng, true);
            break;
        case WeightMode::S3Shift:
            s3 = init_s3(shape, qc.t, rng, true);
            break;
    }
    if (has_bias) {
        int out = kind == Kind::Conv2d ? out_ch : out_features;
        bias = Tensor::zeros({out}, true);
    }
}

Tensor WeightLayer::effective_weight() {
    Tensor eff;
    switch (qc.mode) {
        case WeightMode::Fp32:
            eff = weight;
            break;
        case WeightMode::TernaryQuant: {
            last_delta = qc.delta_auto ? ternary_auto_delta(weight) : qc.delta;
            eff = ternary_quantize(weight, last_delta, qc.ste);
            if (qc.ternary_scaled) {
                // per-layer magnitude, computed from the live weights each forward
                double s = 0.0;
                size_t n = 0;
                for (float v : weight.values())
                    if (std::fabs(v) >= last_delta) {
                        s += std::fabs(v);
                        ++n;
                    }
                if (n > 0) eff = affine(eff, static_cast<float>(s / static_cast<double>(n)), 0.0f);
            }
            break;
        }
        case WeightMode::DeepShift:
            eff = deepshift_quantize(weight, qc.ds_pmin, qc.ds_pmax);
            break;
        case WeightMode::S3Ternary:
            eff = s3_project_ternary(s3, qc.ste);
            break;
        case WeightMode::S3Shift:
            eff = s3_project_shift(s3, qc.ste);
            break;
    }
    last_effective = eff;
    return eff;
}

Tensor WeightLayer::forward(const Tensor& x) {
    Tensor w = effective_weight();
    if (kind == Kind::Conv2d) {
        Tensor out = shiftforge::conv2d(x, w, stride, pad);
        if (has_bias) out = bias_add_nchw(out, bias);
        return out;
    }
    Tensor out = shiftforge::linear(x, w);
    if (has_bias) out = bias_add_rows(out, bias);
    return out;
}

BatchNormLayer BatchNormLayer::make(const std::string& name, int channels) {
    BatchNormLayer bn;
    bn.name = name;
    bn.channels = channels;
    bn.gamma = Tensor::full({channels}, 1.0f, true);
    bn.beta = Tensor::zeros({channels}, true);
    bn.running_mean = Tensor::zeros({channels});
    bn.running_var = Tensor::full({channels}, 1.0f);
    return bn;
}

Tensor BatchNormLayer::forward(const Tensor& x, bool training) {
    return batchnorm(x, gamma, beta, running_mean, running_var, training, momentum, eps);
}

namespace {

void collect_layer_params(WeightLayer& l, std::vector<ParamInfo>& out) {
    bool quant = l.quantized();
    switch (l.qc.mode) {
        case WeightMode::Fp32:
        case WeightMode::TernaryQuant:
        case WeightMode::DeepShift:
            out.push_back({l.name + ".weight", l.weight, false, quant});
            break;
        case WeightMode::S3Ternary:
        case WeightMode::S3Shift:
            out.push_back({l.name + ".w_sign", l.s3.w_sign, false, true});
            out.push_back({l.name + ".w_sparse", l.s3.w_sparse, true, true});
            for (size_t i = 0; i < l.s3.shift_latents.size(); ++i)
                out.push_back({l.name + ".w_shift" + std::to_string(i + 1), l.s3.shift_latents[i],
                               false, true});
            break;
    }
    if (l.has_bias) out.push_back({l.name + ".bias", l.bias, false, false});
}

void collect_bn_params(BatchNormLayer& bn, std::vector<ParamInfo>& out) {
    out.push_back({bn.name + ".gamma", bn.gamma, false, false});
    out.push_back({bn.name + ".beta", bn.beta, false, false});
}

class MlpMnist final : public Model {
public:
    MlpMnist(const ModelSpec& spec, Rng& rng) {
        spec_ = spec;
        QuantConfig first = spec.quant_config();
        if (spec.first_layer_fp32) first.mode = WeightMode::Fp32;
        QuantConfig last = spec.quant_config();
        if (!spec.quantize_last) last.mode = WeightMode::Fp32;
        fc1_ = WeightLayer::linear("fc1", 784, 256, true, first);
        fc2_ = WeightLayer::linear("fc2", 256, 10, true, last);
        fc1_.init(rng);
        fc2_.init(rng);
    }

    Tensor forward(const Tensor& x, bool) override {
        Tensor h = flatten(x);
        h = relu(fc1_.forward(h));
        return fc2_.forward(h);
    }

    std::vector<ParamInfo> parameters() override {
        std::vector<ParamInfo> p;
        collect_layer_params(fc1_, p);
        collect_layer_params(fc2_, p);
        return p;
    }

    std::vector<WeightLayer*> weight_layers() override { return {&fc1_, &fc2_}; }
    std::vector<BatchNormLayer*> norm_layers() override { return {}; }

private:
    WeightLayer fc1_, fc2_;
};

// conv-bn-relu-pool x2 + linear classifier; the closing 1-d batchnorm keeps
// logits well scaled when the classifier weight is discrete (powers of two on
// a 1568-wide fan-in would otherwise saturate softmax from the first step)
class CnnMnist final : public Model {
public:
    CnnMnist(const ModelSpec& spec, Rng& rng) {
        spec_ = spec;
        QuantConfig qc = spec.quant_config();
        QuantConfig first = qc;
        if (spec.first_layer_fp32) first.mode = WeightMode::Fp32;
        QuantConfig last = qc;
        if (!spec.quantize_last) last.mode = WeightMode::Fp32;
        conv1_ = WeightLayer::conv2d("conv1", 1, 16, 3, 1, 1, false, first);
        conv2_ = WeightLayer::conv2d("conv2", 16, 32, 3, 1, 1, false, qc);
        fc_ = WeightLayer::linear("fc", 32 * 7 * 7, 10, false, last);
        bn1_ = BatchNormLayer::make("bn1", 16);
        bn2_ = BatchNormLayer::make("bn2", 32);
        bn3_ = BatchNormLayer::make("bn3", 10);
        conv1_.init(rng);
        conv2_.init(rng);
        fc_.init(rng);
    }

    Tensor forward(const Tensor& x, bool training) override {
        Tensor h = relu(bn1_.forward(conv1_.forward(x), training));
        h = maxpool2d(h, 2, 2);
        h = relu(bn2_.forward(conv2_.forward(h), training));
        h = maxpool2d(h, 2, 2);
        h = fc_.forward(flatten(h));
        return bn3_.forward(h, training);
    }

    std::vector<ParamInfo> parameters() override {
        std::vector<ParamInfo> p;
        collect_layer_params(conv1_, p);
        collect_bn_params(bn1_, p);
        collect_layer_params(conv2_, p);
        collect_bn_params(bn2_, p);
        collect_layer_params(fc_, p);
        collect_bn_params(bn3_, p);
        return p;
    }

    std::vector<WeightLayer*> weight_layers() override { return {&conv1_, &conv2_, &fc_}; }
    std::vector<BatchNormLayer*> norm_layers() override { return {&bn1_, &bn2_, &bn3_}; }

private:
    WeightLayer conv1_, conv2_, fc_;
    BatchNormLayer bn1_, bn2_, bn3_;
};

// Stage transitions downsample with a 2x2 average pool in front of both the
// residual and the skip path: stride-2 3x3 convolutions never divide evenly
// on 32x32 inputs under the exact-output conv contract, pooling does.
struct ResBlock {
    WeightLayer conv1, conv2, down_conv;
    BatchNormLayer bn1, bn2, down_bn;
    bool has_down = false;

    Tensor forward(const Tensor& x, bool training) {
        Tensor in = has_down ? avgpool2d(x, 2, 2) : x;
        Tensor h = relu(bn1.forward(conv1.forward(in), training));
        h = bn2.forward(conv2.forward(h), training);
        Tensor skip = has_down ? down_bn.forward(down_conv.forward(in), training) : x;
        return relu(add(h, skip));
    }
};

class ResNet20 final : public Model {
public:
    ResNet20(const ModelSpec& spec, Rng& rng) {
        spec_ = spec;
        QuantConfig qc = spec.quant_config();
        QuantConfig first = qc;
        if (spec.first_layer_fp32) first.mode = WeightMode::Fp32;
        QuantConfig last = qc;
        if (!spec.quantize_last) last.mode = WeightMode::Fp32;

        conv_in_ = WeightLayer::conv2d("conv_in", 3, 16, 3, 1, 1, false, first);
        bn_in_ = BatchNormLayer::make("bn_in", 16);
        conv_in_.init(rng);

        int widths[3] = {16, 32, 64};
        int in_ch = 16;
        for (int stage = 0; stage < 3; ++stage) {
            for (int b = 0; b < 3; ++b) {
                int out_ch = widths[stage];
                bool transition = stage > 0 && b == 0;
                std::string base = "s" + std::to_string(stage + 1) + "b" + std::to_string(b + 1);
                ResBlock blk;
                blk.conv1 = WeightLayer::conv2d(base + ".conv1", in_ch, out_ch, 3, 1, 1, false, qc);
                blk.conv2 = WeightLayer::conv2d(base + ".conv2", out_ch, out_ch, 3, 1, 1, false, qc);
                blk.bn1 = BatchNormLayer::make(base + ".bn1", out_ch);
                blk.bn2 = BatchNormLayer::make(base + ".bn2", out_ch);
                blk.conv1.init(rng);
                blk.conv2.init(rng);
                if (transition || in_ch != out_ch) {
                    blk.has_down = true;
                    blk.down_conv =
                        WeightLayer::conv2d(base + ".down", in_ch, out_ch, 1, 1, 0, false, qc);
                    blk.down_bn = BatchNormLayer::make(base + ".down_bn", out_ch);
                    blk.down_conv.init(rng);
                }
                blocks_.push_back(std::move(blk));
                in_ch = out_ch;
            }
        }
        fc_ = WeightLayer::linear("fc", 64, 10, true, last);
        fc_.init(rng);
    }

    Tensor forward(const Tensor& x, bool training) override {
        Tensor h = relu(bn_in_.forward(conv_in_.forward(x), training));
        for (ResBlock& blk : blocks_) h = blk.forward(h, training);
        return fc_.forward(global_avgpool(h));
    }

    std::vector<ParamInfo> parameters() override {
        std::vector<ParamInfo> p;
        collect_layer_params(conv_in_, p);
        collect_bn_params(bn_in_, p);
        for (ResBlock& blk : blocks_) {
            collect_layer_params(blk.conv1, p);
            collect_bn_params(blk.bn1, p);
            collect_layer_params(blk.conv2, p);
            collect_bn_params(blk.bn2, p);
            if (blk.has_down) {
                collect_layer_params(blk.down_conv, p);
                collect_bn_params(blk.down_bn, p);
            }
        }
        collect_layer_params(fc_, p);
        return p;
    }

    std::vector<WeightLayer*> weight_layers() override {
        std::vector<WeightLayer*> ls{&conv_in_};
        for (ResBlock& blk : blocks_) {
            ls.push_back(&blk.conv1);
            ls.push_back(&blk.conv2);
            if (blk.has_down) ls.push_back(&blk.down_conv);
        }
        ls.push_back(&fc_);
        return ls;
    }

    std::vector<BatchNormLayer*> norm_layers() override {
        std::vector<BatchNormLayer*> ns{&bn_in_};
        for (ResBlock& blk : blocks_) {
            ns.push_back(&blk.bn1);
            ns.push_back(&blk.bn2);
            if (blk.has_down) ns.push_back(&blk.down_bn);
        }
        return ns;
    }

private:
    WeightLayer conv_in_, fc_;
    BatchNormLayer bn_in_;
    std::vector<ResBlock> blocks_;
};

}  // namespace

size_t Model::parameter_count() {
    size_t n = 0;
    for (const ParamInfo& p : parameters()) n += p.tensor.numel();
    return n;
}

std::vector<ParamInfo> Model::state() {
    std::vector<ParamInfo> s = parameters();
    for (BatchNormLayer* bn : norm_layers()) {
        s.push_back({bn->name + ".running_mean", bn->running_mean, false});
        s.push_back({bn->name + ".running_var", bn->running_var, false});
    }
    return s;
}

void Model::zero_grad() {
    for (ParamInfo& p : parameters()) p.tensor.zero_grad();
}

std::unique_ptr<Model> build_model(const ModelSpec& spec, Rng& rng) {
    switch (spec.arch) {
        case Architecture::MlpMnist: return std::make_unique<MlpMnist>(spec, rng);
        case Architecture::CnnMnist: return std::make_unique<CnnMnist>(spec, rng);
        case Architecture::ResNet20Cifar: return std::make_unique<ResNet20>(spec, rng);
    }
    throw ConfigError("unknown architecture");
}

std::vector<LayerGradStats> grad_flow_report(Model& model) {
    std::vector<LayerGradStats> report;
    for (WeightLayer* l : model.weight_layers()) {
        if (!l->last_effective.defined() || !l->last_effective.has_grad())
            throw Error("grad_flow_report: no gradient recorded for layer '" + l->name +
                        "' (run forward + backward first)");
        const auto& g = l->last_effective.grad_values();
        double sq = 0.0;
        size_t zeros = 0;
        for (float v : g) {
            sq += static_cast<double>(v) * v;
            if (v == 0.0f) ++zeros;
        }
        report.push_back({l->name, std::sqrt(sq), static_cast<double>(zeros) / g.size()});
    }
    return report;
}

// ---- named-tensor container ----

namespace {
constexpr char kMagic[4] = {'S', 'F', 'T', '1'};

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError("unexpected end of tensor container");
    return v;
}
}  // namespace

void save_named_tensors(const std::string& path, const nlohmann::json& meta,
                        const std::vector<std::pair<std::string, Tensor>>& tensors) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os.write(kMagic, 4);
    write_pod<uint32_t>(os, 1);
    std::string m = meta.dump();
    write_pod<uint64_t>(os, m.size());
    os.write(m.data(), static_cast<std::streamsize>(m.size()));
    write_pod<uint32_t>(os, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        write_pod<uint16_t>(os, static_cast<uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod<uint8_t>(os, static_cast<uint8_t>(t.ndim()));
        for (int d : t.shape()) write_pod<int32_t>(os, d);
        os.write(reinterpret_cast<const char*>(t.ptr()),
                 static_cast<std::streamsize>(t.numel() * sizeof(float)));
    }
    if (!os) throw IoError("write failed for '" + path + "'");
}

nlohmann::json load_named_tensors(const std::string& path, std::map<std::string, Tensor>& tensors) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "'");
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw IoError("'" + path + "' is not a tensor container (bad magic)");
    uint32_t version = read_pod<uint32_t>(is);
    if (version != 1) throw IoError("unsupported tensor container version");
    uint64_t mlen = read_pod<uint64_t>(is);
    std::string m(mlen, '\0');
    is.read(m.data(), static_cast<std::streamsize>(mlen));
    if (!is) throw IoError("truncated tensor container meta");
    nlohmann::json meta = nlohmann::json::parse(m);
    uint32_t count = read_pod<uint32_t>(is);
    for (uint32_t i = 0; i < count; ++i) {
        uint16_t nlen = read_pod<uint16_t>(is);
        std::string name(nlen, '\0');
        is.read(name.data(), nlen);
        uint8_t nd = read_pod<uint8_t>(is);
        std::vector<int> shape(nd);
        for (auto& d : shape) d = read_pod<int32_t>(is);
        Tensor t = Tensor::zeros(shape);
        is.read(reinterpret_cast<char*>(t.ptr()),
                static_cast<std::streamsize>(t.numel() * sizeof(float)));
        if (!is) throw IoError("truncated tensor data for '" + name + "'");
        tensors[name] = t;
    }
    return meta;
}

}  // namespace shiftforge
