#include "shiftforge/packed.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace shiftforge {

namespace {
inline size_t sz(int v) { return static_cast<size_t>(v); }

constexpr char kS3wMagic[4] = {'S', '3', 'W', '1'};
constexpr uint16_t kS3wVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError("unexpected end of .s3w file");
    return v;
}
}  // namespace

float decode_shift_code(uint8_t code) {
    switch (code) {
        case 0: return 0.0f;
        case 1: return -1.0f;
        case 2: return -2.0f;
        case 3: return -4.0f;
        case 4: return 1.0f;
        case 5: return 2.0f;
        case 6: return 4.0f;
        default: throw PackError("invalid 3-bit code " + std::to_string(code));
    }
}

uint8_t encode_shift_value(float v) {
    if (v == 0.0f) return 0;
    if (v == -1.0f) return 1;
    if (v == -2.0f) return 2;
    if (v == -4.0f) return 3;
    if (v == 1.0f) return 4;
    if (v == 2.0f) return 5;
    if (v == 4.0f) return 6;
    return kShiftCodeInvalid;
}

bool shift_code_sign(uint8_t code) { return code >= 1 && code <= 3; }

int shift_code_amount(uint8_t code) {
    if (code == 0) return 0;
    return shift_code_sign(code) ? code - 1 : code - 4;
}

uint8_t PackedShiftTensor::code_at(size_t i) const {
    size_t bit = 3 * i;
    size_t byte = bit >> 3;
    int off = static_cast<int>(bit & 7);
    unsigned v = payload[byte] >> off;
    if (off > 5) v |= static_cast<unsigned>(payload[byte + 1]) << (8 - off);
    return static_cast<uint8_t>(v & 7u);
}

void PackedShiftTensor::set_code(size_t i, uint8_t code) {
    size_t bit = 3 * i;
    size_t byte = bit >> 3;
    int off = static_cast<int>(bit & 7);
    payload[byte] = static_cast<uint8_t>(payload[byte] | ((code << off) & 0xFF));
    if (off > 5) payload[byte + 1] = static_cast<uint8_t>(payload[byte + 1] | (code >> (8 - off)));
}

PackedShiftTensor pack_tensor(const Tensor& w, const std::string& name) {
    PackedShiftTensor p;
    p.name = name;
    p.shape = w.shape();
    p.payload.assign(PackedShiftTensor::payload_bytes(w.numel()), 0);
    const float* wp = w.ptr();
    for (size_t i = 0; i < w.numel(); ++i) {
        uint8_t code = encode_shift_value(wp[i]);
        if (code == kShiftCodeInvalid)
            throw PackError("value " + std::to_string(wp[i]) + " at index " + std::to_string(i) +
                            " of '" + name + "' is outside {0,+-1,+-2,+-4}");
        p.set_code(i, code);
    }
    return p;
}

Tensor unpack_tensor(const PackedShiftTensor& p) {
    Tensor t = Tensor::zeros(p.shape);
    float* tp = t.ptr();
    for (size_t i = 0; i < p.count(); ++i) tp[i] = decode_shift_code(p.code_at(i));
    return t;
}

void save_s3w(const std::string& path, const std::vector<PackedShiftTensor>& layers, int t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os.write(kS3wMagic, 4);
    write_pod<uint16_t>(os, kS3wVersion);
    write_pod<uint8_t>(os, static_cast<uint8_t>(t));
    write_pod<uint16_t>(os, static_cast<uint16_t>(layers.size()));
    for (const PackedShiftTensor& l : layers) {
        write_pod<uint16_t>(os, static_cast<uint16_t>(l.name.size()));
        os.write(l.name.data(), static_cast<std::streamsize>(l.name.size()));
        write_pod<uint8_t>(os, static_cast<uint8_t>(l.shape.size()));
        for (int d : l.shape) write_pod<uint32_t>(os, static_cast<uint32_t>(d));
        os.write(reinterpret_cast<const char*>(l.payload.data()),
                 static_cast<std::streamsize>(l.payload.size()));
    }
    if (!os) throw IoError("write failed for '" + path + "'");
}

std::vector<PackedShiftTensor> load_s3w(const std::string& path, int* t_out) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "'");
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kS3wMagic, 4) != 0)
        throw IoError("'" + path + "' is not an .s3w file (bad magic)");
    uint16_t version = read_pod<uint16_t>(is);
    if (version != kS3wVersion)
        throw IoError("unsupported .s3w version " + std::to_string(version));
    uint8_t t = read_pod<uint8_t>(is);
    if (t_out) *t_out = t;
    uint16_t count = read_pod<uint16_t>(is);
    std::vector<PackedShiftTensor> layers;
    layers.reserve(count);
    for (uint16_t i = 0; i < count; ++i) {
        PackedShiftTensor p;
        uint16_t nlen = read_pod<uint16_t>(is);
        p.name.resize(nlen);
        is.read(p.name.data(), nlen);
        uint8_t nd = read_pod<uint8_t>(is);
        p.shape.resize(nd);
        for (auto& d : p.shape) d = static_cast<int>(read_pod<uint32_t>(is));
        p.payload.resize(PackedShiftTensor::payload_bytes(p.count()));
        is.read(reinterpret_cast<char*>(p.payload.data()),
                static_cast<std::streamsize>(p.payload.size()));
        if (!is) throw IoError("truncated .s3w payload for '" + p.name + "'");
        for (size_t j = 0; j < p.count(); ++j)
            if (p.code_at(j) == kShiftCodeInvalid)
                throw IoError("invalid code in '" + p.name + "' at index " + std::to_string(j));
        layers.push_back(std::move(p));
    }
    return layers;
}

FixedPointActivation FixedPointActivation::from_float(const Tensor& t, int frac_bits) {
    if (frac_bits < 0 || frac_bits > 30) throw ConfigError("frac_bits must be in [0,30]");
    FixedPointActivation f;
    f.shape = t.shape();
    f.frac_bits = frac_bits;
    f.values.resize(t.numel());
    const double scale = std::ldexp(1.0, frac_bits);
    for (size_t i = 0; i < t.numel(); ++i) {
        double v = std::llround(static_cast<double>(t.at(i)) * scale);
        if (v > 2147483647.0 || v < -2147483648.0)
            throw OverflowError("activation does not fit 32-bit fixed point at frac_bits " +
                                std::to_string(frac_bits));
        f.values[i] = static_cast<int32_t>(v);
    }
    return f;
}

Tensor FixedPointActivation::to_float() const {
    Tensor t = Tensor::zeros(shape);
    const double inv = std::ldexp(1.0, -frac_bits);
    for (size_t i = 0; i < values.size(); ++i)
        t.at(i) = static_cast<float>(values[i] * inv);
    return t;
}

int32_t FixedPointActivation::max_abs() const {
    int32_t m = 0;
    for (int32_t v : values) m = std::max(m, v < 0 ? -v : v);
    return m;
}

namespace {
// one term of a shift-add accumulation: arithmetic shift + conditional negate
inline int64_t shift_term(int64_t x, uint8_t code) {
    int64_t t = x << shift_code_amount(code);
    return shift_code_sign(code) ? -t : t;
}

inline int32_t narrow_checked(int64_t acc, const char* what) {
    if (acc > 2147483647LL || acc < -2147483648LL)
        throw OverflowError(std::string(what) + ": accumulator exceeds 32-bit range");
    return static_cast<int32_t>(acc);
}
}  // namespace

FixedPointActivation shift_matmul(const FixedPointActivation& x, const PackedShiftTensor& w) {
    if (x.shape.size() != 2 || w.shape.size() != 2)
        throw ShapeError("shift_matmul expects x[m,k] and w[k,n]");
    int m = x.shape[0], k = x.shape[1];
    if (w.shape[0] != k)
        throw ShapeError("shift_matmul inner dimensions differ: k=" + std::to_string(k) + " vs " +
                         std::to_string(w.shape[0]));
    int n = w.shape[1];
    FixedPointActivation out;
    out.shape = {m, n};
    out.frac_bits = x.frac_bits;
    out.values.assign(sz(m) * sz(n), 0);
    // decode once; the inner loop below is shift/add/negate only
    std::vector<uint8_t> codes(w.count());
    for (size_t i = 0; i < codes.size(); ++i) codes[i] = w.code_at(i);
    for (int i = 0; i < m; ++i) {
        const int32_t* xr = x.values.data() + sz(i) * sz(k);
        for (int j = 0; j < n; ++j) {
            int64_t acc = 0;
            for (int kk = 0; kk < k; ++kk) {
                uint8_t c = codes[sz(kk) * sz(n) + sz(j)];
                if (c == 0) continue;
                acc += shift_term(xr[kk], c);
            }
            out.values[sz(i) * sz(n) + sz(j)] = narrow_checked(acc, "shift_matmul");
        }
    }
    return out;
}

// ---- whole-model export ----

PackedModel export_packed(Model& model) {
    PackedModel pm;
    const ModelSpec& spec = model.spec();
    pm.t = spec.t;
    pm.meta["architecture"] = to_string(spec.arch);
    pm.meta["mode"] = to_string(spec.mode);
    pm.meta["t"] = spec.t;

    NoGradGuard ng;
    for (WeightLayer* l : model.weight_layers()) {
        PackedWeightLayer pl;
        pl.kind = l->kind;
        pl.name = l->name;
        pl.wshape = l->weight_shape();
        pl.stride = l->stride;
        pl.pad = l->pad;
        pl.has_bias = l->has_bias;
        if (l->has_bias) pl.bias = l->bias.detached_copy();
        Tensor eff = l->effective_weight().detached_copy();
        if (l->quantized()) {
            pl.is_packed = true;
            pl.codes = pack_tensor(eff, l->name);
        } else {
            pl.is_packed = false;
            pl.fp_weight = eff;
        }
        pm.weights.push_back(std::move(pl));
    }
    for (BatchNormLayer* bn : model.norm_layers()) {
        PackedNorm pn;
        pn.name = bn->name;
        pn.gamma = bn->gamma.detached_copy();
        pn.beta = bn->beta.detached_copy();
        pn.mean = bn->running_mean.detached_copy();
        pn.var = bn->running_var.detached_copy();
        pn.eps = bn->eps;
        pm.norms.push_back(std::move(pn));
    }
    // block recipe so the executor can rebuild residual structure
    if (spec.arch == Architecture::ResNet20Cifar) {
        nlohmann::json blocks = nlohmann::json::array();
        for (int b = 0; b < 9; ++b) blocks.push_back({{"down", b == 3 || b == 6}});
        pm.meta["blocks"] = blocks;
    }
    nlohmann::json manifest = nlohmann::json::array();
    for (const PackedWeightLayer& pl : pm.weights)
        manifest.push_back({{"name", pl.name},
                            {"kind", pl.kind == WeightLayer::Kind::Conv2d ? "conv2d" : "linear"},
                            {"stride", pl.stride},
                            {"pad", pl.pad},
                            {"packed", pl.is_packed},
                            {"bias", pl.has_bias}});
    pm.meta["layers"] = manifest;
    std::vector<std::string> norm_order;
    for (const PackedNorm& pn : pm.norms) norm_order.push_back(pn.name);
    pm.meta["norm_order"] = norm_order;
    return pm;
}

void save_packed_model(const PackedModel& pm, const std::string& path) {
    std::vector<PackedShiftTensor> packed;
    for (const PackedWeightLayer& pl : pm.weights)
        if (pl.is_packed) packed.push_back(pl.codes);
    save_s3w(path, packed, pm.t);

    std::vector<std::pair<std::string, Tensor>> aux;
    for (const PackedWeightLayer& pl : pm.weights) {
        if (!pl.is_packed) aux.emplace_back(pl.name + ".weight", pl.fp_weight);
        if (pl.has_bias) aux.emplace_back(pl.name + ".bias", pl.bias);
    }
    for (const PackedNorm& pn : pm.norms) {
        aux.emplace_back(pn.name + ".gamma", pn.gamma);
        aux.emplace_back(pn.name + ".beta", pn.beta);
        aux.emplace_back(pn.name + ".mean", pn.mean);
        aux.emplace_back(pn.name + ".var", pn.var);
    }
    save_named_tensors(path + ".aux", pm.meta, aux);
}

PackedModel load_packed_model(const std::string& path) {
    PackedModel pm;
    std::vector<PackedShiftTensor> packed = load_s3w(path, &pm.t);
    std::map<std::string, Tensor> aux;
    pm.meta = load_named_tensors(path + ".aux", aux);
    if (!pm.meta.contains("layers")) throw IoError("packed model aux is missing the layer manifest");

    size_t packed_idx = 0;
    for (const auto& entry : pm.meta["layers"]) {
        PackedWeightLayer pl;
        pl.name = entry.at("name").get<std::string>();
        pl.kind = entry.at("kind").get<std::string>() == "conv2d" ? WeightLayer::Kind::Conv2d
                                                                  : WeightLayer::Kind::Linear;
        pl.stride = entry.at("stride").get<int>();
        pl.pad = entry.at("pad").get<int>();
        pl.is_packed = entry.at("packed").get<bool>();
        pl.has_bias = entry.at("bias").get<bool>();
        if (pl.is_packed) {
            if (packed_idx >= packed.size())
                throw IoError("missing packed layer '" + pl.name + "' in .s3w payload");
            pl.codes = packed[packed_idx++];
            if (pl.codes.name != pl.name)
                throw IoError("packed layer order mismatch: expected '" + pl.name + "', found '" +
                              pl.codes.name + "'");
            pl.wshape = pl.codes.shape;
        } else {
            auto it = aux.find(pl.name + ".weight");
            if (it == aux.end()) throw IoError("missing fp32 weight for layer '" + pl.name + "'");
            pl.fp_weight = it->second;
            pl.wshape = pl.fp_weight.shape();
        }
        if (pl.has_bias) {
            auto it = aux.find(pl.name + ".bias");
            if (it == aux.end()) throw IoError("missing bias for layer '" + pl.name + "'");
            pl.bias = it->second;
        }
        pm.weights.push_back(std::move(pl));
    }
    std::vector<std::string> norm_names;
    if (pm.meta.contains("norm_order"))
        norm_names = pm.meta["norm_order"].get<std::vector<std::string>>();
    for (const std::string& nn : norm_names) {
        PackedNorm pn;
        pn.name = nn;
        pn.gamma = aux.at(nn + ".gamma");
        pn.beta = aux.at(nn + ".beta");
        pn.mean = aux.at(nn + ".mean");
        pn.var = aux.at(nn + ".var");
        pm.norms.push_back(std::move(pn));
    }
    return pm;
}

// ---- fixed point execution ----

namespace {

struct FpTensor {
    std::vector<int> shape;
    std::vector<int32_t> v;
    double err = 0.0;  // worst-case |fixed/2^fb - float reference| per element
};

struct Exec {
    int fb;
    double q;  // one requantization step: 2^-(fb+1)

    FpTensor quantize(const Tensor& t) const {
        FixedPointActivation f = FixedPointActivation::from_float(t, fb);
        return {f.shape, std::move(f.values), q};
    }

    Tensor dequantize(const FpTensor& t) const {
        const double inv = std::ldexp(1.0, -fb);
        Tensor out = Tensor::zeros(t.shape);
        for (size_t i = 0; i < t.v.size(); ++i) out.at(i) = static_cast<float>(t.v[i] * inv);
        return out;
    }

    FpTensor requantize(const Tensor& t, double err) const {
        FixedPointActivation f = FixedPointActivation::from_float(t, fb);
        return {f.shape, std::move(f.values), err + q};
    }

    FpTensor conv_packed(const FpTensor& x, const PackedWeightLayer& l) const {
        int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
        int F = l.wshape[0], kh = l.wshape[2], kw = l.wshape[3];
        if (l.wshape[1] != C) throw ShapeError("packed conv channel mismatch in '" + l.name + "'");
        int OH = (H + 2 * l.pad - kh) / l.stride + 1;
        int OW = (W + 2 * l.pad - kw) / l.stride + 1;
        int K = C * kh * kw;
        std::vector<uint8_t> codes(l.codes.count());
        double max_row_l1 = 0.0;
        for (int f = 0; f < F; ++f) {
            double row = 0.0;
            for (int kk = 0; kk < K; ++kk) {
                uint8_t c = l.codes.code_at(sz(f) * sz(K) + sz(kk));
                codes[sz(f) * sz(K) + sz(kk)] = c;
                row += std::fabs(decode_shift_code(c));
            }
            max_row_l1 = std::max(max_row_l1, row);
        }
        std::vector<int64_t> bias_fp(sz(F), 0);
        if (l.has_bias)
            for (int f = 0; f < F; ++f)
                bias_fp[sz(f)] = std::llround(static_cast<double>(l.bias.at(sz(f))) * std::ldexp(1.0, fb));

        FpTensor out;
        out.shape = {N, F, OH, OW};
        out.v.assign(sz(N) * sz(F) * sz(OH) * sz(OW), 0);
        std::vector<int32_t> col(sz(K));
        for (int n = 0; n < N; ++n) {
            const int32_t* img = x.v.data() + sz(n) * sz(C) * sz(H) * sz(W);
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow) {
                    // gather the receptive field once per position
                    size_t ci = 0;
                    for (int c = 0; c < C; ++c)
                        for (int ki = 0; ki < kh; ++ki)
                            for (int kj = 0; kj < kw; ++kj) {
                                int ih = oh * l.stride + ki - l.pad;
                                int iw = ow * l.stride + kj - l.pad;
                                col[ci++] = (ih >= 0 && ih < H && iw >= 0 && iw < W)
                                                ? img[(sz(c) * sz(H) + sz(ih)) * sz(W) + sz(iw)]
                                                : 0;
                            }
                    for (int f = 0; f < F; ++f) {
                        int64_t acc = l.has_bias ? bias_fp[sz(f)] : 0;
                        const uint8_t* wrow = codes.data() + sz(f) * sz(K);
                        for (int kk = 0; kk < K; ++kk) {
                            uint8_t c = wrow[kk];
                            if (c == 0) continue;
                            acc += shift_term(col[sz(kk)], c);
                        }
                        out.v[((sz(n) * sz(F) + sz(f)) * sz(OH) + sz(oh)) * sz(OW) + sz(ow)] =
                            narrow_checked(acc, l.name.c_str());
                    }
                }
        }
        // bias quantization adds at most one step
        out.err = max_row_l1 * x.err + (l.has_bias ? q : 0.0);
        return out;
    }

    FpTensor linear_packed(const FpTensor& x, const PackedWeightLayer& l) const {
        int N = x.shape[0], K = x.shape[1];
        int F = l.wshape[0];
        if (l.wshape[1] != K) throw ShapeError("packed linear shape mismatch in '" + l.name + "'");
        std::vector<uint8_t> codes(l.codes.count());
        double max_row_l1 = 0.0;
        for (int f = 0; f < F; ++f) {
            double row = 0.0;
            for (int kk = 0; kk < K; ++kk) {
                uint8_t c = l.codes.code_at(sz(f) * sz(K) + sz(kk));
                codes[sz(f) * sz(K) + sz(kk)] = c;
                row += std::fabs(decode_shift_code(c));
            }
            max_row_l1 = std::max(max_row_l1, row);
        }
        FpTensor out;
        out.shape = {N, F};
        out.v.assign(sz(N) * sz(F), 0);
        for (int n = 0; n < N; ++n) {
            const int32_t* xr = x.v.data() + sz(n) * sz(K);
            for (int f = 0; f < F; ++f) {
                int64_t acc = 0;
                const uint8_t* wrow = codes.data() + sz(f) * sz(K);
                for (int kk = 0; kk < K; ++kk) {
                    uint8_t c = wrow[kk];
                    if (c == 0) continue;
                    acc += shift_term(xr[kk], c);
                }
                if (l.has_bias)
                    acc += std::llround(static_cast<double>(l.bias.at(sz(f))) * std::ldexp(1.0, fb));
                out.v[sz(n) * sz(F) + sz(f)] = narrow_checked(acc, l.name.c_str());
            }
        }
        out.err = max_row_l1 * x.err + (l.has_bias ? q : 0.0);
        return out;
    }

    // fp32 layers run in float on the dequantized activations, then requantize
    FpTensor weight_layer_fp(const FpTensor& x, const PackedWeightLayer& l) const {
        Tensor xf = dequantize(x);
        Tensor out;
        double amp = 0.0;
        if (l.kind == WeightLayer::Kind::Conv2d) {
            int F = l.wshape[0], K = l.wshape[1] * l.wshape[2] * l.wshape[3];
            for (int f = 0; f < F; ++f) {
                double row = 0.0;
                for (int kk = 0; kk < K; ++kk)
                    row += std::fabs(l.fp_weight.at(sz(f) * sz(K) + sz(kk)));
                amp = std::max(amp, row);
            }
            out = conv2d(xf, l.fp_weight, l.stride, l.pad);
            if (l.has_bias) out = bias_add_nchw(out, l.bias);
        } else {
            int F = l.wshape[0], K = l.wshape[1];
            for (int f = 0; f < F; ++f) {
                double row = 0.0;
                for (int kk = 0; kk < K; ++kk)
                    row += std::fabs(l.fp_weight.at(sz(f) * sz(K) + sz(kk)));
                amp = std::max(amp, row);
            }
            out = linear(xf, l.fp_weight);
            if (l.has_bias) out = bias_add_rows(out, l.bias);
        }
        return requantize(out, amp * x.err);
    }

    FpTensor apply_weight_layer(const FpTensor& x, const PackedWeightLayer& l) const {
        if (!l.is_packed) return weight_layer_fp(x, l);
        if (l.kind == WeightLayer::Kind::Conv2d) return conv_packed(x, l);
        return linear_packed(x, l);
    }

    FpTensor norm(const FpTensor& x, const PackedNorm& pn) const {
        Tensor xf = dequantize(x);
        int C = static_cast<int>(pn.gamma.numel());
        double amp = 0.0;
        std::vector<float> a(sz(C)), b(sz(C));
        for (int c = 0; c < C; ++c) {
            float is = 1.0f / std::sqrt(pn.var.at(sz(c)) + pn.eps);
            a[sz(c)] = pn.gamma.at(sz(c)) * is;
            b[sz(c)] = pn.beta.at(sz(c)) - pn.mean.at(sz(c)) * a[sz(c)];
            amp = std::max(amp, static_cast<double>(std::fabs(a[sz(c)])));
        }
        size_t hw = xf.numel() / (sz(xf.shape()[0]) * sz(C));
        Tensor out = Tensor::zeros(xf.shape());
        for (int n = 0; n < xf.shape()[0]; ++n)
            for (int c = 0; c < C; ++c) {
                size_t base = (sz(n) * sz(C) + sz(c)) * hw;
                for (size_t p = 0; p < hw; ++p)
                    out.at(base + p) = xf.at(base + p) * a[sz(c)] + b[sz(c)];
            }
        return requantize(out, amp * x.err);
    }

    FpTensor relu_fp(FpTensor x) const {
        for (int32_t& v : x.v)
            if (v < 0) v = 0;
        return x;
    }

    FpTensor maxpool2(const FpTensor& x) const {
        int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
        int OH = H / 2, OW = W / 2;
        FpTensor out;
        out.shape = {N, C, OH, OW};
        out.err = x.err;
        out.v.assign(sz(N) * sz(C) * sz(OH) * sz(OW), 0);
        size_t oi = 0;
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const int32_t* plane = x.v.data() + (sz(n) * sz(C) + sz(c)) * sz(H) * sz(W);
                for (int oh = 0; oh < OH; ++oh)
                    for (int ow = 0; ow < OW; ++ow) {
                        int32_t m = plane[(2 * oh) * W + 2 * ow];
                        m = std::max(m, plane[(2 * oh) * W + 2 * ow + 1]);
                        m = std::max(m, plane[(2 * oh + 1) * W + 2 * ow]);
                        m = std::max(m, plane[(2 * oh + 1) * W + 2 * ow + 1]);
                        out.v[oi++] = m;
                    }
            }
        return out;
    }

    FpTensor gap(const FpTensor& x) const {
        Tensor xf = dequantize(x);
        Tensor out = global_avgpool(xf);
        return requantize(out, x.err);
    }

    FpTensor avgpool2(const FpTensor& x) const {
        Tensor xf = dequantize(x);
        Tensor out = avgpool2d(xf, 2, 2);
        return requantize(out, x.err);
    }

    FpTensor add_fp(const FpTensor& a, const FpTensor& b) const {
        if (a.shape != b.shape) throw ShapeError("fixed point residual add shape mismatch");
        FpTensor out = a;
        for (size_t i = 0; i < out.v.size(); ++i) {
            int64_t s = static_cast<int64_t>(a.v[i]) + b.v[i];
            out.v[i] = narrow_checked(s, "residual add");
        }
        out.err = a.err + b.err;
        return out;
    }

    FpTensor flatten_fp(FpTensor x) const {
        int n = x.shape[0];
        int rest = static_cast<int>(x.v.size()) / n;
        x.shape = {n, rest};
        return x;
    }
};

}  // namespace

ShiftForwardResult shift_forward(const PackedModel& pm, const Tensor& input, int frac_bits) {
    NoGradGuard ng;
    Exec ex{frac_bits, std::ldexp(1.0, -(frac_bits + 1))};
    std::string arch = pm.meta.at("architecture").get<std::string>();
    FpTensor h = ex.quantize(input);

    if (arch == "mlp_mnist") {
        if (pm.weights.size() != 2) throw IoError("mlp packed model needs 2 layers");
        h = ex.flatten_fp(std::move(h));
        h = ex.relu_fp(ex.apply_weight_layer(h, pm.weights[0]));
        h = ex.apply_weight_layer(h, pm.weights[1]);
    } else if (arch == "cnn_mnist") {
        if (pm.weights.size() != 3 || pm.norms.size() != 3)
            throw IoError("cnn packed model needs 3 weight and 3 norm layers");
        h = ex.apply_weight_layer(h, pm.weights[0]);
        h = ex.relu_fp(ex.norm(h, pm.norms[0]));
        h = ex.maxpool2(h);
        h = ex.apply_weight_layer(h, pm.weights[1]);
        h = ex.relu_fp(ex.norm(h, pm.norms[1]));
        h = ex.maxpool2(h);
        h = ex.flatten_fp(std::move(h));
        h = ex.apply_weight_layer(h, pm.weights[2]);
        h = ex.norm(h, pm.norms[2]);
    } else if (arch == "resnet20_cifar") {
        size_t wi = 0, ni = 0;
        h = ex.apply_weight_layer(h, pm.weights[wi++]);
        h = ex.relu_fp(ex.norm(h, pm.norms[ni++]));
        for (const auto& blk : pm.meta.at("blocks")) {
            bool down = blk.at("down").get<bool>();
            FpTensor in = down ? ex.avgpool2(h) : h;
            FpTensor skip = in;
            FpTensor t = ex.apply_weight_layer(in, pm.weights[wi++]);
            t = ex.relu_fp(ex.norm(t, pm.norms[ni++]));
            t = ex.apply_weight_layer(t, pm.weights[wi++]);
            t = ex.norm(t, pm.norms[ni++]);
            if (down) {
                skip = ex.apply_weight_layer(skip, pm.weights[wi++]);
                skip = ex.norm(skip, pm.norms[ni++]);
            } else {
                skip = h;
            }
            h = ex.relu_fp(ex.add_fp(t, skip));
        }
        h = ex.gap(h);
        h = ex.apply_weight_layer(h, pm.weights[wi++]);
    } else {
        throw IoError("unknown packed architecture '" + arch + "'");
    }

    ShiftForwardResult r;
    r.logits = ex.dequantize(h);
    r.error_bound = h.err;
    return r;
}

namespace {
OpCounts count_weight_layer(const PackedWeightLayer& l, std::vector<int>& shape) {
    OpCounts oc;
    uint64_t batch = static_cast<uint64_t>(shape[0]);
    if (l.kind == WeightLayer::Kind::Conv2d) {
        int C = shape[1], H = shape[2], W = shape[3];
        int F = l.wshape[0], kh = l.wshape[2], kw = l.wshape[3];
        int K = C * kh * kw;
        int OH = (H + 2 * l.pad - kh) / l.stride + 1;
        int OW = (W + 2 * l.pad - kw) / l.stride + 1;
        uint64_t positions = batch * static_cast<uint64_t>(OH) * OW;
        if (l.is_packed) {
            for (int f = 0; f < F; ++f) {
                uint64_t nz = 0, neg = 0;
                for (int kk = 0; kk < K; ++kk) {
                    uint8_t c = l.codes.code_at(sz(f) * sz(K) + sz(kk));
                    if (c != 0) ++nz;
                    if (shift_code_sign(c)) ++neg;
                }
                oc.shifts += positions * nz;
                oc.sign_flips += positions * neg;
                oc.adds += positions * (nz > 0 ? nz - 1 : 0);
            }
        } else {
            oc.multiplies += positions * static_cast<uint64_t>(F) * K;
            oc.adds += positions * static_cast<uint64_t>(F) * (K > 0 ? K - 1 : 0);
        }
        if (l.has_bias) oc.adds += positions * static_cast<uint64_t>(F);
        shape = {shape[0], F, OH, OW};
    } else {
        int K = shape.size() == 2 ? shape[1] : static_cast<int>(numel_of(shape)) / shape[0];
        int F = l.wshape[0];
        if (l.is_packed) {
            for (int f = 0; f < F; ++f) {
                uint64_t nz = 0, neg = 0;
                for (int kk = 0; kk < K; ++kk) {
                    uint8_t c = l.codes.code_at(sz(f) * sz(K) + sz(kk));
                    if (c != 0) ++nz;
                    if (shift_code_sign(c)) ++neg;
                }
                oc.shifts += batch * nz;
                oc.sign_flips += batch * neg;
                oc.adds += batch * (nz > 0 ? nz - 1 : 0);
            }
        } else {
            oc.multiplies += batch * static_cast<uint64_t>(F) * K;
            oc.adds += batch * static_cast<uint64_t>(F) * (K > 0 ? K - 1 : 0);
        }
        if (l.has_bias) oc.adds += batch * static_cast<uint64_t>(F);
        shape = {shape[0], F};
    }
    return oc;
}

OpCounts count_norm(const std::vector<int>& shape) {
    OpCounts oc;
    uint64_t n = 1;
    for (int d : shape) n *= static_cast<uint64_t>(d);
    oc.multiplies = n;  // folded affine: one multiply and one add per element
    oc.adds = n;
    return oc;
}
}  // namespace

std::vector<LayerOpCounts> count_ops(const PackedModel& pm, const std::vector<int>& input_shape) {
    std::string arch = pm.meta.at("architecture").get<std::string>();
    std::vector<int> shape = input_shape;
    std::vector<LayerOpCounts> rows;
    auto weight_row = [&](const PackedWeightLayer& l) {
        rows.push_back({l.name, l.is_packed, count_weight_layer(l, shape)});
    };
    auto norm_row = [&](const PackedNorm& n) { rows.push_back({n.name, false, count_norm(shape)}); };
    auto pool2 = [&] { shape = {shape[0], shape[1], shape[2] / 2, shape[3] / 2}; };

    if (arch == "mlp_mnist") {
        shape = {shape[0], static_cast<int>(numel_of(shape)) / shape[0]};
        weight_row(pm.weights[0]);
        weight_row(pm.weights[1]);
    } else if (arch == "cnn_mnist") {
        weight_row(pm.weights[0]);
        norm_row(pm.norms[0]);
        pool2();
        weight_row(pm.weights[1]);
        norm_row(pm.norms[1]);
        pool2();
        shape = {shape[0], shape[1] * shape[2] * shape[3]};
        weight_row(pm.weights[2]);
        norm_row(pm.norms[2]);
    } else if (arch == "resnet20_cifar") {
        size_t wi = 0, ni = 0;
        weight_row(pm.weights[wi++]);
        norm_row(pm.norms[ni++]);
        for (const auto& blk : pm.meta.at("blocks")) {
            bool down = blk.at("down").get<bool>();
            if (down) pool2();
            std::vector<int> in_shape = shape;
            weight_row(pm.weights[wi++]);
            norm_row(pm.norms[ni++]);
            weight_row(pm.weights[wi++]);
            norm_row(pm.norms[ni++]);
            if (down) {
                std::vector<int> main_shape = shape;
                shape = in_shape;
                weight_row(pm.weights[wi++]);
                norm_row(pm.norms[ni++]);
                shape = main_shape;
            }
        }
        shape = {shape[0], shape[1]};
        weight_row(pm.weights[wi++]);
    } else {
        throw IoError("unknown packed architecture '" + arch + "'");
    }
    return rows;
}

OpCounts total_ops(const std::vector<LayerOpCounts>& per_layer) {
    OpCounts total;
    for (const LayerOpCounts& row : per_layer) total += row.ops;
    return total;
}

}  // namespace shiftforge
