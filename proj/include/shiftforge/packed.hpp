#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "shiftforge/layers.hpp"
#include "shiftforge/tensor.hpp"

namespace shiftforge {

// 3-bit code table (code values 0..7):
//   000 -> 0
//   001 -> -1   010 -> -2   011 -> -4
//   100 -> +1   101 -> +2   110 -> +4
//   111 -> invalid
// Codes are packed LSB-first: weight i occupies bits [3i, 3i+3) of the
// little-endian payload bitstream; the payload is padded to a whole byte.
constexpr uint8_t kShiftCodeInvalid = 7;

float decode_shift_code(uint8_t code);                 // throws PackError on 7
uint8_t encode_shift_value(float v);                   // throws PackError off-codomain
bool shift_code_sign(uint8_t code);                    // true when negative
int shift_code_amount(uint8_t code);                   // p in 2^p, 0 for code 0

struct PackedShiftTensor {
    std::string name;
    std::vector<int> shape;
    std::vector<uint8_t> payload;

    size_t count() const { return numel_of(shape); }
    uint8_t code_at(size_t i) const;
    void set_code(size_t i, uint8_t code);
    static size_t payload_bytes(size_t count) { return (3 * count + 7) / 8; }
};

// Deployment gate: every element must be in {0, +-1, +-2, +-4}.
PackedShiftTensor pack_tensor(const Tensor& w, const std::string& name);
Tensor unpack_tensor(const PackedShiftTensor& p);

// .s3w file: header {magic "S3W1", version u16, t u8, layer count u16},
// then per layer {name u16+bytes, ndim u8, dims u32 each, payload}.
void save_s3w(const std::string& path, const std::vector<PackedShiftTensor>& layers, int t);
std::vector<PackedShiftTensor> load_s3w(const std::string& path, int* t_out = nullptr);

// 32-bit fixed point activations with frac_bits fractional bits.
struct FixedPointActivation {
    std::vector<int> shape;
    std::vector<int32_t> values;
    int frac_bits = 16;

    static FixedPointActivation from_float(const Tensor& t, int frac_bits);
    Tensor to_float() const;
    int32_t max_abs() const;
};

// x: [m,k] fixed point, w: packed [k,n]. Every product term is an arithmetic
// shift plus conditional negation; the result equals the integer matmul with
// decoded weights exactly. Accumulation is 64-bit and any output outside
// int32 raises OverflowError instead of wrapping.
FixedPointActivation shift_matmul(const FixedPointActivation& x, const PackedShiftTensor& w);

// ---- whole-model deployment ----

struct PackedWeightLayer {
    WeightLayer::Kind kind = WeightLayer::Kind::Linear;
    std::string name;
    std::vector<int> wshape;
    int stride = 1, pad = 0;
    bool is_packed = false;
    PackedShiftTensor codes;  // when is_packed
    Tensor fp_weight;         // when !is_packed
    bool has_bias = false;
    Tensor bias;
};

struct PackedNorm {
    std::string name;
    Tensor gamma, beta, mean, var;
    float eps = 1e-5f;
};

struct PackedModel {
    nlohmann::json meta;  // architecture recipe
    int t = 2;
    std::vector<PackedWeightLayer> weights;  // forward order
    std::vector<PackedNorm> norms;           // forward order
};

// Packs every quantized layer of the model; fp32 layers (and biases / norm
// statistics) ride along in full precision. Throws PackError when a
// quantized layer's weights fall outside the 3-bit codomain.
PackedModel export_packed(Model& model);
// writes <path> (pure .s3w) plus <path>.aux with fp32 tensors and the recipe
void save_packed_model(const PackedModel& pm, const std::string& path);
PackedModel load_packed_model(const std::string& path);

struct ShiftForwardResult {
    Tensor logits;
    double error_bound = 0.0;  // worst-case |fixed - float reference| per logit
};

ShiftForwardResult shift_forward(const PackedModel& pm, const Tensor& input, int frac_bits = 16);

struct OpCounts {
    uint64_t shifts = 0, adds = 0, sign_flips = 0, multiplies = 0;
    OpCounts& operator+=(const OpCounts& o) {
        shifts += o.shifts;
        adds += o.adds;
        sign_flips += o.sign_flips;
        multiplies += o.multiplies;
        return *this;
    }
};

struct LayerOpCounts {
    std::string name;
    bool packed = false;
    OpCounts ops;
};

// Exact static tallies for one forward pass at the given input shape.
// Packed layers report zero multiplies; zero weights are skipped.
std::vector<LayerOpCounts> count_ops(const PackedModel& pm, const std::vector<int>& input_shape);
OpCounts total_ops(const std::vector<LayerOpCounts>& per_layer);

}  // namespace shiftforge
