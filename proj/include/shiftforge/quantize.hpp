#pragma once

#include <vector>

#include "shiftforge/ops.hpp"
#include "shiftforge/tensor.hpp"

namespace shiftforge {

// Straight-through estimator settings. The gradient of a hard indicator or
// staircase passes through unchanged where |latent| <= clip_range and is
// zeroed outside.
struct SteConfig {
    float clip_range = 1.0f;
};

// Staircase quantizer description: k-1 strictly ascending thresholds and k
// values. quantize(w) = values[i] on the half-open cell [t_{i-1}, t_i).
struct QuantSpec {
    std::vector<float> thresholds;
    std::vector<float> values;

    void validate() const;
    float apply(float w) const;  // linear scan free of branch-order surprises
};

// Sign-sparse-shift latent bundle. All latents share the layer weight shape
// and stay full precision; project_* maps them onto the discrete codomain.
struct S3Weight {
    Tensor w_sign;
    Tensor w_sparse;
    std::vector<Tensor> shift_latents;  // empty for the ternary form

    int t() const { return static_cast<int>(shift_latents.size()); }
};

// While a guard is alive, quantizer ops evaluate their clipped-identity
// surrogate instead of the discrete staircase. Gradient closures are
// unchanged, so finite differences of the surrogate forward check the exact
// code path used in training.
struct SteSurrogateGuard {
    SteSurrogateGuard();
    ~SteSurrogateGuard();

private:
    bool prev_;
};
bool ste_surrogate_mode();

// 1(x > 0) with pass-through gradient masked to |x| <= clip_range.
Tensor heaviside_ste(const Tensor& x, const SteConfig& cfg = {});

Tensor staircase_quantize(const Tensor& w, const QuantSpec& spec, const SteConfig& cfg = {});

QuantSpec ternary_spec(float delta);
Tensor ternary_quantize(const Tensor& w, float delta, const SteConfig& cfg = {});
// the ternary-weight-network rule: delta = 0.7 * mean(|w|)
float ternary_auto_delta(const Tensor& w);

// sign(w) * 2^round(log2|w|) clamped to [2^p_min, 2^p_max]; magnitudes below
// the dead zone 2^p_min / sqrt(2) map to 0. STE backward masked to
// |w| <= clip (default covers the representable range).
Tensor deepshift_quantize(const Tensor& w, int p_min, int p_max, const SteConfig& cfg);
Tensor deepshift_quantize(const Tensor& w, int p_min, int p_max);

// Eq-style projections built from primitive ops so gradients compose.
Tensor s3_project_ternary(const S3Weight& s3, const SteConfig& cfg = {});
Tensor s3_project_shift(const S3Weight& s3, const SteConfig& cfg = {});

S3Weight init_s3(const std::vector<int>& shape, int t, Rng& rng, bool dense_prior = true);

}  // namespace shiftforge
