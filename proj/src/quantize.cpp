#include "shiftforge/quantize.hpp"

#include <cmath>

namespace shiftforge {

namespace {
thread_local bool g_surrogate = false;

inline float clampf(float x, float lo, float hi) { return x < lo ? lo : (x > hi ? hi : x); }

// shared STE backward: pass upstream gradient where |latent| <= clip
void attach_ste(Tensor& out, const char* op, const Tensor& w, float clip) {
    size_t n = w.numel();
    bool wants = grad_enabled() && w.requires_grad();
    if (!wants) return;
    out.set_requires_grad(true);
    auto node = std::make_shared<GradNode>();
    node->op = op;
    node->parents = {w};
    node->backward = [n, clip](const Tensor& o) {
        Tensor& pw = o.node()->parents[0];
        if (!pw.requires_grad()) return;
        pw.ensure_grad();
        const float* g = o.grad_ptr();
        const float* wp = pw.ptr();
        float* gw = pw.grad_ptr();
        for (size_t i = 0; i < n; ++i)
            if (std::fabs(wp[i]) <= clip) gw[i] += g[i];
    };
    out.node() = node;
}
}  // namespace

SteSurrogateGuard::SteSurrogateGuard() : prev_(g_surrogate) { g_surrogate = true; }
SteSurrogateGuard::~SteSurrogateGuard() { g_surrogate = prev_; }
bool ste_surrogate_mode() { return g_surrogate; }

void QuantSpec::validate() const {
    if (values.size() != thresholds.size() + 1)
        throw ConfigError("quant spec needs |values| = |thresholds| + 1");
    if (values.empty()) throw ConfigError("quant spec needs at least one value");
    for (size_t i = 0; i + 1 < thresholds.size(); ++i)
        if (!(thresholds[i] < thresholds[i + 1]))
            throw ConfigError("quant spec thresholds must be strictly ascending");
    for (float t : thresholds)
        if (!std::isfinite(t)) throw ConfigError("quant spec threshold not finite");
}

float QuantSpec::apply(float w) const {
    size_t i = 0;
    while (i < thresholds.size() && w >= thresholds[i]) ++i;
    return values[i];
}

Tensor heaviside_ste(const Tensor& x, const SteConfig& cfg) {
    if (cfg.clip_range <= 0.0f) throw ConfigError("ste clip_range must be positive");
    Tensor out = Tensor::zeros(x.shape());
    const float* xp = x.ptr();
    float* op = out.ptr();
    size_t n = x.numel();
    if (g_surrogate) {
        for (size_t i = 0; i < n; ++i) op[i] = clampf(xp[i], -cfg.clip_range, cfg.clip_range);
    } else {
        for (size_t i = 0; i < n; ++i) op[i] = xp[i] > 0.0f ? 1.0f : 0.0f;
    }
    attach_ste(out, "heaviside_ste", x, cfg.clip_range);
    return out;
}

Tensor staircase_quantize(const Tensor& w, const QuantSpec& spec, const SteConfig& cfg) {
    spec.validate();
    if (cfg.clip_range <= 0.0f) throw ConfigError("ste clip_range must be positive");
    Tensor out = Tensor::zeros(w.shape());
    const float* wp = w.ptr();
    float* op = out.ptr();
    size_t n = w.numel();
    if (g_surrogate) {
        for (size_t i = 0; i < n; ++i) op[i] = clampf(wp[i], -cfg.clip_range, cfg.clip_range);
    } else {
        for (size_t i = 0; i < n; ++i) op[i] = spec.apply(wp[i]);
    }
    attach_ste(out, "staircase_quantize", w, cfg.clip_range);
    return out;
}

QuantSpec ternary_spec(float delta) {
    if (!(delta > 0.0f)) throw ConfigError("ternary delta must be positive");
    QuantSpec spec;
    spec.thresholds = {-delta, delta};
    spec.values = {-1.0f, 0.0f, 1.0f};
    return spec;
}

Tensor ternary_quantize(const Tensor& w, float delta, const SteConfig& cfg) {
    return staircase_quantize(w, ternary_spec(delta), cfg);
}

float ternary_auto_delta(const Tensor& w) {
    double s = 0.0;
    for (float v : w.values()) s += std::fabs(v);
    float delta = static_cast<float>(0.7 * s / static_cast<double>(w.numel()));
    // a degenerate all-zero layer would yield delta = 0; keep the spec valid
    return delta > 0.0f ? delta : 1e-8f;
}

Tensor deepshift_quantize(const Tensor& w, int p_min, int p_max, const SteConfig& cfg) {
    if (p_min > p_max) throw ConfigError("deepshift requires p_min <= p_max");
    if (cfg.clip_range <= 0.0f) throw ConfigError("ste clip_range must be positive");
    const float lo = std::exp2f(static_cast<float>(p_min));
    const float hi = std::exp2f(static_cast<float>(p_max));
    const float dead = lo / std::sqrt(2.0f);
    Tensor out = Tensor::zeros(w.shape());
    const float* wp = w.ptr();
    float* op = out.ptr();
    size_t n = w.numel();
    if (g_surrogate) {
        for (size_t i = 0; i < n; ++i) op[i] = clampf(wp[i], -cfg.clip_range, cfg.clip_range);
    } else {
        for (size_t i = 0; i < n; ++i) {
            float a = std::fabs(wp[i]);
            if (a < dead) {
                op[i] = 0.0f;
                continue;
            }
            float p = std::round(std::log2(a));
            float mag = std::exp2f(clampf(p, static_cast<float>(p_min), static_cast<float>(p_max)));
            mag = clampf(mag, lo, hi);
            op[i] = wp[i] < 0.0f ? -mag : mag;
        }
    }
    attach_ste(out, "deepshift_quantize", w, cfg.clip_range);
    return out;
}

Tensor deepshift_quantize(const Tensor& w, int p_min, int p_max) {
    SteConfig cfg;
    cfg.clip_range = std::exp2f(static_cast<float>(p_max)) * std::sqrt(2.0f);
    return deepshift_quantize(w, p_min, p_max, cfg);
}

Tensor s3_project_ternary(const S3Weight& s3, const SteConfig& cfg) {
    if (!s3.shift_latents.empty())
        throw ConfigError("s3_project_ternary expects no shift latents (use s3_project_shift)");
    if (s3.w_sign.shape() != s3.w_sparse.shape())
        throw ShapeError("s3 latents must share one shape");
    Tensor sign_pm1 = affine(heaviside_ste(s3.w_sign, cfg), 2.0f, -1.0f);
    return mul(heaviside_ste(s3.w_sparse, cfg), sign_pm1);
}

Tensor s3_project_shift(const S3Weight& s3, const SteConfig& cfg) {
    if (s3.shift_latents.empty()) throw ConfigError("s3_project_shift requires t >= 1 shift latents");
    for (const Tensor& w : s3.shift_latents)
        if (w.shape() != s3.w_sparse.shape()) throw ShapeError("s3 latents must share one shape");
    S3Weight ternary_part{s3.w_sign, s3.w_sparse, {}};
    Tensor ter = s3_project_ternary(ternary_part, cfg);
    // S_0 = 0, S_t = 1(w_t) * (S_{t-1} + 1)
    Tensor s = heaviside_ste(s3.shift_latents[0], cfg);
    for (size_t i = 1; i < s3.shift_latents.size(); ++i)
        s = mul(heaviside_ste(s3.shift_latents[i], cfg), affine(s, 1.0f, 1.0f));
    return mul(exp2_elem(s), ter);
}

S3Weight init_s3(const std::vector<int>& shape, int t, Rng& rng, bool dense_prior) {
    if (t < 0) throw ConfigError("init_s3: t must be >= 0");
    S3Weight s3;
    s3.w_sign = Tensor::uniform(shape, -1.0f, 1.0f, rng, true);
    s3.w_sparse = dense_prior ? Tensor::uniform(shape, 0.1f, 1.0f, rng, true)
                              : Tensor::uniform(shape, -1.0f, 1.0f, rng, true);
    for (int i = 0; i < t; ++i)
        s3.shift_latents.push_back(Tensor::uniform(shape, -1.0f, 1.0f, rng, true));
    return s3;
}

}  // namespace shiftforge
