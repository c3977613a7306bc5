#include "shiftforge/regularize.hpp"

#include <cmath>

#include "shiftforge/ops.hpp"

namespace shiftforge {

AlphaDecay alpha_decay_from_string(const std::string& s) {
    if (s == "none") return AlphaDecay::None;
    if (s == "linear") return AlphaDecay::Linear;
    if (s == "cosine") return AlphaDecay::Cosine;
    throw ConfigError("unknown alpha_decay '" + s + "' (expected none|linear|cosine)");
}

std::string to_string(AlphaDecay d) {
    switch (d) {
        case AlphaDecay::None: return "none";
        case AlphaDecay::Linear: return "linear";
        case AlphaDecay::Cosine: return "cosine";
    }
    return "none";
}

LrKind lr_kind_from_string(const std::string& s) {
    if (s == "cosine") return LrKind::Cosine;
    if (s == "constant") return LrKind::Constant;
    throw ConfigError("unknown lr_schedule '" + s + "' (expected cosine|constant)");
}

std::string to_string(LrKind k) { return k == LrKind::Cosine ? "cosine" : "constant"; }

void RegularizerConfig::validate() const {
    if (alpha < 0.0f) throw ConfigError("alpha must be >= 0");
    if (lambda < 0.0f) throw ConfigError("lambda must be >= 0");
}

Tensor dense_weight_penalty(const Tensor& w_sparse) {
    Tensor out = Tensor::zeros({1});
    double acc = 0.0;
    for (float v : w_sparse.values())
        if (v < 0.0f) acc -= v;
    out.at(0) = static_cast<float>(acc);
    check_finite(out, "dense_weight_penalty");
    if (grad_enabled() && w_sparse.requires_grad()) {
        out.set_requires_grad(true);
        auto node = std::make_shared<GradNode>();
        node->op = "dense_weight_penalty";
        node->parents = {w_sparse};
        node->backward = [](const Tensor& o) {
            Tensor& pw = o.node()->parents[0];
            if (!pw.requires_grad()) return;
            pw.ensure_grad();
            float g = o.grad_values()[0];
            const float* wp = pw.ptr();
            float* gw = pw.grad_ptr();
            size_t n = pw.numel();
            for (size_t i = 0; i < n; ++i)
                if (wp[i] < 0.0f) gw[i] -= g;
        };
        out.node() = node;
    }
    return out;
}

Tensor total_loss(const Tensor& task_loss, const std::vector<Tensor>& all_latents,
                  const std::vector<Tensor>& w_sparse_latents, const RegularizerConfig& cfg,
                  int epoch, int total_epochs) {
    cfg.validate();
    Tensor loss = task_loss;
    if (cfg.lambda > 0.0f) {
        for (const Tensor& latent : all_latents)
            loss = add(loss, affine(sum_squares(latent), cfg.lambda, 0.0f));
    }
    float a = alpha_at(cfg, epoch, total_epochs);
    if (a > 0.0f) {
        for (const Tensor& ws : w_sparse_latents)
            loss = add(loss, affine(dense_weight_penalty(ws), a, 0.0f));
    }
    return loss;
}

float alpha_at(const RegularizerConfig& cfg, int epoch, int total_epochs) {
    cfg.validate();
    if (epoch < 0 || epoch >= total_epochs)
        throw ConfigError("alpha_at: epoch " + std::to_string(epoch) + " outside [0," +
                          std::to_string(total_epochs) + ")");
    float frac = static_cast<float>(epoch) / static_cast<float>(total_epochs);
    switch (cfg.alpha_decay) {
        case AlphaDecay::None: return cfg.alpha;
        case AlphaDecay::Linear: return cfg.alpha * (1.0f - frac);
        case AlphaDecay::Cosine:
            return cfg.alpha * 0.5f * (1.0f + std::cos(3.14159265358979323846f * frac));
    }
    return cfg.alpha;
}

float lr_at(const LrSchedule& schedule, int epoch) {
    if (schedule.initial_lr <= 0.0f) throw ConfigError("initial_lr must be positive");
    if (epoch < 0 || epoch >= schedule.total_epochs)
        throw ConfigError("lr_at: epoch " + std::to_string(epoch) + " outside [0," +
                          std::to_string(schedule.total_epochs) + ")");
    if (schedule.kind == LrKind::Constant) return schedule.initial_lr;
    float frac = static_cast<float>(epoch) / static_cast<float>(schedule.total_epochs);
    return schedule.initial_lr * 0.5f * (1.0f + std::cos(3.14159265358979323846f * frac));
}

}  // namespace shiftforge
