#pragma once

#include <string>
#include <vector>

#include "shiftforge/tensor.hpp"

namespace shiftforge {

enum class AlphaDecay { None, Linear, Cosine };

AlphaDecay alpha_decay_from_string(const std::string& s);
std::string to_string(AlphaDecay d);

struct RegularizerConfig {
    float alpha = 1e-5f;   // dense weight regularizer coefficient
    float lambda = 1e-4f;  // l2 coefficient
    AlphaDecay alpha_decay = AlphaDecay::None;

    void validate() const;
};

enum class LrKind { Cosine, Constant };

LrKind lr_kind_from_string(const std::string& s);
std::string to_string(LrKind k);

struct LrSchedule {
    float initial_lr = 1e-3f;
    int total_epochs = 1;
    LrKind kind = LrKind::Cosine;
};

// sum over elements of max(-w, 0); subgradient -1 where w < 0, 0 elsewhere
Tensor dense_weight_penalty(const Tensor& w_sparse);

// task_loss + lambda * sum ||latent||_2^2 + alpha(epoch) * sum penalty(w_sparse)
Tensor total_loss(const Tensor& task_loss, const std::vector<Tensor>& all_latents,
                  const std::vector<Tensor>& w_sparse_latents, const RegularizerConfig& cfg,
                  int epoch, int total_epochs);

float alpha_at(const RegularizerConfig& cfg, int epoch, int total_epochs);
float lr_at(const LrSchedule& schedule, int epoch);

}  // namespace shiftforge
