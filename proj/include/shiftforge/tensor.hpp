#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "shiftforge/common.hpp"

namespace shiftforge {

struct Tensor;

// One reverse-mode graph node. The graph is implicit: output tensors hold a
// node, nodes hold their parent tensors, so a whole forward pass forms a DAG
// that is freed when the last handle goes out of scope.
struct GradNode {
    const char* op = "";
    std::vector<Tensor> parents;
    std::function<void(const Tensor& out)> backward;
    bool done = false;
};

struct TensorImpl {
    std::vector<int> shape;
    std::shared_ptr<std::vector<float>> data;
    std::shared_ptr<std::vector<float>> grad;  // allocated lazily
    bool requires_grad = false;
    std::shared_ptr<GradNode> node;
};

// Dense row-major float32 tensor with an optional gradient buffer.
// Copies are handles onto the same underlying storage.
struct Tensor {
    std::shared_ptr<TensorImpl> impl;

    Tensor() = default;

    static Tensor zeros(const std::vector<int>& shape, bool requires_grad = false);
    static Tensor full(const std::vector<int>& shape, float value, bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);
    static Tensor from_vector(const std::vector<float>& values, const std::vector<int>& shape,
                              bool requires_grad = false);
    static Tensor uniform(const std::vector<int>& shape, float lo, float hi, Rng& rng,
                          bool requires_grad = false);
    static Tensor normal(const std::vector<int>& shape, float mean, float stddev, Rng& rng,
                         bool requires_grad = false);
    // shares the data buffer of `other` under a new shape (same numel)
    static Tensor view_of(const Tensor& other, const std::vector<int>& shape);

    bool defined() const { return static_cast<bool>(impl); }

    const std::vector<int>& shape() const { return impl->shape; }
    int ndim() const { return static_cast<int>(impl->shape.size()); }
    int dim(int i) const;
    size_t numel() const { return impl ? impl->data->size() : 0; }

    bool requires_grad() const { return impl && impl->requires_grad; }
    void set_requires_grad(bool v) { impl->requires_grad = v; }

    std::shared_ptr<GradNode>& node() { return impl->node; }
    const std::shared_ptr<GradNode>& node() const { return impl->node; }

    float* ptr() { return impl->data->data(); }
    const float* ptr() const { return impl->data->data(); }
    std::vector<float>& values() { return *impl->data; }
    const std::vector<float>& values() const { return *impl->data; }
    float& at(size_t i) { return (*impl->data)[i]; }
    float at(size_t i) const { return (*impl->data)[i]; }

    float item() const;

    bool has_grad() const { return impl && static_cast<bool>(impl->grad); }
    void ensure_grad();
    float* grad_ptr() { return impl->grad->data(); }
    const float* grad_ptr() const { return impl->grad->data(); }
    std::vector<float>& grad_values() { return *impl->grad; }
    const std::vector<float>& grad_values() const { return *impl->grad; }
    void zero_grad();

    // fresh tensor with the same values, detached from any graph
    Tensor detached_copy() const;

    std::string shape_str() const;
};

size_t numel_of(const std::vector<int>& shape);

// Thread-local switch: when grad mode is off, ops do not record graph nodes.
bool grad_enabled();
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();

private:
    bool prev_;
};

// Thread-local switch for the post-op finiteness scan (on by default).
bool finite_checks_enabled();
void set_finite_checks(bool on);

// Throws NumericError if any element of t is NaN or Inf.
void check_finite(const Tensor& t, const char* op);

// Reverse-mode sweep from a scalar loss. Visits each reachable node exactly
// once in reverse topological order and accumulates gradients into every
// tensor with requires_grad. Calling it twice on the same graph throws.
void backward(Tensor& loss);

}  // namespace shiftforge
