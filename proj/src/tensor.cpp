#include "shiftforge/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace shiftforge {

namespace {
thread_local bool g_grad_enabled = true;
thread_local bool g_finite_checks = true;

std::shared_ptr<TensorImpl> make_impl(const std::vector<int>& shape, bool requires_grad) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = shape;
    impl->data = std::make_shared<std::vector<float>>(numel_of(shape), 0.0f);
    impl->requires_grad = requires_grad;
    return impl;
}
}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool finite_checks_enabled() { return g_finite_checks; }
void set_finite_checks(bool on) { g_finite_checks = on; }

size_t numel_of(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("non-positive extent in shape");
        n *= static_cast<size_t>(d);
    }
    return n;
}

Tensor Tensor::zeros(const std::vector<int>& shape, bool requires_grad) {
    Tensor t;
    t.impl = make_impl(shape, requires_grad);
    return t;
}

Tensor Tensor::full(const std::vector<int>& shape, float value, bool requires_grad) {
    Tensor t = zeros(shape, requires_grad);
    std::fill(t.values().begin(), t.values().end(), value);
    return t;
}

Tensor Tensor::scalar(float value, bool requires_grad) { return full({1}, value, requires_grad); }

Tensor Tensor::from_vector(const std::vector<float>& values, const std::vector<int>& shape,
                           bool requires_grad) {
    if (values.size() != numel_of(shape))
        throw ShapeError("from_vector: " + std::to_string(values.size()) + " values for shape of " +
                         std::to_string(numel_of(shape)));
    Tensor t;
    t.impl = std::make_shared<TensorImpl>();
    t.impl->shape = shape;
    t.impl->data = std::make_shared<std::vector<float>>(values);
    t.impl->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::uniform(const std::vector<int>& shape, float lo, float hi, Rng& rng,
                       bool requires_grad) {
    Tensor t = zeros(shape, requires_grad);
    for (float& v : t.values()) v = rng.uniform(lo, hi);
    return t;
}

Tensor Tensor::normal(const std::vector<int>& shape, float mean, float stddev, Rng& rng,
                      bool requires_grad) {
    Tensor t = zeros(shape, requires_grad);
    for (float& v : t.values()) v = rng.normal(mean, stddev);
    return t;
}

Tensor Tensor::view_of(const Tensor& other, const std::vector<int>& shape) {
    if (numel_of(shape) != other.numel())
        throw ShapeError("view_of: numel mismatch " + other.shape_str());
    Tensor t;
    t.impl = std::make_shared<TensorImpl>();
    t.impl->shape = shape;
    t.impl->data = other.impl->data;
    return t;
}

int Tensor::dim(int i) const {
    if (i < 0 || i >= ndim()) throw ShapeError("dim index out of range");
    return impl->shape[static_cast<size_t>(i)];
}

float Tensor::item() const {
    if (numel() != 1)
        throw ShapeError("item() on tensor with " + std::to_string(numel()) + " elements");
    return (*impl->data)[0];
}

void Tensor::ensure_grad() {
    if (!impl->grad) impl->grad = std::make_shared<std::vector<float>>(numel(), 0.0f);
}

void Tensor::zero_grad() {
    if (impl && impl->grad) std::fill(impl->grad->begin(), impl->grad->end(), 0.0f);
}

Tensor Tensor::detached_copy() const {
    Tensor t;
    t.impl = std::make_shared<TensorImpl>();
    t.impl->shape = impl->shape;
    t.impl->data = std::make_shared<std::vector<float>>(*impl->data);
    return t;
}

std::string Tensor::shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < impl->shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(impl->shape[i]);
    }
    return s + "]";
}

void check_finite(const Tensor& t, const char* op) {
    if (!g_finite_checks) return;
    for (float v : t.values()) {
        if (!std::isfinite(v)) throw NumericError(std::string(op) + " produced a non-finite value");
    }
}

void backward(Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) throw GraphError("backward requires a scalar loss");
    if (!loss.node() && !loss.requires_grad()) throw GraphError("backward on a tensor with no graph");

    // post-order DFS over nodes, deduplicated by node pointer
    std::vector<Tensor> order;
    std::unordered_set<GradNode*> seen;
    struct Frame {
        Tensor t;
        size_t next;
    };
    std::vector<Frame> stack;
    if (loss.node()) {
        seen.insert(loss.node().get());
        stack.push_back({loss, 0});
    }
    while (!stack.empty()) {
        Frame& f = stack.back();
        GradNode* n = f.t.node().get();
        if (f.next >= n->parents.size()) {
            order.push_back(f.t);
            stack.pop_back();
            continue;
        }
        Tensor& child = n->parents[f.next++];
        GradNode* cn = child.node().get();
        if (cn && !seen.count(cn)) {
            seen.insert(cn);
            stack.push_back({child, 0});
        }
    }

    loss.ensure_grad();
    loss.grad_values()[0] = 1.0f;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        GradNode* n = it->node().get();
        if (n->done) throw GraphError("backward called twice on the same graph");
        if (n->backward) {
            it->ensure_grad();  // zero incoming gradient if nothing reached this node
            n->backward(*it);
        }
        n->done = true;
    }
}

}  // namespace shiftforge
