#include "shiftforge/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace shiftforge {

namespace {

int g_threads = 0;  // 0: leave OpenMP defaults alone

inline size_t sz(int v) { return static_cast<size_t>(v); }

// 16 independent accumulator lanes so the reduction vectorizes without
// reassociation flags; lane order of the final sum is fixed.
inline float dot_f32(const float* __restrict a, const float* __restrict b, int k) {
    float acc[16] = {0};
    int t = 0;
    for (; t + 16 <= k; t += 16)
        for (int l = 0; l < 16; ++l) acc[l] += a[t + l] * b[t + l];
    float tail = 0.0f;
    for (; t < k; ++t) tail += a[t] * b[t];
    float s01 = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    float s23 = (acc[4] + acc[5]) + (acc[6] + acc[7]);
    float s45 = (acc[8] + acc[9]) + (acc[10] + acc[11]);
    float s67 = (acc[12] + acc[13]) + (acc[14] + acc[15]);
    return ((s01 + s23) + (s45 + s67)) + tail;
}

Tensor make_output(const std::vector<int>& shape) { return Tensor::zeros(shape); }

// Attach a node when grads are wanted. parents may contain tensors that do
// not require grad; their slot in the backward closure is skipped.
void attach(Tensor& out, const char* op, std::vector<Tensor> parents,
            std::function<void(const Tensor&)> bw) {
    bool wants = false;
    if (grad_enabled())
        for (const Tensor& p : parents)
            if (p.requires_grad()) wants = true;
    if (!wants) return;
    out.set_requires_grad(true);
    auto n = std::make_shared<GradNode>();
    n->op = op;
    n->parents = std::move(parents);
    n->backward = std::move(bw);
    out.node() = n;
}

void add_into(Tensor& p, const std::vector<float>& g) {
    p.ensure_grad();
    auto& pg = p.grad_values();
    for (size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
}

struct ConvDims {
    int N, C, H, W, F, kh, kw, OH, OW, K, P;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int padding) {
    if (x.ndim() != 4) throw ShapeError("conv2d input must be [N,C,H,W], got " + x.shape_str());
    if (w.ndim() != 4) throw ShapeError("conv2d weight must be [F,C,kh,kw], got " + w.shape_str());
    if (stride < 1) throw ConfigError("conv2d stride must be >= 1");
    if (padding < 0) throw ConfigError("conv2d padding must be >= 0");
    ConvDims d;
    d.N = x.dim(0);
    d.C = x.dim(1);
    d.H = x.dim(2);
    d.W = x.dim(3);
    d.F = w.dim(0);
    d.kh = w.dim(2);
    d.kw = w.dim(3);
    if (w.dim(1) != d.C)
        throw ShapeError("conv2d channel mismatch: input " + x.shape_str() + " vs weight " +
                         w.shape_str());
    if (d.kh > d.H + 2 * padding || d.kw > d.W + 2 * padding)
        throw ShapeError("conv2d kernel larger than padded input");
    int hspan = d.H + 2 * padding - d.kh;
    int wspan = d.W + 2 * padding - d.kw;
    if (hspan % stride != 0 || wspan % stride != 0)
        throw ConfigError("conv2d output size is not exact for stride " + std::to_string(stride));
    d.OH = hspan / stride + 1;
    d.OW = wspan / stride + 1;
    d.K = d.C * d.kh * d.kw;
    d.P = d.OH * d.OW;
    return d;
}

void im2col(const float* x, const ConvDims& d, int stride, int padding, float* cols) {
    // cols: [K x P], row (c,ki,kj), column (oh,ow)
    for (int c = 0; c < d.C; ++c) {
        const float* xc = x + sz(c) * sz(d.H) * sz(d.W);
        for (int ki = 0; ki < d.kh; ++ki) {
            for (int kj = 0; kj < d.kw; ++kj) {
                float* row = cols + (sz(c) * sz(d.kh * d.kw) + sz(ki * d.kw + kj)) * sz(d.P);
                for (int oh = 0; oh < d.OH; ++oh) {
                    int ih = oh * stride + ki - padding;
                    float* dst = row + sz(oh) * sz(d.OW);
                    if (ih < 0 || ih >= d.H) {
                        std::fill(dst, dst + d.OW, 0.0f);
                        continue;
                    }
                    const float* xr = xc + sz(ih) * sz(d.W);
                    for (int ow = 0; ow < d.OW; ++ow) {
                        int iw = ow * stride + kj - padding;
                        dst[ow] = (iw >= 0 && iw < d.W) ? xr[iw] : 0.0f;
                    }
                }
            }
        }
    }
}

void col2im_add(const float* cols, const ConvDims& d, int stride, int padding, float* x) {
    for (int c = 0; c < d.C; ++c) {
        float* xc = x + sz(c) * sz(d.H) * sz(d.W);
        for (int ki = 0; ki < d.kh; ++ki) {
            for (int kj = 0; kj < d.kw; ++kj) {
                const float* row = cols + (sz(c) * sz(d.kh * d.kw) + sz(ki * d.kw + kj)) * sz(d.P);
                for (int oh = 0; oh < d.OH; ++oh) {
                    int ih = oh * stride + ki - padding;
                    if (ih < 0 || ih >= d.H) continue;
                    float* xr = xc + sz(ih) * sz(d.W);
                    const float* src = row + sz(oh) * sz(d.OW);
                    for (int ow = 0; ow < d.OW; ++ow) {
                        int iw = ow * stride + kj - padding;
                        if (iw >= 0 && iw < d.W) xr[iw] += src[ow];
                    }
                }
            }
        }
    }
}

}  // namespace

void set_num_threads(int n) {
    g_threads = n;
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#endif
}

int num_threads() {
#ifdef _OPENMP
    return g_threads > 0 ? g_threads : omp_get_max_threads();
#else
    return 1;
#endif
}

void gemm_ab(const float* A, const float* B, float* C, int m, int k, int n, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        float* __restrict c = C + sz(i) * sz(n);
        if (!accumulate) std::fill(c, c + n, 0.0f);
        const float* a = A + sz(i) * sz(k);
        int kk = 0;
        for (; kk + 4 <= k; kk += 4) {
            float a0 = a[kk], a1 = a[kk + 1], a2 = a[kk + 2], a3 = a[kk + 3];
            if (a0 == 0.0f && a1 == 0.0f && a2 == 0.0f && a3 == 0.0f) continue;
            const float* __restrict b0 = B + sz(kk) * sz(n);
            const float* __restrict b1 = b0 + n;
            const float* __restrict b2 = b1 + n;
            const float* __restrict b3 = b2 + n;
            for (int j = 0; j < n; ++j)
                c[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
        }
        for (; kk < k; ++kk) {
            float av = a[kk];
            if (av == 0.0f) continue;
            const float* __restrict b = B + sz(kk) * sz(n);
            for (int j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

void gemm_abt(const float* A, const float* B, float* C, int m, int k, int n, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        const float* a = A + sz(i) * sz(k);
        float* c = C + sz(i) * sz(n);
        for (int j = 0; j < n; ++j) {
            float v = dot_f32(a, B + sz(j) * sz(k), k);
            c[j] = accumulate ? c[j] + v : v;
        }
    }
}

void gemm_atb(const float* A, const float* B, float* C, int m, int k, int n, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        float* __restrict c = C + sz(i) * sz(n);
        if (!accumulate) std::fill(c, c + n, 0.0f);
        int kk = 0;
        for (; kk + 4 <= k; kk += 4) {
            float a0 = A[sz(kk) * sz(m) + sz(i)];
            float a1 = A[sz(kk + 1) * sz(m) + sz(i)];
            float a2 = A[sz(kk + 2) * sz(m) + sz(i)];
            float a3 = A[sz(kk + 3) * sz(m) + sz(i)];
            if (a0 == 0.0f && a1 == 0.0f && a2 == 0.0f && a3 == 0.0f) continue;
            const float* __restrict b0 = B + sz(kk) * sz(n);
            const float* __restrict b1 = b0 + n;
            const float* __restrict b2 = b1 + n;
            const float* __restrict b3 = b2 + n;
            for (int j = 0; j < n; ++j)
                c[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
        }
        for (; kk < k; ++kk) {
            float av = A[sz(kk) * sz(m) + sz(i)];
            if (av == 0.0f) continue;
            const float* __restrict b = B + sz(kk) * sz(n);
            for (int j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2)
        throw ShapeError("matmul expects 2-d tensors, got " + a.shape_str() + " and " + b.shape_str());
    if (a.dim(1) != b.dim(0))
        throw ShapeError("matmul inner dimensions differ: " + a.shape_str() + " vs " + b.shape_str());
    int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out = make_output({m, n});
    gemm_ab(a.ptr(), b.ptr(), out.ptr(), m, k, n, false);
    check_finite(out, "matmul");
    attach(out, "matmul", {a, b}, [m, k, n](const Tensor& o) {
        Tensor& pa = o.node()->parents[0];
        Tensor& pb = o.node()->parents[1];
        if (pa.requires_grad()) {
            pa.ensure_grad();
            gemm_abt(o.grad_ptr(), pb.ptr(), pa.grad_ptr(), m, n, k, true);
        }
        if (pb.requires_grad()) {
            pb.ensure_grad();
            gemm_atb(pa.ptr(), o.grad_ptr(), pb.grad_ptr(), k, m, n, true);
        }
    });
    return out;
}

Tensor linear(const Tensor& x, const Tensor& w) {
    if (x.ndim() != 2 || w.ndim() != 2)
        throw ShapeError("linear expects 2-d tensors, got " + x.shape_str() + " and " + w.shape_str());
    if (x.dim(1) != w.dim(1))
        throw ShapeError("linear: input features " + x.shape_str() + " vs weight " + w.shape_str());
    int n = x.dim(0), k = x.dim(1), f = w.dim(0);
    Tensor out = make_output({n, f});
    gemm_abt(x.ptr(), w.ptr(), out.ptr(), n, k, f, false);
    check_finite(out, "linear");
    attach(out, "linear", {x, w}, [n, k, f](const Tensor& o) {
        Tensor& px = o.node()->parents[0];
        Tensor& pw = o.node()->parents[1];
        if (px.requires_grad()) {
            px.ensure_grad();
            gemm_ab(o.grad_ptr(), pw.ptr(), px.grad_ptr(), n, f, k, true);
        }
        if (pw.requires_grad()) {
            pw.ensure_grad();
            gemm_atb(o.grad_ptr(), px.ptr(), pw.grad_ptr(), f, n, k, true);
        }
    });
    return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int padding) {
    ConvDims d = conv_dims(x, w, stride, padding);
    Tensor out = make_output({d.N, d.F, d.OH, d.OW});
    std::vector<float> cols(sz(d.K) * sz(d.P));
    const size_t img_in = sz(d.C) * sz(d.H) * sz(d.W);
    const size_t img_out = sz(d.F) * sz(d.P);
    for (int img = 0; img < d.N; ++img) {
        im2col(x.ptr() + sz(img) * img_in, d, stride, padding, cols.data());
        gemm_ab(w.ptr(), cols.data(), out.ptr() + sz(img) * img_out, d.F, d.K, d.P, false);
    }
    check_finite(out, "conv2d");
    attach(out, "conv2d", {x, w}, [d, stride, padding, img_in, img_out](const Tensor& o) {
        Tensor& px = o.node()->parents[0];
        Tensor& pw = o.node()->parents[1];
        bool need_x = px.requires_grad();
        bool need_w = pw.requires_grad();
        if (need_x) px.ensure_grad();
        if (need_w) pw.ensure_grad();
        std::vector<float> cols(sz(d.K) * sz(d.P));
        std::vector<float> dcols(need_x ? cols.size() : 0);
        for (int img = 0; img < d.N; ++img) {
            const float* dout = o.grad_ptr() + sz(img) * img_out;
            if (need_w) {
                im2col(px.ptr() + sz(img) * img_in, d, stride, padding, cols.data());
                gemm_abt(dout, cols.data(), pw.grad_ptr(), d.F, d.P, d.K, true);
            }
            if (need_x) {
                gemm_atb(pw.ptr(), dout, dcols.data(), d.K, d.F, d.P, false);
                col2im_add(dcols.data(), d, stride, padding, px.grad_ptr() + sz(img) * img_in);
            }
        }
    });
    return out;
}

Tensor bias_add_rows(const Tensor& x, const Tensor& b) {
    if (x.ndim() != 2 || b.ndim() != 1 || b.dim(0) != x.dim(1))
        throw ShapeError("bias_add_rows: " + x.shape_str() + " with bias " + b.shape_str());
    int n = x.dim(0), f = x.dim(1);
    Tensor out = make_output(x.shape());
    const float* xp = x.ptr();
    const float* bp = b.ptr();
    float* op = out.ptr();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < f; ++j) op[sz(i) * sz(f) + sz(j)] = xp[sz(i) * sz(f) + sz(j)] + bp[j];
    check_finite(out, "bias_add_rows");
    attach(out, "bias_add_rows", {x, b}, [n, f](const Tensor& o) {
        Tensor& px = o.node()->parents[0];
        Tensor& pb = o.node()->parents[1];
        const float* g = o.grad_ptr();
        if (px.requires_grad()) add_into(px, o.grad_values());
        if (pb.requires_grad()) {
            pb.ensure_grad();
            float* gb = pb.grad_ptr();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < f; ++j) gb[j] += g[sz(i) * sz(f) + sz(j)];
        }
    });
    return out;
}

Tensor bias_add_nchw(const Tensor& x, const Tensor& b) {
    if (x.ndim() != 4 || b.ndim() != 1 || b.dim(0) != x.dim(1))
        throw ShapeError("bias_add_nchw: " + x.shape_str() + " with bias " + b.shape_str());
    int n = x.dim(0), c = x.dim(1);
    size_t hw = sz(x.dim(2)) * sz(x.dim(3));
    Tensor out = make_output(x.shape());
    const float* xp = x.ptr();
    const float* bp = b.ptr();
    float* op = out.ptr();
    for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) {
            size_t base = (sz(i) * sz(c) + sz(ch)) * hw;
            float bv = bp[ch];
            for (size_t p = 0; p < hw; ++p) op[base + p] = xp[base + p] + bv;
        }
    check_finite(out, "bias_add_nchw");
    attach(out, "bias_add_nchw", {x, b}, [n, c, hw](const Tensor& o) {
        Tensor& px = o.node()->parents[0];
        Tensor& pb = o.node()->parents[1];
        const float* g = o.grad_ptr();
        if (px.requires_grad()) add_into(px, o.grad_values());
        if (pb.requires_grad()) {
            pb.ensure_grad();
            float* gb = pb.grad_ptr();
            for (int i = 0; i < n; ++i)
                for (int ch = 0; ch < c; ++ch) {
                    size_t base = (sz(i) * sz(c) + sz(ch)) * hw;
                    float s = 0.0f;
                    for (size_t p = 0; p < hw; ++p) s += g[base + p];
                    gb[ch] += s;
                }
        }
    });
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out = make_output(x.shape());
    const float* xp = x.ptr();
    float* op = out.ptr();
    size_t n = x.numel();
    for (size_t i = 0; i < n; ++i) op[i] = xp[i] > 0.0f ? xp[i] : 0.0f;
    check_finite(out, "relu");
    attach(out, "relu", {x}, [n](const Tensor& o) {
        Tensor& px = o.node()->parents[0];
        if (!px.requires_grad()) return;
        px.ensure_grad();
        const float* g = o.grad_ptr();
        const float* xp = px.ptr();
        float* gx = px.grad_ptr();
        for (size_t i = 0; i < n; ++i)
            if (xp[i] > 0.0f) gx[i] += g[i];
    });
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("add: " + a.shape_str() + " vs " + b.shape_str());
    Tensor out = make_output(a.shape());
    const float* ap = a.ptr();
    const float* bp = b.ptr();
    float* op = out.ptr();
    size_t n = a.numel();
    for (size_t i = 0; i < n; ++i) op[i] = ap[i] + bp[i];
    check_finite(out, "add");
    attach(out, "add", {a, b}, [](const Tensor& o) {
        for (Tensor& p : o.node()->parents)
            if (p.requires_grad()) add_into(p, o.grad_values());
    });
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("mul: " + a.shape_str() + " vs " + b.shape_str());
    Tensor out = make_output(a.shape());
    const float* ap = a.ptr();
    const float* bp = b.ptr();
    float* op = out.ptr();
    size_t n = a.numel();
    for (size_t i = 0; i < n; ++i) op[i] = ap[i] * bp[i];
    check_finite(out, "mul");
    attach(out, "mul", {a, b}, [n](const Tensor& o) {
        Tensor& pa = o.node()->parents[0];
        Tensor& pb = o.node()->parents[1];
        const float* g = o.grad_ptr();
        if (pa.requires_grad()) {
            pa.ensure_grad();
            float* ga = pa.grad_ptr();
            const float* bp = pb.ptr();
            for (size_t i = 0; i < n; ++i) ga[i] += g[i] * bp[i];
        }
        if (pb.requires_grad()) {
            pb.ensure_grad();
            float* gb = pb.grad_ptr();
            const float* ap = pa.ptr();
            for (size_t i = 0; i < n; ++i) gb[i] += g[i] * ap[i];
        }
    });
    return out;
}

Tensor affine(const Tensor& x, float scale, float shift) {
    Tensor out = make_output(x.shape());
    const float* xp = x.ptr();
    float* op = out.ptr();
    size_t n = x.numel();
    for (size_t i = 0; i < n; ++i) op[i] = scale * xp[i] + shift;
    check_finite(out, "affine");
    attach(out, "affine", {x}, [scale, n](const Tensor& o) {
        Tensor& px = o.node()->parents[0];
        if (!px.requires_grad()) return;
        px.ensure_grad();
        const float* g = o.grad_ptr();
        float* gx = px.grad_ptr();
        for (size_t i = 0; i < n; ++i) gx[i] += scale * g[i];
    });
    return out;
}

Tensor exp2_elem(const Tensor& x) {
    Tensor out = make_output(x.shape());
    const float* xp = x.ptr();
    float* op = out.ptr();
    size_t n = x.numel();
    for (size_t i = 0; i < n; ++i) op[i] = std::exp2f(xp[i]);
    check_finite(out, "exp2");
    attach(out, "exp2", {x}, [n](const Tensor& o) {
        Tensor& px = o.node()->parents[0];
        if (!px.requires_grad()) return;
        px.ensure_grad();
        const float ln2 = 0.69314718055994530942f;
        const float* g = o.grad_ptr();
        const float* op = o.ptr();
        float* gx = px.grad_ptr();
        for (size_t i = 0; i < n; ++i) gx[i] += g[i] * ln2 * op[i];
    });
    return out;
}

Tensor sum(const Tensor& x) {
    Tensor out = Tensor::zeros({1});
    double acc = 0.0;
    for (float v : x.values()) acc += v;
    out.at(0) = static_cast<float>(acc);
    check_finite(out, "sum");
    attach(out, "sum", {x}, [](const Tensor& o) {
        Tensor& px = o.node()->parents[0];
        if (!px.requires_grad()) return;
        px.ensure_grad();
        float g = o.grad_values()[0];
        for (float& v : px.grad_values()) v += g;
    });
    return out;
}

Tensor sum_squares(const Tensor& x) {
    Tensor out = Tensor::zeros({1});
    double acc = 0.0;
    for (float v : x.values()) acc += static_cast<double>(v) * v;
    out.at(0) = static_cast<float>(acc);
    check_finite(out, "sum_squares");
    attach(out, "sum_squares", {x}, [](const Tensor& o) {
        Tensor& px = o.node()->parents[0];
        if (!px.requires_grad()) return;
        px.ensure_grad();
        float g = o.grad_values()[0];
        const float* xp = px.ptr();
        float* gx = px.grad_ptr();
        size_t n = px.numel();
        for (size_t i = 0; i < n; ++i) gx[i] += 2.0f * xp[i] * g;
    });
    return out;
}

Tensor reshape(const Tensor& x, const std::vector<int>& shape) {
    Tensor out = Tensor::view_of(x, shape);
    attach(out, "reshape", {x}, [](const Tensor& o) {
        Tensor& px = o.node()->parents[0];
        if (px.requires_grad()) add_into(px, o.grad_values());
    });
    return out;
}

Tensor flatten(const Tensor& x) {
    if (x.ndim() < 2) throw ShapeError("flatten expects at least 2 dims");
    int rest = static_cast<int>(x.numel()) / x.dim(0);
    return reshape(x, {x.dim(0), rest});
}

Tensor maxpool2d(const Tensor& x, int kernel, int stride) {
    if (x.ndim() != 4) throw ShapeError("maxpool2d input must be [N,C,H,W]");
    int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (kernel > H || kernel > W) throw ShapeError("maxpool2d kernel larger than input");
    int OH = (H - kernel) / stride + 1;
    int OW = (W - kernel) / stride + 1;
    Tensor out = make_output({N, C, OH, OW});
    auto argmax = std::make_shared<std::vector<int>>(out.numel());
    const float* xp = x.ptr();
    float* op = out.ptr();
    size_t oi = 0;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const float* plane = xp + (sz(n) * sz(C) + sz(c)) * sz(H) * sz(W);
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow) {
                    float best = -std::numeric_limits<float>::infinity();
                    int besti = 0;
                    for (int ki = 0; ki < kernel; ++ki)
                        for (int kj = 0; kj < kernel; ++kj) {
                            int idx = (oh * stride + ki) * W + ow * stride + kj;
                            if (plane[idx] > best) {
                                best = plane[idx];
                                besti = idx;
                            }
                        }
                    op[oi] = best;
                    (*argmax)[oi] = besti;
                    ++oi;
                }
        }
    check_finite(out, "maxpool2d");
    attach(out, "maxpool2d", {x}, [argmax, N, C, H, W, OH, OW](const Tensor& o) {
        Tensor& px = o.node()->parents[0];
        if (!px.requires_grad()) return;
        px.ensure_grad();
        const float* g = o.grad_ptr();
        float* gx = px.grad_ptr();
        size_t oi = 0;
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                float* plane = gx + (sz(n) * sz(C) + sz(c)) * sz(H) * sz(W);
                for (int p = 0; p < OH * OW; ++p, ++oi) plane[(*argmax)[oi]] += g[oi];
            }
    });
    return out;
}

Tensor avgpool2d(const Tensor& x, int kernel, int stride) {
    if (x.ndim() != 4) throw ShapeError("avgpool2d input must be [N,C,H,W]");
    int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (kernel > H || kernel > W) throw ShapeError("avgpool2d kernel larger than input");
    int OH = (H - kernel) / stride + 1;
    int OW = (W - kernel) / stride + 1;
    Tensor out = make_output({N, C, OH, OW});
    const float inv = 1.0f / static_cast<float>(kernel * kernel);
    const float* xp = x.ptr();
    float* op = out.ptr();
    size_t oi = 0;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const float* plane = xp + (sz(n) * sz(C) + sz(c)) * sz(H) * sz(W);
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow) {
                    float s = 0.0f;
                    for (int ki = 0; ki < kernel; ++ki)
                        for (int kj = 0; kj < kernel; ++kj)
                            s += plane[(oh * stride + ki) * W + ow * stride + kj];
                    op[oi++] = s * inv;
                }
        }
    check_finite(out, "avgpool2d");
    attach(out, "avgpool2d", {x}, [N, C, H, W, OH, OW, kernel, stride, inv](const Tensor& o) {
        Tensor& px = o.node()->parents[0];
        if (!px.requires_grad()) return;
        px.ensure_grad();
        const float* g = o.grad_ptr();
        float* gx = px.grad_ptr();
        size_t oi = 0;
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                float* plane = gx + (sz(n) * sz(C) + sz(c)) * sz(H) * sz(W);
                for (int oh = 0; oh < OH; ++oh)
                    for (int ow = 0; ow < OW; ++ow, ++oi) {
                        float gv = g[oi] * inv;
                        for (int ki = 0; ki < kernel; ++ki)
                            for (int kj = 0; kj < kernel; ++kj)
                                plane[(oh * stride + ki) * W + ow * stride + kj] += gv;
                    }
            }
    });
    return out;
}

Tensor global_avgpool(const Tensor& x) {
    if (x.ndim() != 4) throw ShapeError("global_avgpool input must be [N,C,H,W]");
    int N = x.dim(0), C = x.dim(1);
    size_t hw = sz(x.dim(2)) * sz(x.dim(3));
    Tensor out = make_output({N, C});
    const float inv = 1.0f / static_cast<float>(hw);
    const float* xp = x.ptr();
    float* op = out.ptr();
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            size_t base = (sz(n) * sz(C) + sz(c)) * hw;
            float s = 0.0f;
            for (size_t p = 0; p < hw; ++p) s += xp[base + p];
            op[sz(n) * sz(C) + sz(c)] = s * inv;
        }
    check_finite(out, "global_avgpool");
    attach(out, "global_avgpool", {x}, [N, C, hw, inv](const Tensor& o) {
        Tensor& px = o.node()->parents[0];
        if (!px.requires_grad()) return;
        px.ensure_grad();
        const float* g = o.grad_ptr();
        float* gx = px.grad_ptr();
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                float gv = g[sz(n) * sz(C) + sz(c)] * inv;
                size_t base = (sz(n) * sz(C) + sz(c)) * hw;
                for (size_t p = 0; p < hw; ++p) gx[base + p] += gv;
            }
    });
    return out;
}

Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                 Tensor& running_var, bool training, float momentum, float eps) {
    int nd = x.ndim();
    if (nd != 2 && nd != 4) throw ShapeError("batchnorm input must be [N,C] or [N,C,H,W]");
    int N = x.dim(0), C = x.dim(1);
    size_t hw = (nd == 4) ? sz(x.dim(2)) * sz(x.dim(3)) : 1;
    if (gamma.numel() != sz(C) || beta.numel() != sz(C) || running_mean.numel() != sz(C) ||
        running_var.numel() != sz(C))
        throw ShapeError("batchnorm parameter size mismatch");
    if (training && N < 2) throw ConfigError("batchnorm training mode requires batch >= 2");

    size_t m = sz(N) * hw;  // elements per channel
    std::vector<float> mean(sz(C)), var(sz(C));
    if (training) {
        for (int c = 0; c < C; ++c) {
            double s = 0.0;
            for (int n = 0; n < N; ++n) {
                const float* base = x.ptr() + (sz(n) * sz(C) + sz(c)) * hw;
                for (size_t p = 0; p < hw; ++p) s += base[p];
            }
            float mu = static_cast<float>(s / static_cast<double>(m));
            double v = 0.0;
            for (int n = 0; n < N; ++n) {
                const float* base = x.ptr() + (sz(n) * sz(C) + sz(c)) * hw;
                for (size_t p = 0; p < hw; ++p) {
                    double d = base[p] - mu;
                    v += d * d;
                }
            }
            mean[sz(c)] = mu;
            var[sz(c)] = static_cast<float>(v / static_cast<double>(m));
        }
        // running stats use the unbiased variance, torch-style
        float unbias = m > 1 ? static_cast<float>(m) / static_cast<float>(m - 1) : 1.0f;
        for (int c = 0; c < C; ++c) {
            running_mean.at(sz(c)) = (1.0f - momentum) * running_mean.at(sz(c)) + momentum * mean[sz(c)];
            running_var.at(sz(c)) =
                (1.0f - momentum) * running_var.at(sz(c)) + momentum * var[sz(c)] * unbias;
        }
    } else {
        for (int c = 0; c < C; ++c) {
            mean[sz(c)] = running_mean.at(sz(c));
            var[sz(c)] = running_var.at(sz(c));
        }
    }

    std::vector<float> invstd(sz(C));
    for (int c = 0; c < C; ++c) invstd[sz(c)] = 1.0f / std::sqrt(var[sz(c)] + eps);

    Tensor out = make_output(x.shape());
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            size_t base = (sz(n) * sz(C) + sz(c)) * hw;
            float mu = mean[sz(c)], is = invstd[sz(c)];
            float gm = gamma.at(sz(c)), bt = beta.at(sz(c));
            const float* xp = x.ptr() + base;
            float* op = out.ptr() + base;
            for (size_t p = 0; p < hw; ++p) op[p] = (xp[p] - mu) * is * gm + bt;
        }
    check_finite(out, "batchnorm");

    auto mean_sh = std::make_shared<std::vector<float>>(std::move(mean));
    auto invstd_sh = std::make_shared<std::vector<float>>(std::move(invstd));
    attach(out, "batchnorm", {x, gamma, beta},
           [mean_sh, invstd_sh, N, C, hw, m, training](const Tensor& o) {
               Tensor& px = o.node()->parents[0];
               Tensor& pg = o.node()->parents[1];
               Tensor& pb = o.node()->parents[2];
               const float* g = o.grad_ptr();
               const float* xp = px.ptr();
               bool need_x = px.requires_grad();
               if (need_x) px.ensure_grad();
               if (pg.requires_grad()) pg.ensure_grad();
               if (pb.requires_grad()) pb.ensure_grad();
               for (int c = 0; c < C; ++c) {
                   float mu = (*mean_sh)[sz(c)], is = (*invstd_sh)[sz(c)];
                   float gm = pg.at(sz(c));
                   // per-channel reductions
                   double sum_g = 0.0, sum_gx = 0.0;
                   for (int n = 0; n < N; ++n) {
                       size_t base = (sz(n) * sz(C) + sz(c)) * hw;
                       for (size_t p = 0; p < hw; ++p) {
                           float gv = g[base + p];
                           sum_g += gv;
                           sum_gx += static_cast<double>(gv) * (xp[base + p] - mu) * is;
                       }
                   }
                   if (pb.requires_grad()) pb.grad_ptr()[c] += static_cast<float>(sum_g);
                   if (pg.requires_grad()) pg.grad_ptr()[c] += static_cast<float>(sum_gx);
                   if (!need_x) continue;
                   float* gx = px.grad_ptr();
                   if (training) {
                       float inv_m = 1.0f / static_cast<float>(m);
                       float sg = static_cast<float>(sum_g), sgx = static_cast<float>(sum_gx);
                       for (int n = 0; n < N; ++n) {
                           size_t base = (sz(n) * sz(C) + sz(c)) * hw;
                           for (size_t p = 0; p < hw; ++p) {
                               float xhat = (xp[base + p] - mu) * is;
                               gx[base + p] +=
                                   gm * is * (g[base + p] - inv_m * (sg + xhat * sgx));
                           }
                       }
                   } else {
                       for (int n = 0; n < N; ++n) {
                           size_t base = (sz(n) * sz(C) + sz(c)) * hw;
                           for (size_t p = 0; p < hw; ++p) gx[base + p] += gm * is * g[base + p];
                       }
                   }
               }
           });
    return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.ndim() != 2) throw ShapeError("cross_entropy logits must be [N,C]");
    int N = logits.dim(0), C = logits.dim(1);
    if (static_cast<int>(labels.size()) != N)
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                         std::to_string(N));
    for (int i = 0; i < N; ++i)
        if (labels[sz(i)] < 0 || labels[sz(i)] >= C)
            throw IndexError("cross_entropy label " + std::to_string(labels[sz(i)]) +
                             " out of range [0," + std::to_string(C) + ")");
    auto probs = std::make_shared<std::vector<float>>(sz(N) * sz(C));
    const float* lp = logits.ptr();
    double loss = 0.0;
    for (int i = 0; i < N; ++i) {
        const float* row = lp + sz(i) * sz(C);
        float mx = row[0];
        for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        double denom = 0.0;
        for (int c = 0; c < C; ++c) denom += std::exp(static_cast<double>(row[c] - mx));
        double logz = std::log(denom) + mx;
        for (int c = 0; c < C; ++c)
            (*probs)[sz(i) * sz(C) + sz(c)] =
                static_cast<float>(std::exp(static_cast<double>(row[c]) - logz));
        loss -= static_cast<double>(row[labels[sz(i)]]) - logz;
    }
    Tensor out = Tensor::scalar(static_cast<float>(loss / N));
    check_finite(out, "cross_entropy");
    auto labels_sh = std::make_shared<std::vector<int>>(labels);
    attach(out, "cross_entropy", {logits}, [probs, labels_sh, N, C](const Tensor& o) {
        Tensor& pl = o.node()->parents[0];
        if (!pl.requires_grad()) return;
        pl.ensure_grad();
        float g = o.grad_values()[0] / static_cast<float>(N);
        float* gl = pl.grad_ptr();
        for (int i = 0; i < N; ++i) {
            for (int c = 0; c < C; ++c)
                gl[sz(i) * sz(C) + sz(c)] += g * (*probs)[sz(i) * sz(C) + sz(c)];
            gl[sz(i) * sz(C) + sz((*labels_sh)[sz(i)])] -= g;
        }
    });
    return out;
}

int argmax_row(const Tensor& logits, int row) {
    int C = logits.dim(1);
    const float* r = logits.ptr() + sz(row) * sz(C);
    int best = 0;
    for (int c = 1; c < C; ++c)
        if (r[c] > r[best]) best = c;
    return best;
}

bool label_in_topk(const Tensor& logits, int row, int label, int k) {
    int C = logits.dim(1);
    const float* r = logits.ptr() + sz(row) * sz(C);
    float lv = r[label];
    int higher = 0;
    for (int c = 0; c < C; ++c)
        if (r[c] > lv) ++higher;
    return higher < k;
}

}  // namespace shiftforge
