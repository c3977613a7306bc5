#pragma once

#include <vector>

#include "shiftforge/tensor.hpp"

namespace shiftforge {

// ---- dense kernels (row-major, contiguous) ----
// C[m x n] (+)= A[m x k] * B[k x n]
void gemm_ab(const float* A, const float* B, float* C, int m, int k, int n, bool accumulate);
// C[m x n] (+)= A[m x k] * B[n x k]^T
void gemm_abt(const float* A, const float* B, float* C, int m, int k, int n, bool accumulate);
// C[m x n] (+)= A[k x m]^T * B[k x n]
void gemm_atb(const float* A, const float* B, float* C, int m, int k, int n, bool accumulate);

void set_num_threads(int n);
int num_threads();

// ---- autodiff ops ----
Tensor matmul(const Tensor& a, const Tensor& b);
// x: [N,K], w: [F,K] (one output row per filter) -> [N,F]
Tensor linear(const Tensor& x, const Tensor& w);
Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int padding);
Tensor bias_add_rows(const Tensor& x, const Tensor& b);   // x: [N,F], b: [F]
Tensor bias_add_nchw(const Tensor& x, const Tensor& b);   // x: [N,C,H,W], b: [C]

Tensor relu(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);             // same shape
Tensor mul(const Tensor& a, const Tensor& b);             // same shape, elementwise
Tensor affine(const Tensor& x, float scale, float shift); // scale*x + shift
Tensor exp2_elem(const Tensor& x);                        // 2^x elementwise
Tensor sum(const Tensor& x);                              // -> scalar
Tensor sum_squares(const Tensor& x);                      // -> scalar
Tensor reshape(const Tensor& x, const std::vector<int>& shape);
Tensor flatten(const Tensor& x);                          // [N,...] -> [N,rest]

Tensor maxpool2d(const Tensor& x, int kernel, int stride);
Tensor avgpool2d(const Tensor& x, int kernel, int stride);
Tensor global_avgpool(const Tensor& x);                   // [N,C,H,W] -> [N,C]

// Batch normalization over the channel axis. Accepts [N,C,H,W] or [N,C].
// In training mode batch statistics are used and running stats updated in
// place; in eval mode running stats are used. Training requires batch >= 2.
Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                 Tensor& running_var, bool training, float momentum = 0.1f, float eps = 1e-5f);

// mean over the batch of -log softmax(logits)[label]
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// argmax/top-k accuracy helpers (no graph)
int argmax_row(const Tensor& logits, int row);
bool label_in_topk(const Tensor& logits, int row, int label, int k);

}  // namespace shiftforge
