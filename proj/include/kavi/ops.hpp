#pragma once

#include "kavi/tensor.hpp"

namespace kavi {

// Elementwise binary ops require identical shapes; scalar overloads broadcast
// a single value. All ops record tape entries when an input requires grad.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double s);
Tensor mul(const Tensor& a, double s);

Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor relu(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator+(const Tensor& a, double s) { return add(a, s); }
inline Tensor operator*(const Tensor& a, double s) { return mul(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul(a, s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// Rank-2 linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

// X (N x F) plus row vector b (F), broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& b);
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Reductions.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum_axis(const Tensor& a, std::size_t axis);   // rank-2 only
Tensor mean_axis(const Tensor& a, std::size_t axis);  // rank-2 only

// Row-wise softmax family for (N x C) logits; numerically stabilized.
Tensor softmax_rows(const Tensor& logits);
Tensor log_softmax_rows(const Tensor& logits);

// Row selection: out[r, :] = a[indices[r], :]; backward scatter-adds.
Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& indices);

// Pairwise squared Euclidean distances between rows: (m x d, n x d) -> (m x n).
Tensor pairwise_sqdist(const Tensor& x, const Tensor& y);

// 1-D convolution over (N x Cin x L) with kernels (Cout x Cin x K) and bias
// (Cout); symmetric zero padding.
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b,
              std::size_t stride, std::size_t padding);

// Max pooling over the last axis of (N x C x L); ties resolve to the lowest
// index. Global average pooling reduces (N x C x L) to (N x C).
Tensor maxpool1d(const Tensor& x, std::size_t kernel, std::size_t stride);
Tensor global_avg_pool1d(const Tensor& x);

// Batch normalization over (N x F) per feature or (N x C x L) per channel.
// Training mode normalizes with batch statistics and updates the running
// buffers in place; inference mode uses the frozen running statistics.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  std::vector<double>& running_mean, std::vector<double>& running_var,
                  bool training, double momentum, double eps);

namespace detail {
// Raw row-major matmul kernels shared by forward and backward paths.
void mm_nn(const double* a, const double* b, double* c,
           std::size_t m, std::size_t k, std::size_t n);  // C += A * B
void mm_tn(const double* a, const double* b, double* c,
           std::size_t m, std::size_t k, std::size_t n);  // C += A^T * B, A is (m x k) -> C is (k x n), given B (m x n)
void mm_nt(const double* a, const double* b, double* c,
           std::size_t m, std::size_t k, std::size_t n);  // C += A * B^T, A (m x n), B (k x n) -> C (m x k)
}  // namespace detail

}  // namespace kavi
