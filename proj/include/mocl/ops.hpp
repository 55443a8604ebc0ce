#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mocl/tensor.hpp"

namespace mocl {

// Boolean mask over sequence positions (true = real token / attendable key).
using Mask = std::vector<bool>;

// Elementwise and affine ---------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
// s is a 1x1 tensor; gradient flows into both the scalar and the matrix.
Tensor scalar_mul(const Tensor& s, const Tensor& x);
// Adds a 1xN bias row to every row of x.
Tensor add_row_bias(const Tensor& x, const Tensor& bias);

// Contractions and layout --------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
// a * b^T without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor cols(const Tensor& x, Eigen::Index first, Eigen::Index count);
Tensor vstack(const Tensor& top, const Tensor& bottom);
Tensor hstack(const std::vector<Tensor>& parts);
// Gathers rows of table by token id; scatters gradient back on repeats.
Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids);
// Full contraction sum_ij x_ij * w_ij against a constant weight matrix.
Tensor weighted_sum(const Tensor& x, const Matrix& w);

// Nonlinearities and normalizers --------------------------------------------

Tensor gelu(const Tensor& x);
// Row-wise layer normalization with learned gain/bias (both 1xD).
Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                       double eps = 1e-5);
Tensor softmax_rows(const Tensor& x);
// Masked columns get probability exactly zero; every row must keep at least
// one unmasked column.
Tensor softmax_rows_masked(const Tensor& x, const Mask& key_mask);
// Mean over rows whose mask bit is set; returns 1xD.
Tensor masked_mean_rows(const Tensor& x, const Mask& row_mask);

// Scalar heads ---------------------------------------------------------------

// <a,b> / (|a||b|) for two equally-shaped vectors (1xD or Dx1).
Tensor cosine_similarity(const Tensor& a, const Tensor& b);
// logsumexp(logits) - logits[label] for a 1xC logits row; max-shifted.
Tensor cross_entropy(const Tensor& logits, int label);

// Hashing ---------------------------------------------------------------------

// FNV-1a over the raw bytes of the tensors' values, in row-major order.
// Used for freeze / bit-identity checks.
std::uint64_t hash_tensors(const std::vector<Tensor>& tensors);

// Gradient checking -----------------------------------------------------------

// Scalar-valued function of a parameter list.
using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

// Compares the reverse-mode gradient of f at theta against central finite
// differences, component-wise; returns the max relative error with
// denominator max(|ad|, |fd|, 1e-6). eps must lie in [1e-7, 1e-3].
double grad_check(const ScalarFn& f, const std::vector<Matrix>& theta, double eps = 1e-5);

}  // namespace mocl
