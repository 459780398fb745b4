#pragma once

// Differentiable kernels. Each op computes its forward result eagerly and, when
// recording is active, registers a backward closure on the current tape.

#include <span>

#include "vqamask/numerics/tensor.hpp"

namespace vqamask::nn {

/// [m×k]·[k×n] -> [m×n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// [m×k]·[n×k]ᵀ -> [m×n].
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
/// [m×n] + [n] broadcast over rows.
Tensor add_row_bias(const Tensor& x, const Tensor& bias);
/// [C×H×W] + [C] broadcast over pixels.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);
Tensor scale(const Tensor& x, double factor);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// tanh approximation.
Tensor gelu(const Tensor& x);

/// Softmax along `axis` with max subtraction.
Tensor softmax(const Tensor& x, std::size_t axis);
/// Row softmax of a square [S×S] score matrix where row i only sees columns j <= i.
/// Masked entries are exactly zero.
Tensor causal_softmax(const Tensor& x);

/// Per-row normalization of [m×n] followed by gamma/beta of length n.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);

/// Rows of a [V×d] table selected by id.
Tensor gather_rows(const Tensor& table, std::span<const int> ids);

/// out.flat[i] = x.flat[source[i]]; `source` must be a permutation when used as
/// a bijection, but repeated indices are allowed (gradients accumulate).
Tensor permute(const Tensor& x, std::span<const std::size_t> source, Shape shape);
Tensor reshape(const Tensor& x, Shape shape);

/// x [C_in×h×w], kernel [C_in×C_out×k×k].
/// Output extent (h−1)·stride + k − 2·padding; padding crops the full result symmetrically.
Tensor transposed_conv2d(const Tensor& x, const Tensor& kernel, int stride, int padding = 0);

/// Mean over rows of −log softmax(logits)[target]. Throws IndexOutOfVocab.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

/// 1 − (2Σpg + ε)/(Σp² + Σg² + ε).
Tensor dice_loss(const Tensor& probs, std::span<const double> target, double eps = 1.0);

/// Mean of −[g log p + (1−g) log(1−p)] with both logs clamped at log(clamp).
Tensor binary_cross_entropy(const Tensor& probs, std::span<const double> target, double clamp = 1e-12);
/// Same loss evaluated from logits (p = sigmoid(z)); log p and log(1−p) come
/// from softplus so saturated pixels keep full precision.
Tensor binary_cross_entropy_with_logits(const Tensor& logits, std::span<const double> target, double clamp = 1e-12);

}  // namespace vqamask::nn
