#pragma once

#include <cstddef>
#include <span>

#include "c2l/tape.hpp"
#include "c2l/tensor.hpp"

namespace c2l {

enum class Reduction { mean, sum };

// Differentiable primitives. Each validates operand shapes, computes the
// result eagerly and records a vector-Jacobian closure when any operand
// requires a gradient. No broadcasting apart from scalar operands of add.

/// Elementwise sum. Shapes must match, or one side must hold a single value.
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> scale(const Var<T>& a, T factor);

/// Elementwise (Hadamard) product of equally shaped tensors.
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> relu(const Var<T>& a);

/// [m x k] * [k x n] -> [m x n].
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);

/// x [B x in], weight [out x in], bias [out] -> x * weight^T + bias.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

struct ConvSpec {
  std::size_t stride = 1;
  std::size_t padding = 1;
};

/// 3x3 cross-correlation. input [B x C x H x W], kernel [O x C x 3 x 3],
/// bias [O] (pass a default-constructed Var for none). Output spatial size is
/// floor((H + 2*padding - 3) / stride) + 1. stride in {1,2}, padding in {0,1}.
template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernel, const Var<T>& bias, ConvSpec spec = {});

/// Group normalisation over [B x C x H x W] with per-channel affine gamma/beta.
template <typename T>
Var<T> group_norm(const Var<T>& input, const Var<T>& gamma, const Var<T>& beta, std::size_t groups,
                  T eps = T(1e-5));

/// 2x2 max pooling with stride 2; H and W must be even.
template <typename T>
Var<T> max_pool_2x2(const Var<T>& input);

/// [B x C x H x W] -> [B x C].
template <typename T>
Var<T> global_avg_pool(const Var<T>& input);

/// [B x ...] -> [B x rest].
template <typename T>
Var<T> flatten(const Var<T>& input);

inline constexpr double kNormEpsilon = 1e-12;

/// Scales every row of a [Z x D] tensor to unit Euclidean norm. A row whose
/// norm is below kNormEpsilon is an error.
template <typename T>
Var<T> l2_normalize(const Var<T>& input);

/// Softmax cross-entropy of [Z x C] logits against integer targets.
/// Returns a single-element tensor.
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const std::size_t> targets,
                             Reduction reduction = Reduction::mean);

/// Logistic loss of [Z x C] logits against 0/1 targets of the same shape,
/// averaged over all entries (or summed).
template <typename T>
Var<T> sigmoid_bce(const Var<T>& logits, const Tensor<T>& targets, Reduction reduction = Reduction::mean);

/// Row j of the result is [a_j . p_j, a_j . q_1, ..., a_j . q_N] / tau for
/// anchor [Z x D], positive [Z x D] and negatives [N x D]. Only the anchor is
/// differentiated; positives and negatives are treated as constants.
template <typename T>
Var<T> contrastive_logits(const Var<T>& anchor, const Tensor<T>& positive, const Tensor<T>& negatives, T tau);

// Plain tensor versions used outside of a tape.

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& input);

}  // namespace c2l
