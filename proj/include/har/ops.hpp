#pragma once

#include <cstddef>
#include <vector>

#include "har/tensor.hpp"

namespace har {

/// 1D cross-correlation. input [B,C_in,L], weights [C_out,C_in,K], bias [C_out]
/// -> [B,C_out,L_out] with L_out = (L + 2*padding - K)/stride + 1.
/// Accumulation order per output element is bias, then (c_in, k) ascending,
/// each step a single fused multiply-add; tests compare against a
/// direct-summation oracle written the same way.
TensorPtr conv1d(const TensorPtr& input, const TensorPtr& weights, const TensorPtr& bias,
                 std::size_t stride, std::size_t padding);

/// Max pooling over the last axis. input [B,C,L] -> [B,C,(L-window)/stride+1].
/// Backward routes the gradient to the first maximal position of each window.
TensorPtr maxpool1d(const TensorPtr& input, std::size_t window = 2, std::size_t stride = 2);

/// Elementwise max(0,x); subgradient at exactly 0 is 0.
TensorPtr relu(const TensorPtr& input);

/// Affine map. input [B,N], weights [M,N], bias [M] -> [B,M].
TensorPtr dense(const TensorPtr& input, const TensorPtr& weights, const TensorPtr& bias);

/// [B,C,L] -> [B,C*L], row-major copy.
TensorPtr flatten(const TensorPtr& input);

/// Mean negative log softmax probability of the true class, max-stabilized.
/// logits [B,K], labels in [0,K). Returns a scalar loss node.
TensorPtr softmax_cross_entropy(const TensorPtr& logits, const std::vector<int>& labels);

/// Row-wise softmax probabilities without graph wiring (for evaluation).
std::vector<double> softmax_rows(const TensorPtr& logits);

/// sum_i coeffs[i] * x[i] as a scalar node; used to scalarize outputs in
/// gradient checks.
TensorPtr weighted_sum(const TensorPtr& x, const std::vector<double>& coeffs);

/// Elementwise product of same-shape tensors.
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);

/// Sum of all elements as a scalar node.
TensorPtr sum_all(const TensorPtr& x);

}  // namespace har
