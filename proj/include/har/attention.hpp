#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "har/tensor.hpp"

namespace har {

enum class CompatMode { Dot, Pc };
enum class NormMode { Softmax, Tanh };

std::string to_string(CompatMode m);
std::string to_string(NormMode m);
CompatMode compat_mode_from_string(const std::string& s);
NormMode norm_mode_from_string(const std::string& s);

/// Per-level attention read-out for one sequence: the raw compatibility
/// scores c_i and their normalized weights a_i over the n spatial locations
/// of the tapped feature map.
struct CompatibilityProfile {
    std::size_t level = 0;  // 1-based attention level
    std::vector<double> scores;
    std::vector<double> weights;
    NormMode norm_mode = NormMode::Softmax;
};

/// scores[b,i] = <l_i, G> for local features [B,C,n] and global feature [B,C].
TensorPtr compat_dot(const TensorPtr& local, const TensorPtr& global);

/// Parametrized compatibility scores[b,i] = <u, l_i + G>; u is a learned
/// per-level weight vector of length C.
TensorPtr compat_pc(const TensorPtr& local, const TensorPtr& global, const TensorPtr& u);

/// Joint softmax over the n locations of each row, max-stabilized.
/// Throws on non-finite scores.
TensorPtr normalize_softmax(const TensorPtr& scores);

/// Pointwise tanh; locations are normalized independently of each other.
TensorPtr normalize_tanh(const TensorPtr& scores);

/// g[b,c] = sum_i weights[b,i] * local[b,c,i].
TensorPtr attend_pool(const TensorPtr& local, const TensorPtr& weights);

/// Column-wise concatenation of [B,C_1],...,[B,C_k] into [B,sum C_i].
TensorPtr concat_cols(const std::vector<TensorPtr>& parts);

/// Writes rows (level, index, score, weight) for all levels of one sequence.
void write_attention_csv(const std::string& path, const std::vector<CompatibilityProfile>& profiles);

}  // namespace har
