#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "har/attention.hpp"
#include "har/ops.hpp"
#include "har/tensor.hpp"

#include "json.hpp"

namespace har {

enum class LayerKind { Conv1d, MaxPool1d, Relu, Dense, Flatten };

std::string to_string(LayerKind k);
LayerKind layer_kind_from_string(const std::string& s);

struct LayerSpec {
    LayerKind kind = LayerKind::Conv1d;
    std::size_t channels_out = 0;  // conv feature maps / dense units
    std::size_t kernel_len = 0;    // conv kernel / pool window
    std::size_t stride = 1;
    std::size_t padding = 0;
    bool tap = false;  // expose this layer's output as an attention feature map

    static LayerSpec conv(std::size_t channels_out, std::size_t kernel_len, std::size_t stride,
                          std::size_t padding);
    static LayerSpec pool(std::size_t window = 2, std::size_t stride = 2);
    static LayerSpec relu(bool tap = false);
    static LayerSpec dense(std::size_t units);
    static LayerSpec flat();

    bool operator==(const LayerSpec&) const = default;
};

/// Architecture plus attention-variant configuration. `layers` is the shared
/// trunk ending in the dense layer whose (ReLU-activated) output is the
/// global feature G; the classifier head is implied and reads either G
/// (attention_levels == 0) or the concatenated attention descriptors.
struct ModelSpec {
    std::size_t input_len = 128;
    std::size_t input_channels = 6;
    std::vector<LayerSpec> layers;
    std::size_t feature_dim = 128;       // width of G and of each tapped feature map
    std::size_t attention_levels = 0;    // S; the last S taps are attended
    CompatMode compat_mode = CompatMode::Pc;
    NormMode norm_mode = NormMode::Tanh;
    std::size_t num_classes = 6;

    /// The C(32)-C(64)-C(128)-P-C(128)-P-C(128)-P-FC(128) trunk with taps at
    /// the three wide conv levels. input_len must be divisible by 8.
    static ModelSpec paper_default(std::size_t input_len, std::size_t input_channels,
                                   std::size_t num_classes, std::size_t attention_levels = 0,
                                   CompatMode compat = CompatMode::Pc,
                                   NormMode norm = NormMode::Tanh);

    /// A structurally identical but narrow trunk for fast tests.
    static ModelSpec reduced(std::size_t input_len, std::size_t input_channels,
                             std::size_t num_classes, std::size_t width,
                             std::size_t attention_levels = 0,
                             CompatMode compat = CompatMode::Pc, NormMode norm = NormMode::Tanh);

    bool operator==(const ModelSpec&) const = default;
};

/// Throws std::invalid_argument when the spec violates its contracts.
void validate(const ModelSpec& spec);

struct TapInfo {
    std::size_t layer_index = 0;    // index into ModelSpec::layers
    std::size_t channels = 0;
    std::size_t length = 0;         // spatial locations n
    std::size_t stride_to_raw = 1;  // cumulative stride of the map vs raw samples
};

std::vector<TapInfo> tap_infos(const ModelSpec& spec);

nlohmann::json to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j);

struct NamedTensor {
    std::string name;
    TensorPtr value;
};

/// One graph evaluation. Tensors stay wired to the autodiff graph, so the
/// result can drive backward() when the inputs require gradients.
struct ModelForward {
    TensorPtr logits;                    // [B,num_classes]
    TensorPtr global_feature;            // G, [B,feature_dim]
    std::vector<TensorPtr> taps;         // every tapped map, [B,feature_dim,n_s]
    std::vector<TensorPtr> scores;       // per attention level, [B,n]
    std::vector<TensorPtr> att_weights;  // per attention level, [B,n]
    std::vector<TensorPtr> pooled;       // per attention level, [B,feature_dim]
};

class Model {
public:
    Model() = default;

    const ModelSpec& spec() const { return spec_; }
    const std::vector<NamedTensor>& params() const { return params_; }
    std::vector<TensorPtr> param_tensors() const;

    ModelForward forward(const TensorPtr& input) const;

    void zero_grad();

    /// Replaces a parameter's values; shapes must match.
    void set_param(const std::string& name, const std::vector<double>& values);

    friend Model build_model(const ModelSpec& spec, std::uint64_t seed);
    friend Model assemble_attention_model(const Model& base, std::size_t levels, CompatMode compat,
                                          NormMode norm, std::uint64_t seed);

private:
    ModelSpec spec_;
    std::vector<NamedTensor> params_;
    // indices into params_ for fast lookup during forward
    std::vector<std::pair<std::size_t, std::size_t>> layer_params_;  // per layer: (weight, bias) or npos
    std::vector<std::size_t> u_params_;                              // per attention level
    std::size_t classifier_w_ = 0, classifier_b_ = 0;
};

/// Initializes all parameters (He-style uniform fan-in scaling, u vectors
/// zero) deterministically from the seed.
Model build_model(const ModelSpec& spec, std::uint64_t seed);

/// The paper trunk with a plain classifier on G (no attention).
Model build_fundamental_cnn(std::size_t input_len, std::size_t input_channels,
                            std::size_t num_classes, std::uint64_t seed = 1);

/// Rewires a trained or fresh base model into an attention variant: trunk
/// parameters are shared, the classifier is re-created over the concatenated
/// descriptors, and pc mode gains one zero-initialized u vector per level.
Model assemble_attention_model(const Model& base, std::size_t levels, CompatMode compat,
                               NormMode norm, std::uint64_t seed = 1);

/// Attention read-out of one batch row as per-level profiles.
std::vector<CompatibilityProfile> extract_profiles(const ModelSpec& spec, const ModelForward& fwd,
                                                   std::size_t batch_index);

}  // namespace har
