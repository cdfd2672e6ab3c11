#include "har/model.hpp"

#include <cmath>
#include <stdexcept>

namespace har {

namespace {

constexpr std::size_t npos = static_cast<std::size_t>(-1);

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

std::string to_string(LayerKind k) {
    switch (k) {
        case LayerKind::Conv1d: return "conv1d";
        case LayerKind::MaxPool1d: return "maxpool1d";
        case LayerKind::Relu: return "relu";
        case LayerKind::Dense: return "dense";
        case LayerKind::Flatten: return "flatten";
    }
    throw std::logic_error("unreachable layer kind");
}

LayerKind layer_kind_from_string(const std::string& s) {
    if (s == "conv1d") return LayerKind::Conv1d;
    if (s == "maxpool1d") return LayerKind::MaxPool1d;
    if (s == "relu") return LayerKind::Relu;
    if (s == "dense") return LayerKind::Dense;
    if (s == "flatten") return LayerKind::Flatten;
    throw std::invalid_argument("unknown layer kind '" + s + "'");
}

LayerSpec LayerSpec::conv(std::size_t channels_out, std::size_t kernel_len, std::size_t stride,
                          std::size_t padding) {
    return {LayerKind::Conv1d, channels_out, kernel_len, stride, padding, false};
}
LayerSpec LayerSpec::pool(std::size_t window, std::size_t stride) {
    return {LayerKind::MaxPool1d, 0, window, stride, 0, false};
}
LayerSpec LayerSpec::relu(bool tap) { return {LayerKind::Relu, 0, 0, 1, 0, tap}; }
LayerSpec LayerSpec::dense(std::size_t units) { return {LayerKind::Dense, units, 0, 1, 0, false}; }
LayerSpec LayerSpec::flat() { return {LayerKind::Flatten, 0, 0, 1, 0, false}; }

ModelSpec ModelSpec::paper_default(std::size_t input_len, std::size_t input_channels,
                                   std::size_t num_classes, std::size_t attention_levels,
                                   CompatMode compat, NormMode norm) {
    return reduced(input_len, input_channels, num_classes, 128, attention_levels, compat, norm);
}

ModelSpec ModelSpec::reduced(std::size_t input_len, std::size_t input_channels,
                             std::size_t num_classes, std::size_t width,
                             std::size_t attention_levels, CompatMode compat, NormMode norm) {
    require(input_len % 8 == 0, "model: input_len " + std::to_string(input_len) +
                                    " must be divisible by 8 (three stride-2 pools)");
    require(width % 4 == 0 && width >= 4, "model: trunk width must be a positive multiple of 4");
    ModelSpec spec;
    spec.input_len = input_len;
    spec.input_channels = input_channels;
    spec.feature_dim = width;
    spec.attention_levels = attention_levels;
    spec.compat_mode = compat;
    spec.norm_mode = norm;
    spec.num_classes = num_classes;
    // kernel 5, stride 1, "same" padding keeps every tap at the pre-pool length
    const std::size_t k = 5, pad = 2;
    spec.layers = {
        LayerSpec::conv(width / 4, k, 1, pad), LayerSpec::relu(),
        LayerSpec::conv(width / 2, k, 1, pad), LayerSpec::relu(),
        LayerSpec::conv(width, k, 1, pad),     LayerSpec::relu(true), LayerSpec::pool(),
        LayerSpec::conv(width, k, 1, pad),     LayerSpec::relu(true), LayerSpec::pool(),
        LayerSpec::conv(width, k, 1, pad),     LayerSpec::relu(true), LayerSpec::pool(),
        LayerSpec::flat(),
        LayerSpec::dense(width),               LayerSpec::relu(),
    };
    validate(spec);
    return spec;
}

void validate(const ModelSpec& spec) {
    require(spec.input_len >= 1 && spec.input_channels >= 1, "model: empty input shape");
    require(spec.num_classes >= 2, "model: num_classes must be >= 2");
    require(!spec.layers.empty(), "model: no layers");
    require(spec.attention_levels <= 3, "model: attention_levels must be in {0,1,2,3}");

    std::size_t channels = spec.input_channels;
    std::size_t len = spec.input_len;
    bool flat = false;
    std::size_t width = 0;
    std::size_t taps = 0;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        const std::string at = "model: layer " + std::to_string(i) + " (" + to_string(l.kind) + ")";
        switch (l.kind) {
            case LayerKind::Conv1d:
                require(!flat, at + " after flatten");
                require(l.kernel_len >= 1 && l.stride >= 1, at + ": kernel_len and stride must be >= 1");
                require(l.channels_out >= 1, at + ": channels_out must be >= 1");
                require(len + 2 * l.padding >= l.kernel_len, at + ": input too short for kernel");
                len = (len + 2 * l.padding - l.kernel_len) / l.stride + 1;
                channels = l.channels_out;
                break;
            case LayerKind::MaxPool1d:
                require(!flat, at + " after flatten");
                require(l.kernel_len >= 1 && l.stride >= 1, at + ": window and stride must be >= 1");
                require(len >= l.kernel_len, at + ": input too short for window");
                len = (len - l.kernel_len) / l.stride + 1;
                break;
            case LayerKind::Relu:
                if (l.tap) {
                    require(!flat, at + ": tap after flatten");
                    require(channels == spec.feature_dim,
                            at + ": tapped map has " + std::to_string(channels) +
                                " channels, feature_dim is " + std::to_string(spec.feature_dim));
                    ++taps;
                }
                break;
            case LayerKind::Flatten:
                require(!flat, at + ": duplicate flatten");
                flat = true;
                width = channels * len;
                break;
            case LayerKind::Dense:
                require(flat, at + " before flatten");
                require(l.channels_out >= 1, at + ": channels_out must be >= 1");
                width = l.channels_out;
                break;
        }
    }
    require(flat, "model: trunk must end in flatten + dense");
    require(spec.layers.back().kind == LayerKind::Relu ||
                spec.layers.back().kind == LayerKind::Dense,
            "model: trunk must end at the global feature");
    require(width == spec.feature_dim, "model: trunk output width " + std::to_string(width) +
                                           " != feature_dim " + std::to_string(spec.feature_dim));
    require(spec.attention_levels <= taps,
            "model: attention_levels " + std::to_string(spec.attention_levels) + " > available taps " +
                std::to_string(taps));
}

std::vector<TapInfo> tap_infos(const ModelSpec& spec) {
    std::vector<TapInfo> infos;
    std::size_t channels = spec.input_channels;
    std::size_t len = spec.input_len;
    std::size_t stride = 1;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        switch (l.kind) {
            case LayerKind::Conv1d:
                len = (len + 2 * l.padding - l.kernel_len) / l.stride + 1;
                channels = l.channels_out;
                stride *= l.stride;
                break;
            case LayerKind::MaxPool1d:
                len = (len - l.kernel_len) / l.stride + 1;
                stride *= l.stride;
                break;
            case LayerKind::Relu:
                if (l.tap) infos.push_back({i, channels, len, stride});
                break;
            default:
                break;
        }
    }
    return infos;
}

nlohmann::json to_json(const ModelSpec& spec) {
    nlohmann::json layers = nlohmann::json::array();
    for (const LayerSpec& l : spec.layers) {
        layers.push_back({{"kind", to_string(l.kind)},
                          {"channels_out", l.channels_out},
                          {"kernel_len", l.kernel_len},
                          {"stride", l.stride},
                          {"padding", l.padding},
                          {"tap", l.tap}});
    }
    return {{"input_len", spec.input_len},
            {"input_channels", spec.input_channels},
            {"layers", layers},
            {"feature_dim", spec.feature_dim},
            {"attention_levels", spec.attention_levels},
            {"compat_mode", to_string(spec.compat_mode)},
            {"norm_mode", to_string(spec.norm_mode)},
            {"num_classes", spec.num_classes}};
}

ModelSpec model_spec_from_json(const nlohmann::json& j) {
    ModelSpec spec;
    spec.input_len = j.at("input_len").get<std::size_t>();
    spec.input_channels = j.at("input_channels").get<std::size_t>();
    spec.feature_dim = j.at("feature_dim").get<std::size_t>();
    spec.attention_levels = j.at("attention_levels").get<std::size_t>();
    spec.compat_mode = compat_mode_from_string(j.at("compat_mode").get<std::string>());
    spec.norm_mode = norm_mode_from_string(j.at("norm_mode").get<std::string>());
    spec.num_classes = j.at("num_classes").get<std::size_t>();
    for (const auto& lj : j.at("layers")) {
        LayerSpec l;
        l.kind = layer_kind_from_string(lj.at("kind").get<std::string>());
        l.channels_out = lj.at("channels_out").get<std::size_t>();
        l.kernel_len = lj.at("kernel_len").get<std::size_t>();
        l.stride = lj.at("stride").get<std::size_t>();
        l.padding = lj.at("padding").get<std::size_t>();
        l.tap = lj.at("tap").get<bool>();
        spec.layers.push_back(l);
    }
    validate(spec);
    return spec;
}

namespace {

TensorPtr he_uniform(Rng& rng, std::vector<std::size_t> shape, std::size_t fan_in) {
    auto t = Tensor::create(std::move(shape), true);
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (double& v : t->data) v = rng.uniform(-limit, limit);
    return t;
}

}  // namespace

Model build_model(const ModelSpec& spec, std::uint64_t seed) {
    validate(spec);
    Model m;
    m.spec_ = spec;
    Rng rng(Rng::mix(seed, 0xA11C0DE));

    std::size_t channels = spec.input_channels;
    std::size_t len = spec.input_len;
    std::size_t conv_no = 0, dense_no = 0;
    std::size_t flat_width = 0;
    bool flat = false;
    for (const LayerSpec& l : spec.layers) {
        switch (l.kind) {
            case LayerKind::Conv1d: {
                ++conv_no;
                const std::string base = "conv" + std::to_string(conv_no);
                auto w = he_uniform(rng, {l.channels_out, channels, l.kernel_len},
                                    channels * l.kernel_len);
                auto b = Tensor::create({l.channels_out}, true);
                m.layer_params_.push_back({m.params_.size(), m.params_.size() + 1});
                m.params_.push_back({base + ".weight", w});
                m.params_.push_back({base + ".bias", b});
                len = (len + 2 * l.padding - l.kernel_len) / l.stride + 1;
                channels = l.channels_out;
                break;
            }
            case LayerKind::Dense: {
                ++dense_no;
                const std::string base = "fc" + std::to_string(dense_no);
                const std::size_t fan_in = flat ? flat_width : channels;
                auto w = he_uniform(rng, {l.channels_out, fan_in}, fan_in);
                auto b = Tensor::create({l.channels_out}, true);
                m.layer_params_.push_back({m.params_.size(), m.params_.size() + 1});
                m.params_.push_back({base + ".weight", w});
                m.params_.push_back({base + ".bias", b});
                flat_width = l.channels_out;
                break;
            }
            case LayerKind::MaxPool1d:
                len = (len - l.kernel_len) / l.stride + 1;
                m.layer_params_.push_back({npos, npos});
                break;
            case LayerKind::Flatten:
                flat = true;
                flat_width = channels * len;
                m.layer_params_.push_back({npos, npos});
                break;
            case LayerKind::Relu:
                m.layer_params_.push_back({npos, npos});
                break;
        }
    }

    // zero-initialized u gives neutral attention at the start of training
    if (spec.attention_levels > 0 && spec.compat_mode == CompatMode::Pc) {
        for (std::size_t s = 1; s <= spec.attention_levels; ++s) {
            auto u = Tensor::create({spec.feature_dim}, true);
            m.u_params_.push_back(m.params_.size());
            m.params_.push_back({"att.u" + std::to_string(s), u});
        }
    }

    const std::size_t cls_in =
        spec.attention_levels > 0 ? spec.feature_dim * spec.attention_levels : spec.feature_dim;
    auto cw = he_uniform(rng, {spec.num_classes, cls_in}, cls_in);
    auto cb = Tensor::create({spec.num_classes}, true);
    m.classifier_w_ = m.params_.size();
    m.params_.push_back({"classifier.weight", cw});
    m.classifier_b_ = m.params_.size();
    m.params_.push_back({"classifier.bias", cb});
    return m;
}

Model build_fundamental_cnn(std::size_t input_len, std::size_t input_channels,
                            std::size_t num_classes, std::uint64_t seed) {
    return build_model(ModelSpec::paper_default(input_len, input_channels, num_classes), seed);
}

Model assemble_attention_model(const Model& base, std::size_t levels, CompatMode compat,
                               NormMode norm, std::uint64_t seed) {
    const std::size_t taps = tap_infos(base.spec()).size();
    if (levels < 1 || levels > taps) {
        throw std::invalid_argument("assemble_attention_model: " + std::to_string(levels) +
                                    " levels requested, trunk exposes " + std::to_string(taps) +
                                    " taps");
    }
    ModelSpec spec = base.spec();
    spec.attention_levels = levels;
    spec.compat_mode = compat;
    spec.norm_mode = norm;
    validate(spec);

    Model m;
    m.spec_ = spec;
    // trunk tensors are shared with the base model, not copied
    std::size_t li = 0;
    for (const LayerSpec& l : spec.layers) {
        if (l.kind == LayerKind::Conv1d || l.kind == LayerKind::Dense) {
            const auto [wi, bi] = base.layer_params_[li];
            m.layer_params_.push_back({m.params_.size(), m.params_.size() + 1});
            m.params_.push_back(base.params_[wi]);
            m.params_.push_back(base.params_[bi]);
        } else {
            m.layer_params_.push_back({npos, npos});
        }
        ++li;
    }
    if (compat == CompatMode::Pc) {
        for (std::size_t s = 1; s <= levels; ++s) {
            auto u = Tensor::create({spec.feature_dim}, true);
            m.u_params_.push_back(m.params_.size());
            m.params_.push_back({"att.u" + std::to_string(s), u});
        }
    }
    Rng rng(Rng::mix(seed, 0xC1A55));
    const std::size_t cls_in = spec.feature_dim * levels;
    auto cw = he_uniform(rng, {spec.num_classes, cls_in}, cls_in);
    auto cb = Tensor::create({spec.num_classes}, true);
    m.classifier_w_ = m.params_.size();
    m.params_.push_back({"classifier.weight", cw});
    m.classifier_b_ = m.params_.size();
    m.params_.push_back({"classifier.bias", cb});
    return m;
}

std::vector<TensorPtr> Model::param_tensors() const {
    std::vector<TensorPtr> out;
    out.reserve(params_.size());
    for (const NamedTensor& p : params_) out.push_back(p.value);
    return out;
}

void Model::zero_grad() {
    for (const NamedTensor& p : params_) p.value->zero_grad();
}

void Model::set_param(const std::string& name, const std::vector<double>& values) {
    for (NamedTensor& p : params_) {
        if (p.name == name) {
            if (values.size() != p.value->size()) {
                throw std::invalid_argument("set_param: size mismatch for " + name);
            }
            p.value->data = values;
            return;
        }
    }
    throw std::invalid_argument("set_param: no parameter named " + name);
}

ModelForward Model::forward(const TensorPtr& input) const {
    if (!input) throw std::invalid_argument("Model::forward: null input");
    if (input->rank() != 3 || input->shape[1] != spec_.input_channels ||
        input->shape[2] != spec_.input_len) {
        throw std::invalid_argument("Model::forward: input " + input->shape_str() +
                                    " does not match spec [B," +
                                    std::to_string(spec_.input_channels) + "," +
                                    std::to_string(spec_.input_len) + "]");
    }

    ModelForward fwd;
    TensorPtr x = input;
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
        const LayerSpec& l = spec_.layers[i];
        switch (l.kind) {
            case LayerKind::Conv1d: {
                const auto [wi, bi] = layer_params_[i];
                x = conv1d(x, params_[wi].value, params_[bi].value, l.stride, l.padding);
                break;
            }
            case LayerKind::MaxPool1d:
                x = maxpool1d(x, l.kernel_len, l.stride);
                break;
            case LayerKind::Relu:
                x = relu(x);
                if (l.tap) fwd.taps.push_back(x);
                break;
            case LayerKind::Flatten:
                x = flatten(x);
                break;
            case LayerKind::Dense: {
                const auto [wi, bi] = layer_params_[i];
                x = dense(x, params_[wi].value, params_[bi].value);
                break;
            }
        }
    }
    fwd.global_feature = x;

    TensorPtr classifier_in;
    const std::size_t s_levels = spec_.attention_levels;
    if (s_levels == 0) {
        classifier_in = fwd.global_feature;
    } else {
        // the attended levels are the last S taps, shallowest first
        const std::size_t first = fwd.taps.size() - s_levels;
        std::vector<TensorPtr> pooled;
        for (std::size_t s = 0; s < s_levels; ++s) {
            const TensorPtr& tap = fwd.taps[first + s];
            TensorPtr score;
            if (spec_.compat_mode == CompatMode::Dot) {
                score = compat_dot(tap, fwd.global_feature);
            } else {
                score = compat_pc(tap, fwd.global_feature, params_[u_params_[s]].value);
            }
            TensorPtr weight = spec_.norm_mode == NormMode::Softmax ? normalize_softmax(score)
                                                                    : normalize_tanh(score);
            fwd.scores.push_back(score);
            fwd.att_weights.push_back(weight);
            pooled.push_back(attend_pool(tap, weight));
        }
        fwd.pooled = pooled;
        classifier_in = s_levels == 1 ? pooled[0] : concat_cols(pooled);
    }

    fwd.logits = dense(classifier_in, params_[classifier_w_].value, params_[classifier_b_].value);
    return fwd;
}

std::vector<CompatibilityProfile> extract_profiles(const ModelSpec& spec, const ModelForward& fwd,
                                                   std::size_t batch_index) {
    std::vector<CompatibilityProfile> out;
    for (std::size_t s = 0; s < fwd.scores.size(); ++s) {
        const TensorPtr& sc = fwd.scores[s];
        const TensorPtr& wt = fwd.att_weights[s];
        const std::size_t n = sc->shape[1];
        if (batch_index >= sc->shape[0]) {
            throw std::invalid_argument("extract_profiles: batch index out of range");
        }
        CompatibilityProfile p;
        p.level = s + 1;
        p.norm_mode = spec.norm_mode;
        p.scores.assign(sc->data.begin() + batch_index * n, sc->data.begin() + (batch_index + 1) * n);
        p.weights.assign(wt->data.begin() + batch_index * n, wt->data.begin() + (batch_index + 1) * n);
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace har
