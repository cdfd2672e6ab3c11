#include "har/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "har/ops.hpp"

namespace har {

void validate(const TrainConfig& cfg) {
    if (cfg.epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
    if (cfg.batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
    if (!(cfg.learning_rate > 0)) {
        throw std::invalid_argument("train config: learning_rate must be > 0");
    }
    if (cfg.beta1 < 0 || cfg.beta1 >= 1 || cfg.beta2 < 0 || cfg.beta2 >= 1 || cfg.epsilon <= 0) {
        throw std::invalid_argument("train config: invalid Adam parameters");
    }
}

AdamState AdamState::init(const std::vector<TensorPtr>& params) {
    AdamState st;
    st.m.reserve(params.size());
    st.v.reserve(params.size());
    for (const TensorPtr& p : params) {
        st.m.emplace_back(p->size(), 0.0);
        st.v.emplace_back(p->size(), 0.0);
    }
    return st;
}

void adam_step(const std::vector<TensorPtr>& params, AdamState& state, const TrainConfig& cfg) {
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw std::invalid_argument("adam_step: state holds " + std::to_string(state.m.size()) +
                                    " tensors, got " + std::to_string(params.size()) + " params");
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = *params[pi];
        if (p.grad.size() != p.data.size()) {
            throw std::invalid_argument("adam_step: parameter " + std::to_string(pi) +
                                        " has no gradient");
        }
        std::vector<double>& m = state.m[pi];
        std::vector<double>& v = state.v[pi];
        if (m.size() != p.data.size()) {
            throw std::invalid_argument("adam_step: state shape mismatch at parameter " +
                                        std::to_string(pi));
        }
        for (std::size_t i = 0; i < p.data.size(); ++i) {
            const double g = p.grad[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            p.data[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
        }
    }
}

TensorPtr batch_tensor(const SequenceDataset& ds, const std::vector<std::size_t>& indices,
                       std::size_t first, std::size_t count) {
    const std::size_t w = ds.num_channels * ds.seq_len;
    auto t = Tensor::create({count, ds.num_channels, ds.seq_len});
    for (std::size_t i = 0; i < count; ++i) {
        const double* src = ds.window(indices[first + i]);
        std::copy(src, src + w, t->data.begin() + i * w);
    }
    return t;
}

namespace {

std::vector<int> batch_labels(const SequenceDataset& ds, const std::vector<std::size_t>& indices,
                              std::size_t first, std::size_t count) {
    std::vector<int> out(count);
    for (std::size_t i = 0; i < count; ++i) out[i] = ds.labels[indices[first + i]];
    return out;
}

std::size_t argmax_row(const double* row, std::size_t k) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
        if (row[j] > row[best]) best = j;
    }
    return best;
}

void check_dataset_model(const Model& model, const SequenceDataset& ds, const char* who) {
    if (ds.num_channels != model.spec().input_channels || ds.seq_len != model.spec().input_len) {
        throw std::invalid_argument(std::string(who) + ": dataset [C=" +
                                    std::to_string(ds.num_channels) + ",L=" +
                                    std::to_string(ds.seq_len) + "] does not match model [C=" +
                                    std::to_string(model.spec().input_channels) + ",L=" +
                                    std::to_string(model.spec().input_len) + "]");
    }
    const int k = static_cast<int>(model.spec().num_classes);
    for (int label : ds.labels) {
        if (label < 0 || label >= k) {
            throw std::invalid_argument(std::string(who) + ": dataset label " +
                                        std::to_string(label) + " outside model classes");
        }
    }
}

}  // namespace

TrainResult train(Model& model, const SequenceDataset& train_set, const SequenceDataset* val_set,
                  const TrainConfig& cfg, std::ostream* log) {
    validate(cfg);
    check_dataset_model(model, train_set, "train");
    if (train_set.size() == 0) throw std::invalid_argument("train: empty training set");
    if (val_set) check_dataset_model(model, *val_set, "train(val)");

    const std::vector<TensorPtr> params = model.param_tensors();
    AdamState adam = AdamState::init(params);
    model.zero_grad();

    TrainResult result;
    result.history.has_val = val_set != nullptr;

    const std::size_t n = train_set.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    double best_val = -1.0;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        if (cfg.shuffle) {
            Rng rng(Rng::mix(cfg.seed, epoch));
            for (std::size_t i = n; i > 1; --i) {
                const std::size_t j = rng.below(i);
                std::swap(order[i - 1], order[j]);
            }
        }

        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t count = std::min(cfg.batch_size, n - start);
            TensorPtr input = batch_tensor(train_set, order, start, count);
            const std::vector<int> labels = batch_labels(train_set, order, start, count);

            ModelForward fwd = model.forward(input);
            TensorPtr loss = softmax_cross_entropy(fwd.logits, labels);
            if (!std::isfinite(loss->data[0])) {
                throw std::runtime_error("train: non-finite loss at epoch " +
                                         std::to_string(epoch) + ", batch " +
                                         std::to_string(start / cfg.batch_size));
            }
            loss_sum += loss->data[0] * static_cast<double>(count);

            const std::size_t k = model.spec().num_classes;
            for (std::size_t i = 0; i < count; ++i) {
                if (argmax_row(fwd.logits->data.data() + i * k, k) ==
                    static_cast<std::size_t>(labels[i])) {
                    ++correct;
                }
            }

            backward(loss);
            adam_step(params, adam, cfg);
            model.zero_grad();
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = loss_sum / static_cast<double>(n);
        stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
        if (val_set) {
            stats.val_accuracy = evaluate(model, *val_set, cfg.batch_size).accuracy;
            if (stats.val_accuracy > best_val) {
                best_val = stats.val_accuracy;
                result.best_checkpoint = make_checkpoint(model, adam, epoch, cfg.seed);
                result.best_epoch = epoch;
            }
        }
        stats.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.history.epochs.push_back(stats);
        if (log) {
            (*log) << "epoch " << epoch << "/" << cfg.epochs << "  loss " << stats.train_loss
                   << "  train_acc " << stats.train_accuracy;
            if (val_set) (*log) << "  val_acc " << stats.val_accuracy;
            (*log) << "  (" << stats.seconds << " s)" << std::endl;
        }
    }

    result.final_checkpoint = make_checkpoint(model, adam, cfg.epochs, cfg.seed);
    if (!val_set) {
        result.best_checkpoint = result.final_checkpoint;
        result.best_epoch = cfg.epochs;
    }
    return result;
}

EvalResult evaluate(const Model& model, const SequenceDataset& ds, std::size_t batch_size) {
    if (ds.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
    if (batch_size < 1) throw std::invalid_argument("evaluate: batch_size must be >= 1");
    check_dataset_model(model, ds, "evaluate");

    const std::size_t n = ds.size();
    const std::size_t k = model.spec().num_classes;
    EvalResult res;
    res.count = n;
    res.confusion.assign(k, std::vector<std::size_t>(k, 0));

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    double forward_seconds = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t count = std::min(batch_size, n - start);
        TensorPtr input = batch_tensor(ds, order, start, count);
        const auto t0 = std::chrono::steady_clock::now();
        ModelForward fwd = model.forward(input);
        forward_seconds +=
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t pred = argmax_row(fwd.logits->data.data() + i * k, k);
            const std::size_t truth = static_cast<std::size_t>(ds.labels[start + i]);
            res.confusion[truth][pred] += 1;
            if (pred == truth) ++correct;
        }
    }

    res.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    res.per_class_accuracy.assign(k, 0.0);
    for (std::size_t c = 0; c < k; ++c) {
        std::size_t row_total = 0;
        for (std::size_t j = 0; j < k; ++j) row_total += res.confusion[c][j];
        if (row_total > 0) {
            res.per_class_accuracy[c] =
                static_cast<double>(res.confusion[c][c]) / static_cast<double>(row_total);
        }
    }
    res.throughput_seqs_per_s =
        forward_seconds > 0 ? static_cast<double>(n) / forward_seconds : 0.0;
    return res;
}

void write_history_csv(const std::string& path, const TrainHistory& history) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_history_csv: cannot open " + path);
    out << "epoch,loss,train_acc,val_acc,seconds\n";
    out.precision(17);
    for (const EpochStats& e : history.epochs) {
        out << e.epoch << ',' << e.train_loss << ',' << e.train_accuracy << ',';
        if (history.has_val) out << e.val_accuracy;
        out << ',' << e.seconds << '\n';
    }
    if (!out) throw std::runtime_error("write_history_csv: write failed for " + path);
}

Checkpoint make_checkpoint(const Model& model, const AdamState& adam, std::size_t epoch,
                           std::uint64_t seed) {
    Checkpoint ckpt;
    ckpt.spec = model.spec();
    ckpt.adam = adam;
    ckpt.epoch = epoch;
    ckpt.seed = seed;
    for (const NamedTensor& p : model.params()) {
        if (!p.value->all_finite()) {
            throw std::runtime_error("checkpoint: parameter " + p.name + " has non-finite values");
        }
        ckpt.params.push_back({p.name, p.value->shape, p.value->data});
    }
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    nlohmann::json params = nlohmann::json::array();
    for (const ParamBlob& p : ckpt.params) {
        params.push_back({{"name", p.name}, {"shape", p.shape}, {"data", p.data}});
    }
    nlohmann::json j = {{"version", ckpt.version},
                        {"model_spec", to_json(ckpt.spec)},
                        {"params", params},
                        {"adam_state", {{"step", ckpt.adam.step}, {"m", ckpt.adam.m}, {"v", ckpt.adam.v}}},
                        {"epoch", ckpt.epoch},
                        {"seed", ckpt.seed}};
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    out << j.dump() << '\n';
    if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("load_checkpoint: corrupt file " + path + ": " + e.what());
    }
    Checkpoint ckpt;
    try {
        ckpt.version = j.at("version").get<int>();
        if (ckpt.version != Checkpoint::kVersion) {
            throw std::runtime_error("load_checkpoint: unsupported version " +
                                     std::to_string(ckpt.version) + " (expected " +
                                     std::to_string(Checkpoint::kVersion) + ")");
        }
        ckpt.spec = model_spec_from_json(j.at("model_spec"));
        for (const auto& pj : j.at("params")) {
            ParamBlob p;
            p.name = pj.at("name").get<std::string>();
            p.shape = pj.at("shape").get<std::vector<std::size_t>>();
            p.data = pj.at("data").get<std::vector<double>>();
            if (p.data.size() != shape_product(p.shape)) {
                throw std::runtime_error("load_checkpoint: parameter " + p.name +
                                         " data does not fill its shape");
            }
            ckpt.params.push_back(std::move(p));
        }
        ckpt.adam.step = j.at("adam_state").at("step").get<std::size_t>();
        ckpt.adam.m = j.at("adam_state").at("m").get<std::vector<std::vector<double>>>();
        ckpt.adam.v = j.at("adam_state").at("v").get<std::vector<std::vector<double>>>();
        ckpt.epoch = j.at("epoch").get<std::size_t>();
        ckpt.seed = j.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("load_checkpoint: corrupt file " + path + ": " + e.what());
    }
    return ckpt;
}

void apply_checkpoint(Model& model, const Checkpoint& ckpt) {
    if (!(model.spec() == ckpt.spec)) {
        throw std::runtime_error("apply_checkpoint: checkpoint spec does not match model spec");
    }
    const auto& mp = model.params();
    if (mp.size() != ckpt.params.size()) {
        throw std::runtime_error("apply_checkpoint: checkpoint has " +
                                 std::to_string(ckpt.params.size()) + " params, model has " +
                                 std::to_string(mp.size()));
    }
    for (std::size_t i = 0; i < mp.size(); ++i) {
        const ParamBlob& p = ckpt.params[i];
        if (p.name != mp[i].name || p.shape != mp[i].value->shape) {
            throw std::runtime_error("apply_checkpoint: parameter mismatch at " + p.name);
        }
    }
    for (const ParamBlob& p : ckpt.params) model.set_param(p.name, p.data);
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
    Model model = build_model(ckpt.spec, ckpt.seed);
    apply_checkpoint(model, ckpt);
    return model;
}

}  // namespace har
