#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "har/datasets.hpp"
#include "har/model.hpp"
#include "har/ops.hpp"
#include "har/training.hpp"
#include "testutil.hpp"

using namespace har;

namespace {

// four classes of easily separable toy signals in the model's input shape
SequenceDataset toy_dataset(std::size_t n, std::size_t seq_len, std::uint64_t seed) {
    SequenceDataset ds;
    ds.num_channels = 2;
    ds.seq_len = seq_len;
    ds.class_names = {"a", "b", "c", "d"};
    ds.data.resize(n * 2 * seq_len);
    ds.labels.resize(n);
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(i % 4);
        ds.labels[i] = label;
        const double freq = 0.5 + label;
        for (std::size_t c = 0; c < 2; ++c) {
            double* row = ds.data.data() + (i * 2 + c) * seq_len;
            for (std::size_t t = 0; t < seq_len; ++t) {
                row[t] = std::sin(0.2 * freq * static_cast<double>(t) + 0.3 * c) +
                         0.05 * rng.normal();
            }
        }
    }
    return ds;
}

Model small_model(std::size_t seq_len, std::uint64_t seed) {
    return build_model(ModelSpec::reduced(seq_len, 2, 4, 16), seed);
}

}  // namespace

// ---------------- config and Adam ----------------

TEST_CASE("train config validation") {
    TrainConfig cfg;
    cfg.epochs = 0;
    CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.learning_rate = 0.0;
    CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.batch_size = 0;
    CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
    CHECK(TrainConfig{}.epochs == 100);
    CHECK(TrainConfig{}.batch_size == 50);
    CHECK(TrainConfig{}.learning_rate == 0.001);
}

TEST_CASE("adam leaves parameters alone under zero gradients") {
    auto p = Tensor::from_data({3}, {1.0, -2.0, 0.5}, true);
    std::vector<TensorPtr> params = {p};
    AdamState st = AdamState::init(params);
    TrainConfig cfg;
    adam_step(params, st, cfg);
    CHECK(p->data == std::vector<double>{1.0, -2.0, 0.5});
}

TEST_CASE("adam first step matches the closed form") {
    auto p = Tensor::from_data({1}, {1.0}, true);
    p->grad = {1.0};
    std::vector<TensorPtr> params = {p};
    AdamState st = AdamState::init(params);
    TrainConfig cfg;  // lr 0.001, beta1 0.9, beta2 0.999, eps 1e-8
    adam_step(params, st, cfg);
    // bias-corrected m_hat = v_hat = 1 exactly at t = 1
    CHECK(std::abs(p->data[0] - 0.999) <= 1e-9);
    CHECK(st.step == 1);
}

TEST_CASE("adam rejects mismatched state") {
    auto p = Tensor::from_data({2}, {1.0, 2.0}, true);
    p->grad = {0.1, 0.1};
    auto q = Tensor::from_data({3}, {1.0, 2.0, 3.0}, true);
    std::vector<TensorPtr> params = {p};
    AdamState st = AdamState::init({q});
    TrainConfig cfg;
    CHECK_THROWS_AS(adam_step(params, st, cfg), std::invalid_argument);
}

TEST_CASE("adam trajectories are reproducible") {
    for (int run = 0; run < 2; ++run) {
        static std::vector<double> first;
        auto p = Tensor::from_data({2}, {0.5, -0.5}, true);
        std::vector<TensorPtr> params = {p};
        AdamState st = AdamState::init(params);
        TrainConfig cfg;
        Rng rng(5);
        for (int i = 0; i < 20; ++i) {
            p->grad = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
            adam_step(params, st, cfg);
        }
        if (run == 0) {
            first = p->data;
        } else {
            CHECK(p->data == first);
        }
    }
}

// ---------------- training loop ----------------

TEST_CASE("training memorizes a small set") {
    auto ds = toy_dataset(32, 32, 3);
    Model m = small_model(32, 17);
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.batch_size = 32;
    cfg.seed = 17;
    TrainResult res = train(m, ds, nullptr, cfg);
    REQUIRE(res.history.epochs.size() == 200);
    const EpochStats& last = res.history.epochs.back();
    CHECK(last.train_accuracy == 1.0);
    CHECK(last.train_loss < 0.01);

    // loss averaged over windows of 10 epochs is monotone nonincreasing
    std::vector<double> windows;
    for (std::size_t w = 0; w + 10 <= 200; w += 10) {
        double s = 0.0;
        for (std::size_t e = w; e < w + 10; ++e) s += res.history.epochs[e].train_loss;
        windows.push_back(s / 10.0);
    }
    for (std::size_t i = 1; i < windows.size(); ++i) CHECK(windows[i] <= windows[i - 1]);
}

TEST_CASE("training is bit-deterministic under a fixed seed") {
    auto ds = toy_dataset(24, 32, 5);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 8;
    cfg.seed = 23;
    Model m1 = small_model(32, 23);
    Model m2 = small_model(32, 23);
    TrainResult r1 = train(m1, ds, nullptr, cfg);
    TrainResult r2 = train(m2, ds, nullptr, cfg);
    REQUIRE(r1.final_checkpoint.params.size() == r2.final_checkpoint.params.size());
    for (std::size_t i = 0; i < r1.final_checkpoint.params.size(); ++i) {
        CHECK(r1.final_checkpoint.params[i].data == r2.final_checkpoint.params[i].data);
    }
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        CHECK(r1.history.epochs[e].train_loss == r2.history.epochs[e].train_loss);
    }
}

TEST_CASE("validation split drives best checkpointing") {
    auto train_set = toy_dataset(24, 32, 5);
    auto val_set = toy_dataset(12, 32, 6);
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 8;
    cfg.seed = 23;
    Model m = small_model(32, 23);
    TrainResult res = train(m, train_set, &val_set, cfg);
    CHECK(res.history.has_val);
    CHECK(res.best_epoch >= 1);
    CHECK(res.best_epoch <= 4);
    double best = -1.0;
    for (const auto& e : res.history.epochs) best = std::max(best, e.val_accuracy);
    CHECK(res.history.epochs[res.best_epoch - 1].val_accuracy == best);
}

TEST_CASE("training rejects mismatched datasets") {
    auto ds = toy_dataset(8, 64, 5);
    Model m = small_model(32, 23);
    TrainConfig cfg;
    CHECK_THROWS_AS(train(m, ds, nullptr, cfg), std::invalid_argument);
}

TEST_CASE("a diverging run aborts with a non-finite diagnostic") {
    auto ds = toy_dataset(16, 32, 5);
    Model m = small_model(32, 23);
    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.batch_size = 8;
    cfg.learning_rate = 1e60;  // guaranteed blow-up
    CHECK_THROWS_WITH_AS(train(m, ds, nullptr, cfg), doctest::Contains("non-finite"),
                         std::runtime_error);
}

// ---------------- evaluation ----------------

TEST_CASE("evaluation counts a trained model's accuracy") {
    auto ds = toy_dataset(32, 32, 3);
    Model m = small_model(32, 17);
    TrainConfig cfg;
    cfg.epochs = 120;
    cfg.batch_size = 32;
    cfg.seed = 17;
    train(m, ds, nullptr, cfg);
    EvalResult ev = evaluate(m, ds);
    CHECK(ev.accuracy == 1.0);
    CHECK(ev.count == 32);
    CHECK(ev.throughput_seqs_per_s > 0.0);
    // row sums equal per-class counts
    std::vector<std::size_t> class_counts(4, 0);
    for (int l : ds.labels) class_counts[static_cast<std::size_t>(l)]++;
    for (std::size_t c = 0; c < 4; ++c) {
        std::size_t row = 0;
        for (std::size_t j = 0; j < 4; ++j) row += ev.confusion[c][j];
        CHECK(row == class_counts[c]);
    }
}

TEST_CASE("a constant-output model scores the majority class fraction") {
    auto ds = toy_dataset(20, 32, 3);
    // skew labels so class 0 is the majority and ties resolve to it
    for (std::size_t i = 0; i < 10; ++i) ds.labels[i] = 0;
    Model m = small_model(32, 17);
    for (const NamedTensor& p : m.params()) {
        std::vector<double> zeros(p.value->size(), 0.0);
        m.set_param(p.name, zeros);
    }
    EvalResult ev = evaluate(m, ds);
    std::size_t majority = 0;
    for (int l : ds.labels) {
        if (l == 0) ++majority;
    }
    CHECK(ev.accuracy == doctest::Approx(static_cast<double>(majority) / ds.size()));
}

TEST_CASE("evaluating an empty dataset throws") {
    SequenceDataset empty;
    empty.num_channels = 2;
    empty.seq_len = 32;
    Model m = small_model(32, 17);
    CHECK_THROWS_AS(evaluate(m, empty), std::invalid_argument);
}

// ---------------- checkpoints ----------------

TEST_CASE("checkpoint save, load and evaluate reproduce logits exactly") {
    testutil::TempDir tmp("ckpt");
    auto ds = toy_dataset(8, 32, 3);
    Model m = small_model(32, 17);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    train(m, ds, nullptr, cfg);

    AdamState st = AdamState::init(m.param_tensors());
    Checkpoint ckpt = make_checkpoint(m, st, 2, cfg.seed);
    const std::string path = tmp.file("model.json");
    save_checkpoint(ckpt, path);
    Checkpoint loaded = load_checkpoint(path);
    CHECK(loaded.spec == m.spec());
    CHECK(loaded.epoch == 2);

    Model restored = model_from_checkpoint(loaded);
    Rng rng(9);
    auto input = testutil::random_tensor(rng, {3, 2, 32});
    auto f1 = m.forward(input);
    auto f2 = restored.forward(input);
    CHECK(f1.logits->data == f2.logits->data);
}

TEST_CASE("checkpoints reject mismatched model specs") {
    auto ds = toy_dataset(8, 32, 3);
    Model m = small_model(32, 17);
    AdamState st = AdamState::init(m.param_tensors());
    Checkpoint ckpt = make_checkpoint(m, st, 1, 1);
    Model other = build_model(ModelSpec::reduced(32, 2, 4, 16, 1), 3);
    CHECK_THROWS_AS(apply_checkpoint(other, ckpt), std::runtime_error);
}

TEST_CASE("version bumps and corrupt files are rejected") {
    testutil::TempDir tmp("ckptv");
    Model m = small_model(32, 17);
    AdamState st = AdamState::init(m.param_tensors());
    Checkpoint ckpt = make_checkpoint(m, st, 1, 1);
    const std::string path = tmp.file("model.json");
    save_checkpoint(ckpt, path);

    std::ifstream in(path);
    auto j = nlohmann::json::parse(in);
    in.close();
    j["version"] = 2;
    std::ofstream out(path);
    out << j.dump();
    out.close();
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("version"), std::runtime_error);

    std::ofstream bad(path);
    bad << "{ not json";
    bad.close();
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("corrupt"), std::runtime_error);
}

TEST_CASE("history CSV lists one row per epoch") {
    testutil::TempDir tmp("hist");
    auto ds = toy_dataset(8, 32, 3);
    Model m = small_model(32, 17);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    TrainResult res = train(m, ds, nullptr, cfg);
    const std::string path = tmp.file("history.csv");
    write_history_csv(path, res.history);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "epoch,loss,train_acc,val_acc,seconds");
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        if (!line.empty()) ++rows;
    }
    CHECK(rows == 3);
}
