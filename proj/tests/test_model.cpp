#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <stdexcept>

#include "har/model.hpp"
#include "har/ops.hpp"
#include "testutil.hpp"

using namespace har;

TEST_CASE("paper trunk realizes the published layer sequence") {
    ModelSpec spec = ModelSpec::paper_default(128, 6, 6);
    std::vector<std::pair<LayerKind, std::size_t>> convs;
    std::size_t pools = 0, dense_units = 0;
    for (const LayerSpec& l : spec.layers) {
        if (l.kind == LayerKind::Conv1d) convs.push_back({l.kind, l.channels_out});
        if (l.kind == LayerKind::MaxPool1d) ++pools;
        if (l.kind == LayerKind::Dense) dense_units = l.channels_out;
    }
    REQUIRE(convs.size() == 5);
    CHECK(convs[0].second == 32);
    CHECK(convs[1].second == 64);
    CHECK(convs[2].second == 128);
    CHECK(convs[3].second == 128);
    CHECK(convs[4].second == 128);
    CHECK(pools == 3);
    CHECK(dense_units == 128);
    // kernel 5, stride 1, same padding on every conv
    for (const LayerSpec& l : spec.layers) {
        if (l.kind == LayerKind::Conv1d) {
            CHECK(l.kernel_len == 5);
            CHECK(l.stride == 1);
            CHECK(l.padding == 2);
        }
    }
}

TEST_CASE("tap lengths follow the pooling arithmetic") {
    auto infos = tap_infos(ModelSpec::paper_default(128, 6, 6));
    REQUIRE(infos.size() == 3);
    CHECK(infos[0].length == 128);
    CHECK(infos[1].length == 64);
    CHECK(infos[2].length == 32);
    CHECK(infos[0].stride_to_raw == 1);
    CHECK(infos[1].stride_to_raw == 2);
    CHECK(infos[2].stride_to_raw == 4);
    for (const TapInfo& t : infos) CHECK(t.channels == 128);

    auto wide = tap_infos(ModelSpec::paper_default(2048, 3, 4));
    CHECK(wide[0].length == 2048);
    CHECK(wide[1].length == 1024);
    CHECK(wide[2].length == 512);
}

TEST_CASE("input length must divide by eight") {
    CHECK_THROWS_AS(ModelSpec::paper_default(130, 6, 6), std::invalid_argument);
}

TEST_CASE("logits shape follows num_classes") {
    Model m = build_fundamental_cnn(64, 3, 6, 7);
    Rng rng(3);
    auto input = testutil::random_tensor(rng, {2, 3, 64});
    auto fwd = m.forward(input);
    CHECK(fwd.logits->shape == std::vector<std::size_t>{2, 6});
    CHECK(fwd.global_feature->shape == std::vector<std::size_t>{2, 128});
    CHECK(fwd.taps.size() == 3);
    CHECK(fwd.scores.empty());
}

TEST_CASE("attention variants widen the classifier input") {
    Model base = build_fundamental_cnn(64, 3, 6, 7);
    for (std::size_t s = 1; s <= 3; ++s) {
        Model att = assemble_attention_model(base, s, CompatMode::Pc, NormMode::Tanh, 11);
        bool found = false;
        for (const NamedTensor& p : att.params()) {
            if (p.name == "classifier.weight") {
                CHECK(p.value->shape == std::vector<std::size_t>{6, 128 * s});
                found = true;
            }
        }
        CHECK(found);
    }
    CHECK_THROWS_AS(assemble_attention_model(base, 4, CompatMode::Pc, NormMode::Tanh, 11),
                    std::invalid_argument);
}

TEST_CASE("attention forward exposes scores, weights and pooled descriptors") {
    Model base = build_fundamental_cnn(64, 3, 4, 7);
    Model att = assemble_attention_model(base, 2, CompatMode::Pc, NormMode::Tanh, 11);
    Rng rng(5);
    auto input = testutil::random_tensor(rng, {3, 3, 64});
    auto fwd = att.forward(input);
    REQUIRE(fwd.scores.size() == 2);
    // the attended levels are the last two taps: lengths 32 and 16
    CHECK(fwd.scores[0]->shape == std::vector<std::size_t>{3, 32});
    CHECK(fwd.scores[1]->shape == std::vector<std::size_t>{3, 16});
    CHECK(fwd.pooled[0]->shape == std::vector<std::size_t>{3, 128});
    CHECK(fwd.logits->shape == std::vector<std::size_t>{3, 4});
}

TEST_CASE("trunk parameters are shared with the base model") {
    Model base = build_fundamental_cnn(64, 3, 4, 7);
    Model att = assemble_attention_model(base, 1, CompatMode::Dot, NormMode::Softmax, 11);
    const auto& bp = base.params();
    const auto& ap = att.params();
    CHECK(bp[0].value.get() == ap[0].value.get());  // conv1.weight
    // dot mode has no u parameters
    for (const NamedTensor& p : ap) CHECK(p.name.rfind("att.u", 0) != 0);
}

TEST_CASE("pc mode owns one u vector per level, zero initialized") {
    Model base = build_fundamental_cnn(64, 3, 4, 7);
    Model att = assemble_attention_model(base, 3, CompatMode::Pc, NormMode::Tanh, 11);
    std::size_t u_count = 0;
    for (const NamedTensor& p : att.params()) {
        if (p.name.rfind("att.u", 0) == 0) {
            ++u_count;
            CHECK(p.value->shape == std::vector<std::size_t>{128});
            for (double v : p.value->data) CHECK(v == 0.0);
        }
    }
    CHECK(u_count == 3);
}

TEST_CASE("same seed builds identical models; forward is reproducible") {
    Model a = build_fundamental_cnn(64, 3, 6, 21);
    Model b = build_fundamental_cnn(64, 3, 6, 21);
    REQUIRE(a.params().size() == b.params().size());
    for (std::size_t i = 0; i < a.params().size(); ++i) {
        CHECK(a.params()[i].value->data == b.params()[i].value->data);
    }
    Rng rng(9);
    auto input = testutil::random_tensor(rng, {2, 3, 64});
    auto fa = a.forward(input);
    auto fb = b.forward(input);
    CHECK(fa.logits->data == fb.logits->data);
}

TEST_CASE("model spec json round trip") {
    ModelSpec spec = ModelSpec::paper_default(128, 6, 6, 2, CompatMode::Dot, NormMode::Softmax);
    ModelSpec back = model_spec_from_json(to_json(spec));
    CHECK(back == spec);
}

TEST_CASE("forward rejects mismatched input shapes") {
    Model m = build_fundamental_cnn(64, 3, 6, 7);
    Rng rng(3);
    auto wrong_channels = testutil::random_tensor(rng, {2, 4, 64});
    CHECK_THROWS_AS(m.forward(wrong_channels), std::invalid_argument);
    auto wrong_len = testutil::random_tensor(rng, {2, 3, 32});
    CHECK_THROWS_AS(m.forward(wrong_len), std::invalid_argument);
}

TEST_CASE("profiles extract per-level score and weight rows") {
    Model base = build_fundamental_cnn(64, 3, 4, 7);
    Model att = assemble_attention_model(base, 2, CompatMode::Pc, NormMode::Tanh, 11);
    Rng rng(5);
    auto input = testutil::random_tensor(rng, {2, 3, 64});
    auto fwd = att.forward(input);
    auto profiles = extract_profiles(att.spec(), fwd, 1);
    REQUIRE(profiles.size() == 2);
    CHECK(profiles[0].level == 1);
    CHECK(profiles[0].scores.size() == 32);
    CHECK(profiles[1].scores.size() == 16);
    CHECK(profiles[0].weights.size() == profiles[0].scores.size());
    CHECK_THROWS_AS(extract_profiles(att.spec(), fwd, 5), std::invalid_argument);
}
