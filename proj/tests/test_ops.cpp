#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <stdexcept>

#include "har/gradcheck.hpp"
#include "har/ops.hpp"
#include "har/tensor.hpp"
#include "testutil.hpp"

using namespace har;

// ---------------- conv1d ----------------

TEST_CASE("conv1d identity kernel") {
    auto input = Tensor::from_data({1, 1, 4}, {1, 2, 3, 4});
    auto kernel = Tensor::from_data({1, 1, 1}, {1});
    auto bias = Tensor::from_data({1}, {0});
    auto out = conv1d(input, kernel, bias, 1, 0);
    CHECK(out->shape == std::vector<std::size_t>{1, 1, 4});
    CHECK(out->data == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("conv1d box kernel sums neighbors") {
    auto input = Tensor::from_data({1, 1, 4}, {1, 2, 3, 4});
    auto kernel = Tensor::from_data({1, 1, 2}, {1, 1});
    auto bias = Tensor::from_data({1}, {0});
    auto out = conv1d(input, kernel, bias, 1, 0);
    CHECK(out->data == std::vector<double>{3, 5, 7});
}

TEST_CASE("conv1d zero kernel and bias gives zeros") {
    Rng rng(3);
    auto input = testutil::random_tensor(rng, {2, 3, 10});
    auto kernel = Tensor::create({4, 3, 3});
    auto bias = Tensor::create({4});
    auto out = conv1d(input, kernel, bias, 1, 1);
    for (double v : out->data) CHECK(v == 0.0);
}

TEST_CASE("conv1d output length formula") {
    Rng rng(5);
    auto input = testutil::random_tensor(rng, {1, 1, 11});
    auto kernel = testutil::random_tensor(rng, {1, 1, 3});
    auto bias = testutil::random_tensor(rng, {1});
    CHECK(conv1d(input, kernel, bias, 2, 0)->shape[2] == 5);   // (11-3)/2+1
    CHECK(conv1d(input, kernel, bias, 1, 2)->shape[2] == 13);  // 11+4-3+1
}

TEST_CASE("conv1d shape errors name the offending dimension") {
    Rng rng(7);
    auto input = testutil::random_tensor(rng, {1, 3, 8});
    auto kernel = testutil::random_tensor(rng, {2, 4, 3});
    auto bias = testutil::random_tensor(rng, {2});
    CHECK_THROWS_WITH_AS(conv1d(input, kernel, bias, 1, 0),
                         doctest::Contains("channel"), std::invalid_argument);
    auto kernel_ok = testutil::random_tensor(rng, {2, 3, 3});
    auto bias_bad = testutil::random_tensor(rng, {5});
    CHECK_THROWS_WITH_AS(conv1d(input, kernel_ok, bias_bad, 1, 0),
                         doctest::Contains("bias"), std::invalid_argument);
    auto short_input = testutil::random_tensor(rng, {1, 3, 2});
    CHECK_THROWS_AS(conv1d(short_input, kernel_ok, bias, 1, 0), std::invalid_argument);
}

TEST_CASE("conv1d equals the direct-summation oracle exactly") {
    Rng rng(11);
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t batch = 1 + rng.below(2);
        const std::size_t c_in = 1 + rng.below(3);
        const std::size_t c_out = 1 + rng.below(3);
        const std::size_t k_len = 1 + rng.below(4);
        const std::size_t stride = 1 + rng.below(2);
        const std::size_t padding = rng.below(3);
        std::size_t len = k_len + rng.below(8);
        if (len + 2 * padding < k_len) len = k_len;

        auto input = testutil::random_tensor(rng, {batch, c_in, len});
        auto kernel = testutil::random_tensor(rng, {c_out, c_in, k_len});
        auto bias = testutil::random_tensor(rng, {c_out});
        auto out = conv1d(input, kernel, bias, stride, padding);
        auto expect = testutil::conv1d_oracle(input->data, batch, c_in, len, kernel->data, c_out,
                                              k_len, bias->data, stride, padding);
        REQUIRE(out->data.size() == expect.size());
        for (std::size_t i = 0; i < expect.size(); ++i) CHECK(out->data[i] == expect[i]);
    }
}

TEST_CASE("conv1d unrolled K=5 path equals the oracle exactly") {
    Rng rng(13);
    auto input = testutil::random_tensor(rng, {2, 3, 16});
    auto kernel = testutil::random_tensor(rng, {4, 3, 5});
    auto bias = testutil::random_tensor(rng, {4});
    auto out = conv1d(input, kernel, bias, 1, 2);
    auto expect =
        testutil::conv1d_oracle(input->data, 2, 3, 16, kernel->data, 4, 5, bias->data, 1, 2);
    for (std::size_t i = 0; i < expect.size(); ++i) CHECK(out->data[i] == expect[i]);
}

// ---------------- maxpool ----------------

TEST_CASE("maxpool picks window maxima") {
    auto input = Tensor::from_data({1, 1, 4}, {1, 3, 2, 4});
    CHECK(maxpool1d(input)->data == std::vector<double>{3, 4});
    auto constant = Tensor::from_data({1, 1, 4}, {5, 5, 5, 5});
    CHECK(maxpool1d(constant)->data == std::vector<double>{5, 5});
    auto negative = Tensor::from_data({1, 1, 4}, {-1, -2, -3, -4});
    CHECK(maxpool1d(negative)->data == std::vector<double>{-1, -3});
}

TEST_CASE("maxpool rejects input shorter than the window") {
    auto input = Tensor::from_data({1, 1, 1}, {1});
    CHECK_THROWS_AS(maxpool1d(input, 2, 2), std::invalid_argument);
}

TEST_CASE("maxpool odd length drops the tail") {
    auto input = Tensor::from_data({1, 1, 5}, {1, 2, 3, 4, 9});
    CHECK(maxpool1d(input)->data == std::vector<double>{2, 4});
}

TEST_CASE("maxpool backward routes gradient to first argmax and conserves mass") {
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        auto input = testutil::random_tensor(rng, {2, 3, 8}, -1.0, 1.0, true);
        // force one tie inside a window to pin the first-index rule
        input->data[0] = 0.5;
        input->data[1] = 0.5;
        auto out = maxpool1d(input);
        std::vector<double> coeffs(out->size());
        for (double& c : coeffs) c = rng.uniform(0.1, 1.0);
        backward(weighted_sum(out, coeffs));

        double in_mass = 0.0, out_mass = 0.0;
        for (double g : input->grad) in_mass += g;
        for (double c : coeffs) out_mass += c;
        CHECK(in_mass == doctest::Approx(out_mass).epsilon(1e-12));

        std::size_t nonzero = 0;
        for (double g : input->grad) {
            if (g != 0.0) ++nonzero;
        }
        CHECK(nonzero <= out->size());
        CHECK(input->grad[0] != 0.0);  // tie winner
        CHECK(input->grad[1] == 0.0);
    }
}

// ---------------- relu ----------------

TEST_CASE("relu definition cases") {
    auto x = Tensor::from_data({3}, {-1, 0, 2});
    CHECK(relu(x)->data == std::vector<double>{0, 0, 2});
    auto neg = Tensor::from_data({3}, {-5, -0.1, -100});
    CHECK(relu(neg)->data == std::vector<double>{0, 0, 0});
    auto pos = Tensor::from_data({3}, {5, 0.1, 100});
    CHECK(relu(pos)->data == std::vector<double>{5, 0.1, 100});
}

TEST_CASE("relu subgradient at zero is zero") {
    auto x = Tensor::from_data({3}, {-1.0, 0.0, 2.0}, true);
    backward(sum_all(relu(x)));
    CHECK(x->grad == std::vector<double>{0.0, 0.0, 1.0});
}

// ---------------- dense ----------------

TEST_CASE("dense identity weights pass input through") {
    auto input = Tensor::from_data({1, 2}, {7, -3});
    auto w = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    auto b = Tensor::from_data({2}, {0, 0});
    CHECK(dense(input, w, b)->data == std::vector<double>{7, -3});
}

TEST_CASE("dense zero weights give the bias") {
    auto input = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    auto w = Tensor::create({2, 3});
    auto b = Tensor::from_data({2}, {0.5, -1.5});
    auto out = dense(input, w, b);
    CHECK(out->data == std::vector<double>{0.5, -1.5, 0.5, -1.5});
}

TEST_CASE("dense hand matrix product") {
    auto input = Tensor::from_data({1, 2}, {1, 2});
    auto w = Tensor::from_data({2, 2}, {1, 1, 0, 1});
    auto b = Tensor::from_data({2}, {0, 0});
    CHECK(dense(input, w, b)->data == std::vector<double>{3, 2});
}

TEST_CASE("dense dimension mismatch throws") {
    auto input = Tensor::from_data({1, 3}, {1, 2, 3});
    auto w = Tensor::from_data({2, 2}, {1, 1, 0, 1});
    auto b = Tensor::from_data({2}, {0, 0});
    CHECK_THROWS_AS(dense(input, w, b), std::invalid_argument);
}

// ---------------- softmax cross-entropy ----------------

TEST_CASE("uniform logits lose ln K") {
    auto logits = Tensor::create({2, 6});
    auto loss = softmax_cross_entropy(logits, {0, 3});
    CHECK(loss->data[0] == doctest::Approx(std::log(6.0)).epsilon(1e-12));
}

TEST_CASE("saturated correct logit loses nothing") {
    auto logits = Tensor::from_data({1, 3}, {1000.0, 0.0, 0.0});
    auto loss = softmax_cross_entropy(logits, {0});
    CHECK(loss->data[0] == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("closed-form two-class case") {
    auto logits = Tensor::from_data({1, 2}, {0.0, std::log(3.0)});
    auto loss = softmax_cross_entropy(logits, {1});
    CHECK(loss->data[0] == doctest::Approx(-std::log(0.75)).epsilon(1e-12));
}

TEST_CASE("label out of range throws") {
    auto logits = Tensor::create({1, 3});
    CHECK_THROWS_AS(softmax_cross_entropy(logits, {3}), std::invalid_argument);
    CHECK_THROWS_AS(softmax_cross_entropy(logits, {-1}), std::invalid_argument);
}

TEST_CASE("large logits stay finite") {
    auto logits = Tensor::from_data({1, 3}, {1e4, -1e4, 5e3}, true);
    auto loss = softmax_cross_entropy(logits, {2});
    CHECK(std::isfinite(loss->data[0]));
    backward(loss);
    for (double g : logits->grad) CHECK(std::isfinite(g));
}

// ---------------- flatten ----------------

TEST_CASE("flatten reshapes row-major and routes gradient back") {
    auto x = Tensor::from_data({1, 2, 3}, {1, 2, 3, 4, 5, 6}, true);
    auto f = flatten(x);
    CHECK(f->shape == std::vector<std::size_t>{1, 6});
    CHECK(f->data == x->data);
    backward(sum_all(f));
    CHECK(x->grad == std::vector<double>(6, 1.0));
}

// ---------------- determinism ----------------

TEST_CASE("forward passes are bit-identical for identical inputs") {
    Rng rng(23);
    auto input = testutil::random_tensor(rng, {2, 3, 16});
    auto kernel = testutil::random_tensor(rng, {4, 3, 5});
    auto bias = testutil::random_tensor(rng, {4});
    auto a = conv1d(input, kernel, bias, 1, 2);
    auto b = conv1d(input, kernel, bias, 1, 2);
    CHECK(a->data == b->data);
}

// ---------------- finite differences ----------------

TEST_CASE("gradcheck passes for conv1d and dense at 1e-4") {
    // smoke subset; the full 20-seed suite is the acceptance gate
    auto results = run_gradcheck_suite(3);
    for (const auto& r : results) {
        INFO(r.op, ": ", r.max_rel_err, " ", r.detail);
        CHECK(r.ok);
    }
}
