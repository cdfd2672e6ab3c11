#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "har/attention.hpp"
#include "har/ops.hpp"
#include "har/tensor.hpp"
#include "testutil.hpp"

using namespace har;

namespace {

// builds the [1,C,n] layout from per-location rows l_1..l_n
TensorPtr local_from_rows(const std::vector<std::vector<double>>& rows) {
    const std::size_t n = rows.size();
    const std::size_t c = rows[0].size();
    auto t = Tensor::create({1, c, n});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) t->data[ch * n + i] = rows[i][ch];
    }
    return t;
}

TensorPtr global_vec(const std::vector<double>& g) {
    return Tensor::from_data({1, g.size()}, g);
}

}  // namespace

// ---------------- compatibility scores ----------------

TEST_CASE("compat_dot identity and orthogonality") {
    auto g = global_vec({1, 0, 0});
    auto same = local_from_rows({{1, 0, 0}, {1, 0, 0}});
    auto s = compat_dot(same, g);
    CHECK(s->data == std::vector<double>{1, 1});

    auto ortho = local_from_rows({{0, 1, 0}, {0, 0, 5}});
    CHECK(compat_dot(ortho, g)->data == std::vector<double>{0, 0});
}

TEST_CASE("compat_dot hand case") {
    auto local = local_from_rows({{1, 2}, {0, 1}});
    auto g = global_vec({1, 1});
    CHECK(compat_dot(local, g)->data == std::vector<double>{3, 1});
}

TEST_CASE("compat_dot dimension mismatch") {
    auto local = local_from_rows({{1, 2}, {0, 1}});
    auto g = global_vec({1, 1, 1});
    CHECK_THROWS_AS(compat_dot(local, g), std::invalid_argument);
}

TEST_CASE("compat_pc zero u gives zero scores") {
    Rng rng(1);
    auto local = testutil::random_tensor(rng, {1, 4, 6});
    auto g = testutil::random_tensor(rng, {1, 4});
    auto u = Tensor::create({4});
    auto s = compat_pc(local, g, u);
    for (double v : s->data) CHECK(v == 0.0);
}

TEST_CASE("compat_pc zero locals give constant <u,G>") {
    auto local = Tensor::create({1, 2, 3});
    auto g = global_vec({1, 2});
    auto u = Tensor::from_data({2}, {0.5, 0.25});
    auto s = compat_pc(local, g, u);
    for (double v : s->data) CHECK(v == doctest::Approx(1.0));
}

TEST_CASE("compat_pc hand case") {
    auto local = local_from_rows({{0, 0}, {2, 0}});
    auto g = global_vec({1, 1});
    auto u = Tensor::from_data({2}, {1, -1});
    auto s = compat_pc(local, g, u);
    CHECK(s->data[0] == doctest::Approx(0.0));
    CHECK(s->data[1] == doctest::Approx(2.0));
}

TEST_CASE("compat_pc u length mismatch") {
    auto local = local_from_rows({{0, 0}, {2, 0}});
    auto g = global_vec({1, 1});
    auto u = Tensor::from_data({3}, {1, -1, 0});
    CHECK_THROWS_AS(compat_pc(local, g, u), std::invalid_argument);
}

// ---------------- normalizations ----------------

TEST_CASE("softmax of equal scores is uniform") {
    auto s = Tensor::create({1, 4});
    auto a = normalize_softmax(s);
    for (double v : a->data) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("softmax shift invariance") {
    auto a = normalize_softmax(Tensor::from_data({1, 2}, {1, 2}));
    auto b = normalize_softmax(Tensor::from_data({1, 2}, {101, 102}));
    CHECK(a->data[0] == doctest::Approx(b->data[0]).epsilon(1e-12));
    CHECK(a->data[1] == doctest::Approx(b->data[1]).epsilon(1e-12));
}

TEST_CASE("softmax closed form") {
    auto a = normalize_softmax(Tensor::from_data({1, 2}, {0.0, std::log(3.0)}));
    CHECK(a->data[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(a->data[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax rejects non-finite scores") {
    auto s = Tensor::from_data({1, 2}, {1.0, std::numeric_limits<double>::quiet_NaN()});
    CHECK_THROWS_AS(normalize_softmax(s), std::invalid_argument);
}

TEST_CASE("tanh normalization is pointwise") {
    auto a = normalize_tanh(Tensor::from_data({1, 3}, {0.0, 20.0, -20.0}));
    CHECK(a->data[0] == 0.0);
    CHECK(a->data[1] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(a->data[2] == doctest::Approx(-1.0).epsilon(1e-9));
}

TEST_CASE("tanh matches the exp identity oracle") {
    // (e^x - e^-x)/(e^x + e^-x), evaluated without calling std::tanh
    const double x = 0.5;
    const double oracle = (std::exp(x) - std::exp(-x)) / (std::exp(x) + std::exp(-x));
    auto a = normalize_tanh(Tensor::from_data({1, 1}, {x}));
    CHECK(a->data[0] == doctest::Approx(oracle).epsilon(1e-12));
    CHECK(a->data[0] == doctest::Approx(0.46211715726).epsilon(1e-9));
}

// ---------------- pooling ----------------

TEST_CASE("attend_pool one-hot weights select a row") {
    auto local = local_from_rows({{1, 2, 3}, {4, 5, 6}});
    auto w = Tensor::from_data({1, 2}, {0, 1});
    CHECK(attend_pool(local, w)->data == std::vector<double>{4, 5, 6});
}

TEST_CASE("attend_pool uniform weights average rows") {
    auto local = local_from_rows({{1, 2}, {3, 6}});
    auto w = Tensor::from_data({1, 2}, {0.5, 0.5});
    auto g = attend_pool(local, w);
    CHECK(g->data[0] == doctest::Approx(2.0));
    CHECK(g->data[1] == doctest::Approx(4.0));
}

TEST_CASE("attend_pool hand case") {
    auto local = local_from_rows({{4, 0}, {0, 4}});
    auto w = Tensor::from_data({1, 2}, {0.25, 0.75});
    auto g = attend_pool(local, w);
    CHECK(g->data[0] == doctest::Approx(1.0));
    CHECK(g->data[1] == doctest::Approx(3.0));
}

TEST_CASE("attend_pool equals brute-force accumulation exactly") {
    Rng rng(31);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t b_n = 1 + rng.below(3);
        const std::size_t c_n = 1 + rng.below(6);
        const std::size_t n = 1 + rng.below(8);
        auto local = testutil::random_tensor(rng, {b_n, c_n, n});
        auto w = testutil::random_tensor(rng, {b_n, n});
        auto g = attend_pool(local, w);
        for (std::size_t b = 0; b < b_n; ++b) {
            for (std::size_t c = 0; c < c_n; ++c) {
                double s = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    s = std::fma(w->data[b * n + i], local->data[(b * c_n + c) * n + i], s);
                }
                CHECK(g->data[b * c_n + c] == s);
            }
        }
    }
}

TEST_CASE("attend_pool shape mismatch") {
    auto local = local_from_rows({{1, 2}, {3, 4}});
    auto w = Tensor::from_data({1, 3}, {1, 0, 0});
    CHECK_THROWS_AS(attend_pool(local, w), std::invalid_argument);
}

// ---------------- properties ----------------

TEST_CASE("softmax weights: nonnegative, unit sum, shift invariant") {
    Rng rng(37);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 1 + rng.below(16);
        auto s = testutil::random_tensor(rng, {2, n}, -10.0, 10.0);
        auto a = normalize_softmax(s);
        for (std::size_t b = 0; b < 2; ++b) {
            double sum = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double v = a->data[b * n + i];
                CHECK(v >= 0.0);
                sum += v;
            }
            CHECK(std::abs(sum - 1.0) <= 1e-9);
        }
        const double shift = rng.uniform(-50.0, 50.0);
        auto s2 = Tensor::create(s->shape);
        for (std::size_t i = 0; i < s->size(); ++i) s2->data[i] = s->data[i] + shift;
        auto a2 = normalize_softmax(s2);
        for (std::size_t i = 0; i < a->size(); ++i) {
            CHECK(a2->data[i] == doctest::Approx(a->data[i]).epsilon(1e-9));
        }
    }
}

TEST_CASE("tanh weights: strictly inside (-1,1) with matching sign") {
    Rng rng(41);
    for (int trial = 0; trial < 500; ++trial) {
        auto s = testutil::random_tensor(rng, {1, 12}, -15.0, 15.0);
        auto a = normalize_tanh(s);
        for (std::size_t i = 0; i < a->size(); ++i) {
            CHECK(a->data[i] > -1.0);
            CHECK(a->data[i] < 1.0);
            if (s->data[i] != 0.0) {
                CHECK(std::signbit(a->data[i]) == std::signbit(s->data[i]));
            }
        }
    }
}

TEST_CASE("softmax-pooled descriptor is a per-coordinate convex combination") {
    Rng rng(43);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t c_n = 1 + rng.below(8);
        const std::size_t n = 1 + rng.below(12);
        auto local = testutil::random_tensor(rng, {1, c_n, n}, -5.0, 5.0);
        auto scores = testutil::random_tensor(rng, {1, n}, -4.0, 4.0);
        auto g = attend_pool(local, normalize_softmax(scores));
        for (std::size_t c = 0; c < c_n; ++c) {
            const double* row = local->data.data() + c * n;
            const double lo = *std::min_element(row, row + n);
            const double hi = *std::max_element(row, row + n);
            CHECK(g->data[c] >= lo - 1e-9);
            CHECK(g->data[c] <= hi + 1e-9);
        }
    }
}

TEST_CASE("permuting locations permutes scores and weights, pool unchanged") {
    Rng rng(47);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t c_n = 3, n = 7;
        // integer-valued features keep the permuted pooling sums exact
        auto local = Tensor::create({1, c_n, n});
        for (double& v : local->data) v = static_cast<double>(rng.below(9)) - 4.0;
        auto g = Tensor::create({1, c_n});
        for (double& v : g->data) v = static_cast<double>(rng.below(9)) - 4.0;
        auto u = Tensor::create({c_n});
        for (double& v : u->data) v = static_cast<double>(rng.below(5)) - 2.0;

        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);

        auto permuted = Tensor::create({1, c_n, n});
        for (std::size_t c = 0; c < c_n; ++c) {
            for (std::size_t i = 0; i < n; ++i) {
                permuted->data[c * n + perm[i]] = local->data[c * n + i];
            }
        }

        auto s1 = compat_pc(local, g, u);
        auto s2 = compat_pc(permuted, g, u);
        for (std::size_t i = 0; i < n; ++i) CHECK(s2->data[perm[i]] == s1->data[i]);

        auto a1 = normalize_tanh(s1);
        auto a2 = normalize_tanh(s2);
        for (std::size_t i = 0; i < n; ++i) CHECK(a2->data[perm[i]] == a1->data[i]);

        auto g1 = attend_pool(local, a1);
        auto g2 = attend_pool(permuted, a2);
        for (std::size_t c = 0; c < c_n; ++c) {
            CHECK(g2->data[c] == doctest::Approx(g1->data[c]).epsilon(1e-12));
        }
    }
}

TEST_CASE("concat_cols stacks parts in order and splits gradient") {
    auto a = Tensor::from_data({2, 2}, {1, 2, 3, 4}, true);
    auto b = Tensor::from_data({2, 1}, {9, 8}, true);
    auto c = concat_cols({a, b});
    CHECK(c->shape == std::vector<std::size_t>{2, 3});
    CHECK(c->data == std::vector<double>{1, 2, 9, 3, 4, 8});
    std::vector<double> coeffs = {1, 2, 3, 4, 5, 6};
    backward(weighted_sum(c, coeffs));
    CHECK(a->grad == std::vector<double>{1, 2, 4, 5});
    CHECK(b->grad == std::vector<double>{3, 6});
}

TEST_CASE("attention profile CSV has one row per level and location") {
    testutil::TempDir tmp("attcsv");
    std::vector<CompatibilityProfile> profiles(2);
    profiles[0] = {1, {0.5, -0.5, 1.5}, {0.2, 0.3, 0.5}, NormMode::Softmax};
    profiles[1] = {2, {1.0, 2.0}, {0.7, 0.9}, NormMode::Softmax};
    const std::string path = tmp.file("profile.csv");
    write_attention_csv(path, profiles);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "level,index,score,weight");
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        if (!line.empty()) ++rows;
    }
    CHECK(rows == 5);
}
