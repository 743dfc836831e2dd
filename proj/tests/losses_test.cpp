#include <cmath>
#include <vector>

#include "degan/losses.hpp"
#include "degan/rng.hpp"
#include "doctest.h"

using namespace degan;

namespace {

Tensor random_logits(long n, long k, std::uint64_t seed, double scale = 2.0) {
    Tensor t({n, k});
    Rng r(seed);
    for (long i = 0; i < t.numel(); ++i) t[i] = r.uniform(-scale, scale);
    return t;
}

// Direct softmax cross entropy without the max-subtraction trick. Safe only
// for small logits; serves as an independent reference implementation.
double naive_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    const long n = logits.dim(0), k = logits.dim(1);
    double total = 0;
    for (long i = 0; i < n; ++i) {
        double z = 0;
        for (long j = 0; j < k; ++j) z += std::exp(logits.at(i, j));
        total += -std::log(std::exp(logits.at(i, labels[static_cast<size_t>(i)])) / z);
    }
    return total / static_cast<double>(n);
}

}  // namespace

TEST_CASE("cross entropy matches a naive reference to 1e-10") {
    Rng r(1);
    for (int trial = 0; trial < 20; ++trial) {
        const long n = 1 + static_cast<long>(r.uniform_int(8));
        const long k = 2 + static_cast<long>(r.uniform_int(9));
        Tensor logits = random_logits(n, k, 100 + static_cast<std::uint64_t>(trial));
        std::vector<int> labels(static_cast<size_t>(n));
        for (auto& y : labels) y = static_cast<int>(r.uniform_int(k));
        CHECK(std::abs(cross_entropy(logits, labels) - naive_cross_entropy(logits, labels)) < 1e-10);
    }
}

TEST_CASE("cross entropy is shift invariant and overflow safe") {
    Tensor logits = random_logits(4, 6, 7);
    std::vector<int> labels{0, 3, 5, 2};
    const double base = cross_entropy(logits, labels);
    Tensor shifted = logits;
    for (long i = 0; i < shifted.numel(); ++i) shifted[i] += 1000.0;
    CHECK(std::abs(cross_entropy(shifted, labels) - base) < 1e-9);

    Tensor huge({2, 3});
    huge.at(0, 0L) = 1e4;
    huge.at(1, 2L) = -1e4;
    const double v = cross_entropy(huge, {0, 0});
    CHECK(std::isfinite(v));
}

TEST_CASE("uniform logits give log(K) for every term") {
    // 7 expressions (8 expression-head logits with the generated class), 5 ids.
    Tensor expr_real({4, 8}), id_real({4, 5}), expr_fake({4, 8});
    std::vector<int> ye{0, 1, 2, 3}, yi{0, 1, 2, 3};
    auto d = discriminator_loss(expr_real, ye, id_real, yi, expr_fake, 7);
    CHECK(std::abs(d.real_expr - std::log(8.0)) < 1e-12);
    CHECK(std::abs(d.real_id - std::log(5.0)) < 1e-12);
    CHECK(std::abs(d.fake - std::log(8.0)) < 1e-12);
    CHECK(std::abs(d.total - (2 * std::log(8.0) + std::log(5.0))) < 1e-12);

    auto g = generator_loss(expr_fake, ye, id_real, yi);
    CHECK(std::abs(g.total - (std::log(8.0) + std::log(5.0))) < 1e-12);
}

TEST_CASE("cross entropy decreases as the true logit grows") {
    Tensor a({1, 3}), b({1, 3}), c({1, 3});
    b.at(0, 2L) = 3.0;
    c.at(0, 0L) = 3.0;
    std::vector<int> y{2};
    CHECK(cross_entropy(b, y) < cross_entropy(a, y));
    CHECK(cross_entropy(a, y) < cross_entropy(c, y));
}

TEST_CASE("cross entropy gradient rows sum to zero and match finite differences") {
    Tensor logits = random_logits(5, 7, 9);
    std::vector<int> labels{6, 0, 3, 1, 4};
    Tensor grad = cross_entropy_grad(logits, labels);
    for (long i = 0; i < 5; ++i) {
        double s = 0;
        for (long j = 0; j < 7; ++j) s += grad.at(i, j);
        CHECK(std::abs(s) < 1e-14);
    }
    auto loss = [&] { return cross_entropy(logits, labels); };
    std::vector<std::pair<Tensor*, const Tensor*>> pairs{{&logits, &grad}};
    CHECK(gradient_check_max_error(loss, pairs, 1e-5, 35, 77) < 1e-8);
}

TEST_CASE("discriminator loss wiring") {
    // A fake batch confidently classified as the generated class costs ~0.
    Tensor expr_fake({2, 4});
    expr_fake.at(0, 3L) = 30.0;
    expr_fake.at(1, 3L) = 30.0;
    Tensor expr_real({2, 4}), id_real({2, 3});
    auto t = discriminator_loss(expr_real, {0, 1}, id_real, {0, 2}, expr_fake, 3);
    CHECK(t.fake < 1e-9);
    CHECK(t.total == doctest::Approx(t.real_expr + t.real_id + t.fake));

    Tensor wrong({2, 3});  // expression head missing the generated class
    CHECK_THROWS_AS(discriminator_loss(wrong, {0, 1}, id_real, {0, 2}, wrong, 3),
                    std::invalid_argument);
    CHECK_THROWS_AS(cross_entropy(expr_real, {0, 9}), std::invalid_argument);
}

TEST_CASE("stage2 loss is the advertised weighted sum") {
    std::array<Tensor, 4> locals{random_logits(3, 5, 11), random_logits(3, 5, 12),
                                 random_logits(3, 5, 13), random_logits(3, 5, 14)};
    Tensor fused = random_logits(3, 5, 15);
    std::vector<int> y{0, 2, 4};

    Stage2LossWeights w;
    w.local = {0.7, 0.6, 0.4, 0.3};
    w.fused = 1.0;
    auto t = stage2_total_loss(locals, fused, y, w);
    double expected = w.fused * cross_entropy(fused, y);
    for (int i = 0; i < 4; ++i)
        expected += w.local[static_cast<size_t>(i)] * cross_entropy(locals[static_cast<size_t>(i)], y);
    CHECK(t.total == doctest::Approx(expected).epsilon(1e-12));

    // Zeroing the local weights leaves exactly the fused term.
    Stage2LossWeights only_fused;
    only_fused.local = {0, 0, 0, 0};
    only_fused.fused = 1.0;
    auto t2 = stage2_total_loss(locals, fused, y, only_fused);
    CHECK(t2.total == doctest::Approx(cross_entropy(fused, y)).epsilon(1e-12));

    // Doubling one weight moves the total by exactly that term.
    Stage2LossWeights w3 = w;
    w3.local[2] = w.local[2] * 2;
    auto t3 = stage2_total_loss(locals, fused, y, w3);
    CHECK(t3.total - t.total ==
          doctest::Approx(w.local[2] * cross_entropy(locals[2], y)).epsilon(1e-9));
}

TEST_CASE("argmax ties resolve to the lowest index") {
    Tensor logits({2, 3});
    logits.at(0, 0L) = 1.0;
    logits.at(0, 1L) = 1.0;
    logits.at(1, 2L) = 5.0;
    auto pred = argmax_rows(logits);
    CHECK(pred[0] == 0);
    CHECK(pred[1] == 2);
    CHECK(accuracy(logits, {0, 2}) == 1.0);
    CHECK(accuracy(logits, {1, 2}) == 0.5);
}

TEST_CASE("gradient check utility is exact on a quadratic") {
    Tensor p({4});
    Tensor g({4});
    Rng r(31);
    for (long i = 0; i < 4; ++i) p[i] = r.uniform(-1.0, 1.0);
    auto loss = [&] {
        double s = 0;
        for (long i = 0; i < 4; ++i) s += p[i] * p[i];
        return s;
    };
    for (long i = 0; i < 4; ++i) g[i] = 2.0 * p[i];
    std::vector<std::pair<Tensor*, const Tensor*>> pairs{{&p, &g}};
    CHECK(gradient_check_max_error(loss, pairs, 1e-5, 8, 5) < 1e-8);

    // And it flags a wrong gradient loudly.
    g[2] += 0.5;
    CHECK(gradient_check_max_error(loss, pairs, 1e-5, 8, 5) > 1e-2);
}
