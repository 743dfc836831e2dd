#include <cmath>
#include <cstring>
#include <set>

#include "degan/losses.hpp"
#include "degan/nn.hpp"
#include "doctest.h"

using namespace degan;

namespace {

Tensor random_tensor(std::vector<long> shape, std::uint64_t seed, double scale = 1.0) {
    Tensor t(std::move(shape));
    Rng r(seed);
    for (long i = 0; i < t.numel(); ++i) t[i] = r.normal(0.0, scale);
    return t;
}

// Projection loss: L = sum(out .* R) for a fixed random R. Linear in the
// output, so grad_out = R and every layer gradient is exercised.
struct ProjectionHarness {
    Module& layer;
    Tensor input;
    Tensor proj;
    Tensor input_grad;
    bool training;

    ProjectionHarness(Module& m, Tensor in, std::uint64_t proj_seed, bool train = true)
        : layer(m), input(std::move(in)), training(train) {
        Tensor out = layer.forward(input, training);
        proj = random_tensor(out.shape(), proj_seed);
    }

    double loss() {
        Tensor out = layer.forward(input, training);
        double s = 0;
        for (long i = 0; i < out.numel(); ++i) s += out[i] * proj[i];
        return s;
    }

    // Populate analytic grads (params via +=, input grad captured).
    void backward() {
        for (ParamTensor* p : layer.params()) p->grad.zero();
        loss();
        input_grad = layer.backward(proj);
    }
};

void check_layer_grads(Module& layer, Tensor input, std::uint64_t seed, double tol = 1e-6) {
    ProjectionHarness h(layer, std::move(input), seed);
    h.backward();
    auto loss_fn = [&h] { return h.loss(); };

    if (!layer.params().empty()) {
        const double perr = gradient_check_max_error(loss_fn, layer.params(), 1e-5, 16, seed + 1);
        CHECK(perr < tol);
    }
    std::vector<std::pair<Tensor*, const Tensor*>> input_pair{{&h.input, &h.input_grad}};
    const double ierr = gradient_check_max_error(loss_fn, input_pair, 1e-5, 16, seed + 2);
    CHECK(ierr < tol);
}

}  // namespace

TEST_CASE("conv2d forward matches a direct convolution") {
    Conv2d conv("c", 1, 1, 3, 1, 1);
    auto ps = conv.params();
    ps[0]->value.fill(1.0);  // 3x3 box filter
    ps[1]->value[0] = 0.25;
    Tensor x = Tensor::full({1, 1, 3, 3}, 1.0);
    Tensor y = conv.forward(x, true);
    // Center: 9 taps inside; corner: 4 taps inside.
    CHECK(y.at(0, 0, 1, 1) == doctest::Approx(9.25));
    CHECK(y.at(0, 0, 0, 0) == doctest::Approx(4.25));
    CHECK(y.at(0, 0, 0, 1) == doctest::Approx(6.25));
}

TEST_CASE("conv2d stride and shape") {
    Conv2d conv("c", 3, 5, 4, 2, 1);
    Tensor x = random_tensor({2, 3, 8, 8}, 1);
    Tensor y = conv.forward(x, true);
    CHECK(y.shape() == std::vector<long>{2, 5, 4, 4});
}

TEST_CASE("conv2d gradients") {
    Rng r(10);
    Conv2d conv("c", 2, 3, 3, 2, 1);
    init_parameters(conv.params(), conv.buffers(), r);
    check_layer_grads(conv, random_tensor({2, 2, 5, 5}, 11), 100);
}

TEST_CASE("conv transpose inverts conv shapes and has correct gradients") {
    ConvTranspose2d up("u", 3, 2, 4, 2, 1);
    Tensor x = random_tensor({2, 3, 4, 4}, 12);
    Tensor y = up.forward(x, true);
    CHECK(y.shape() == std::vector<long>{2, 2, 8, 8});

    Rng r(13);
    init_parameters(up.params(), up.buffers(), r);
    check_layer_grads(up, random_tensor({2, 3, 4, 4}, 14), 200);
}

TEST_CASE("conv transpose matches the adjoint of conv") {
    // <conv(x), y> == <x, convT(y)> when convT uses the same weight.
    const long k = 4, s = 2, p = 1;
    Conv2d conv("c", 2, 3, k, s, p);
    ConvTranspose2d up("u", 3, 2, k, s, p);
    Rng r(15);
    init_parameters(conv.params(), conv.buffers(), r);
    // Share the weight: conv weight is (out=3, in=2, k, k), convT is (in=3, out=2, k, k)
    // with the same (3, 2, k, k) layout, so values can be copied directly.
    auto cw = conv.params()[0];
    auto uw = up.params()[0];
    REQUIRE(cw->value.numel() == uw->value.numel());
    uw->value = cw->value.reshaped(uw->value.shape());
    up.params()[1]->value.zero();
    conv.params()[1]->value.zero();

    Tensor x = random_tensor({1, 2, 6, 6}, 16);
    Tensor y = random_tensor({1, 3, 3, 3}, 17);
    Tensor cx = conv.forward(x, true);
    Tensor uy = up.forward(y, true);
    double lhs = 0, rhs = 0;
    for (long i = 0; i < cx.numel(); ++i) lhs += cx[i] * y[i];
    for (long i = 0; i < uy.numel(); ++i) rhs += uy[i] * x[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("batchnorm normalizes and backpropagates through batch statistics") {
    BatchNorm2d bn("bn", 3);
    Tensor x = random_tensor({4, 3, 3, 3}, 20, 2.0);
    Tensor y = bn.forward(x, true);
    // Per-channel output mean ~0, var ~1 with default affine params.
    for (long c = 0; c < 3; ++c) {
        double s = 0, s2 = 0;
        long m = 0;
        for (long n = 0; n < 4; ++n)
            for (long i = 0; i < 3; ++i)
                for (long j = 0; j < 3; ++j) {
                    s += y.at(n, c, i, j);
                    s2 += y.at(n, c, i, j) * y.at(n, c, i, j);
                    ++m;
                }
        CHECK(std::abs(s / m) < 1e-10);
        CHECK(s2 / m == doctest::Approx(1.0).epsilon(1e-3));
    }

    Rng r(21);
    init_parameters(bn.params(), bn.buffers(), r);
    check_layer_grads(bn, random_tensor({3, 3, 4, 4}, 22), 300, 1e-5);
}

TEST_CASE("batchnorm eval mode uses running statistics") {
    BatchNorm2d bn("bn", 2);
    Tensor x = random_tensor({8, 2, 4, 4}, 23, 1.5);
    for (int i = 0; i < 200; ++i) bn.forward(x, true);  // converge running stats

    Tensor y_eval = bn.forward(x, false);
    Tensor y_train = bn.forward(x, true);
    // With stats converged to this batch, biased vs unbiased variance is the
    // only difference; outputs should be close but need not be identical.
    double max_diff = 0;
    for (long i = 0; i < y_eval.numel(); ++i)
        max_diff = std::max(max_diff, std::abs(y_eval[i] - y_train[i]));
    CHECK(max_diff < 0.05);

    // Eval forward must not mutate the running stats.
    Tensor rm_before = bn.buffers()[0]->value;
    bn.forward(x, false);
    for (long i = 0; i < rm_before.numel(); ++i) CHECK(bn.buffers()[0]->value[i] == rm_before[i]);
}

TEST_CASE("activation gradients") {
    LeakyReLU lrelu(0.2);
    check_layer_grads(lrelu, random_tensor({2, 3, 4, 4}, 30), 400);
    ReLU relu;
    check_layer_grads(relu, random_tensor({2, 3, 4, 4}, 31), 500);
    Tanh tanh;
    check_layer_grads(tanh, random_tensor({2, 3, 4, 4}, 32), 600);
}

TEST_CASE("linear gradients and shape checks") {
    Linear lin("l", 7, 4);
    Rng r(33);
    init_parameters(lin.params(), lin.buffers(), r);
    check_layer_grads(lin, random_tensor({5, 7}, 34), 700);
    Tensor bad({2, 6});
    CHECK_THROWS_AS(lin.forward(bad, true), std::invalid_argument);
}

TEST_CASE("pooling and flatten gradients") {
    GlobalAvgPool gap;
    check_layer_grads(gap, random_tensor({2, 3, 5, 5}, 35), 800);
    Flatten fl;
    check_layer_grads(fl, random_tensor({2, 3, 4, 4}, 36), 900);
}

TEST_CASE("sequential composite gradients") {
    Sequential net;
    net.emplace<Conv2d>("s.c1", 1, 4, 4, 2, 1);
    net.emplace<BatchNorm2d>("s.c1.bn", 4);
    net.emplace<LeakyReLU>(0.2);
    net.emplace<Conv2d>("s.c2", 4, 8, 4, 2, 1);
    net.emplace<BatchNorm2d>("s.c2.bn", 8);
    net.emplace<LeakyReLU>(0.2);
    net.emplace<Flatten>();
    net.emplace<Linear>("s.head", 8 * 2 * 2, 3);
    Rng r(40);
    init_parameters(net.params(), net.buffers(), r);
    // Two normalization layers deep; central differences carry a little more
    // truncation error here than on single layers.
    check_layer_grads(net, random_tensor({3, 1, 8, 8}, 41), 1000, 5e-5);
}

TEST_CASE("adam first step size equals the learning rate for any gradient") {
    ParamTensor p("p.weight", {3});
    p.value.fill(0.0);
    Adam opt({&p}, 0.01);
    p.grad[0] = 1.0;
    p.grad[1] = 7.0;
    p.grad[2] = -0.3;
    opt.step();
    for (long i = 0; i < 3; ++i)
        CHECK(std::abs(p.value[i] + 0.01 * (p.grad[i] > 0 ? 1.0 : -1.0)) < 1e-6);
    CHECK(opt.steps_taken() == 1);
}

TEST_CASE("adam converges on a quadratic") {
    ParamTensor p("p.weight", {2});
    p.value[0] = 3.0;
    p.value[1] = -2.0;
    Adam opt({&p}, 0.05);
    for (int i = 0; i < 800; ++i) {
        opt.zero_grad();
        p.grad[0] = 2.0 * (p.value[0] - 1.0);
        p.grad[1] = 2.0 * (p.value[1] + 0.5);
        opt.step();
    }
    CHECK(p.value[0] == doctest::Approx(1.0).epsilon(1e-2));
    CHECK(p.value[1] == doctest::Approx(-0.5).epsilon(1e-2));
}

TEST_CASE("initialization statistics") {
    ParamTensor w("big.weight", {1000, 1000});
    ParamTensor b("big.bias", {1000});
    ParamTensor g("big.gamma", {1000});
    Rng r(50);
    init_parameters({&w, &b, &g}, {}, r);

    double sum = 0, sum2 = 0;
    for (long i = 0; i < w.value.numel(); ++i) {
        sum += w.value[i];
        sum2 += w.value[i] * w.value[i];
    }
    const double n = static_cast<double>(w.value.numel());
    const double mean = sum / n;
    const double sd = std::sqrt(sum2 / n - mean * mean);
    CHECK(std::abs(mean) < 1e-4);
    CHECK(sd > 0.0195);
    CHECK(sd < 0.0205);

    for (long i = 0; i < b.value.numel(); ++i) CHECK(b.value[i] == 0.0);
    double gsum = 0;
    for (long i = 0; i < g.value.numel(); ++i) gsum += g.value[i];
    CHECK(gsum / 1000.0 == doctest::Approx(1.0).epsilon(0.01));

    // Same seed, same initialization, bit for bit.
    ParamTensor w2("big.weight", {1000, 1000});
    ParamTensor b2("big.bias", {1000});
    ParamTensor g2("big.gamma", {1000});
    Rng r2(50);
    init_parameters({&w2, &b2, &g2}, {}, r2);
    CHECK(std::memcmp(w.value.data(), w2.value.data(), sizeof(double) * w.value.numel()) == 0);

    ParamTensor odd("strange.thing", {3});
    Rng r3(51);
    std::vector<ParamTensor*> vp{&odd};
    CHECK_THROWS_AS(init_parameters(vp, {}, r3), std::runtime_error);
}

TEST_CASE("parameter hash is sensitive and stable") {
    ParamTensor a("a.weight", {16});
    Rng r(60);
    init_parameters({&a}, {}, r);
    const std::uint64_t h1 = parameter_hash({&a});
    CHECK(parameter_hash({&a}) == h1);
    a.value[7] += 1e-13;
    CHECK(parameter_hash({&a}) != h1);
}
