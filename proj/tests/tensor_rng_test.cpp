#include <cmath>
#include <set>
#include <stdexcept>

#include "degan/rng.hpp"
#include "degan/tensor.hpp"
#include "doctest.h"

using degan::Rng;
using degan::Tensor;

TEST_CASE("tensor shape and indexing") {
    Tensor t({2, 3, 4, 5});
    CHECK(t.numel() == 120);
    CHECK(t.ndim() == 4);
    CHECK(t.dim(3) == 5);
    t.at(1, 2, 3, 4) = 7.5;
    CHECK(t[119] == 7.5);

    Tensor s({3, 4, 5});
    s.at(0, 2, 3, 4) = -1.25;  // implicit batch dim on 3-d tensors
    CHECK(s[59] == -1.25);

    Tensor m({4, 6});
    m.at(2, 5) = 3.0;
    CHECK(m[17] == 3.0);
}

TEST_CASE("tensor reshape and arithmetic") {
    Tensor t = Tensor::full({2, 6}, 2.0);
    Tensor r = t.reshaped({3, 4});
    CHECK(r.dim(0) == 3);
    CHECK(r[11] == 2.0);
    CHECK_THROWS_AS(t.reshaped({5, 5}), std::invalid_argument);

    Tensor u = Tensor::full({2, 6}, 0.5);
    t.add_(u);
    CHECK(t[0] == 2.5);
    t.scale_(2.0);
    CHECK(t[3] == 5.0);
    CHECK(t.min() == 5.0);
    CHECK(t.max() == 5.0);
    CHECK(t.squared_norm() == doctest::Approx(12 * 25.0));
    CHECK(t.all_finite());

    Tensor bad({2, 2});
    CHECK_THROWS_AS(t.add_(bad), std::invalid_argument);
}

TEST_CASE("rng reproducibility") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c(42), d(43);
    CHECK(c.next_u64() != d.next_u64());
}

TEST_CASE("rng split is independent of draw count") {
    Rng a(5);
    for (int i = 0; i < 10; ++i) a.uniform01();
    Rng child_a = a.split(3);

    Rng b(5);
    Rng child_b = b.split(3);
    for (int i = 0; i < 20; ++i) CHECK(child_a.next_u64() == child_b.next_u64());

    Rng e(5);
    CHECK(e.split(0).next_u64() != e.split(1).next_u64());
}

TEST_CASE("rng uniform statistics") {
    Rng r(7);
    const int n = 100000;
    double sum = 0, sum2 = 0;
    for (int i = 0; i < n; ++i) {
        double x = r.uniform01();
        CHECK(x >= 0.0);
        CHECK(x < 1.0);
        sum += x;
        sum2 += x * x;
    }
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    CHECK(mean == doctest::Approx(0.5).epsilon(0.02));
    CHECK(var == doctest::Approx(1.0 / 12).epsilon(0.05));

    double lo = r.uniform(-3.0, -1.0);
    CHECK(lo >= -3.0);
    CHECK(lo < -1.0);
}

TEST_CASE("rng normal statistics") {
    Rng r(11);
    const int n = 100000;
    double sum = 0, sum2 = 0, sum3 = 0;
    for (int i = 0; i < n; ++i) {
        double x = r.normal();
        sum += x;
        sum2 += x * x;
        sum3 += x * x * x;
    }
    CHECK(std::abs(sum / n) < 0.02);
    CHECK(sum2 / n == doctest::Approx(1.0).epsilon(0.03));
    CHECK(std::abs(sum3 / n) < 0.05);  // symmetry

    Rng s(11);
    CHECK(s.normal(10.0, 0.0) == 10.0);
}

TEST_CASE("rng uniform_int bounds and coverage") {
    Rng r(13);
    std::set<long> seen;
    for (int i = 0; i < 1000; ++i) {
        long v = r.uniform_int(10);
        CHECK(v >= 0);
        CHECK(v < 10);
        seen.insert(v);
    }
    CHECK(seen.size() == 10);
    CHECK(r.uniform_int(1) == 0);
    CHECK_THROWS_AS(r.uniform_int(0), std::invalid_argument);
}
