#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "biclstm/rng.hpp"
#include "biclstm/tensor.hpp"

using namespace biclstm;

TEST_CASE("hadamard elementwise product") {
    Tensor a({3}, {1, 2, 3});
    Tensor ones({3}, {1, 1, 1});
    Tensor prod = hadamard(a, ones);
    CHECK(prod[0] == 1.0);
    CHECK(prod[1] == 2.0);
    CHECK(prod[2] == 3.0);

    Tensor b({2}, {2, 3});
    Tensor z({2}, {0, 5});
    Tensor p = hadamard(b, z);
    CHECK(p[0] == 0.0);
    CHECK(p[1] == 15.0);
}

TEST_CASE("hadamard matches scalar-loop oracle on random tensors") {
    Rng rng(7);
    Tensor a = rng_uniform(rng, {4, 4}, -2.0, 2.0);
    Tensor b = rng_uniform(rng, {4, 4}, -2.0, 2.0);
    Tensor prod = hadamard(a, b);
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x)
            CHECK(prod.at({y, x}) == a.at({y, x}) * b.at({y, x}));
}

TEST_CASE("hadamard is bitwise commutative") {
    Rng rng(11);
    Tensor a = rng_uniform(rng, {5, 3}, -10.0, 10.0);
    Tensor b = rng_uniform(rng, {5, 3}, -10.0, 10.0);
    Tensor ab = hadamard(a, b);
    Tensor ba = hadamard(b, a);
    for (std::size_t i = 0; i < ab.size(); ++i) CHECK(ab[i] == ba[i]);
}

TEST_CASE("shape mismatch names both shapes") {
    Tensor a({2, 3});
    Tensor b({3, 2});
    CHECK_THROWS_MATCHES(hadamard(a, b), shape_error,
                         Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("[2,3]") &&
                                                         Catch::Matchers::ContainsSubstring("[3,2]")));
}

TEST_CASE("sigmoid and tanh fixed points") {
    Tensor z({1}, {0.0});
    CHECK(map_sigmoid(z)[0] == 0.5);
    CHECK(map_tanh(z)[0] == 0.0);
}

TEST_CASE("sigmoid(x) + sigmoid(-x) = 1") {
    Rng rng(3);
    Tensor x = rng_uniform(rng, {100}, -8.0, 8.0);
    Tensor s = map_sigmoid(x);
    Tensor sn = map_sigmoid(scale(x, -1.0));
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(s[i] + sn[i] - 1.0) < 1e-12);
}

TEST_CASE("sigmoid and tanh are monotone and bounded") {
    Rng rng(5);
    // |x| <= 18 keeps tanh strictly below 1 at double precision
    Tensor x = rng_uniform(rng, {200}, -13.0, 13.0);
    Tensor y = x;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += rng.uniform(0.0, 5.0);
    Tensor sx = map_sigmoid(x), sy = map_sigmoid(y);
    Tensor tx = map_tanh(x), ty = map_tanh(y);
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(sx[i] <= sy[i]);
        CHECK(tx[i] <= ty[i]);
        CHECK((sx[i] > 0.0 && sx[i] < 1.0));
        CHECK((tx[i] > -1.0 && tx[i] < 1.0));
    }
}

TEST_CASE("output shape is a pure function of input shapes") {
    Rng rng(9);
    Tensor a = rng_uniform(rng, {3, 4, 5}, -1.0, 1.0);
    Tensor b = rng_uniform(rng, {3, 4, 5}, -1.0, 1.0);
    CHECK(hadamard(a, b).shape() == a.shape());
    CHECK(add(a, b).shape() == a.shape());
    CHECK(sub(a, b).shape() == a.shape());
    CHECK(map_sigmoid(a).shape() == a.shape());
    CHECK(map_tanh(a).shape() == a.shape());
}

TEST_CASE("tensor data length always matches shape") {
    CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5, 0.0)), shape_error);
    CHECK_THROWS_AS(Tensor({0, 3}), argument_error);
}

TEST_CASE("rng determinism by seed") {
    Rng a(42), b(42);
    Tensor ta = rng_uniform(a, {3}, 0.0, 1.0);
    Tensor tb = rng_uniform(b, {3}, 0.0, 1.0);
    for (std::size_t i = 0; i < 3; ++i) CHECK(ta[i] == tb[i]);

    Rng c(43);
    Tensor tc = rng_uniform(c, {3}, 0.0, 1.0);
    CHECK(max_abs_diff(ta, tc) > 0.0);
}

TEST_CASE("rng rejects empty ranges") {
    Rng rng(1);
    CHECK_THROWS_AS(rng_uniform(rng, {3}, 0.0, 0.0), argument_error);
    CHECK_THROWS_AS(rng.uniform(2.0, 1.0), argument_error);
}

TEST_CASE("uniform sample mean approaches midpoint") {
    Rng rng(1234);
    const std::size_t n = 100000;
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += rng.next_double();
    CHECK(std::abs(sum / n - 0.5) < 0.01);
}

TEST_CASE("uniform samples stay in [lo,hi)") {
    Rng rng(77);
    Tensor t = rng_uniform(rng, {10000}, -3.0, 2.0);
    for (std::size_t i = 0; i < t.size(); ++i) {
        CHECK(t[i] >= -3.0);
        CHECK(t[i] < 2.0);
    }
}

TEST_CASE("derived streams are independent of parent advancement") {
    Rng a(10);
    Rng child1 = a.derive(5);
    a.next_u64();
    Rng b(10);
    Rng child2 = b.derive(5);
    CHECK(child1.next_u64() == child2.next_u64());
}
