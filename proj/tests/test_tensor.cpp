#include "doctest.h"

#include <cmath>
#include <cstring>

#include "capsnav/capsules.hpp"
#include "capsnav/layers.hpp"
#include "capsnav/tensor.hpp"

using namespace capsnav;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.value()) v = rng.uniform(lo, hi);
    return t;
}

// Fixed random weighting makes index mix-ups visible in a scalar check.
Tensor probe_weights(const Shape& shape, std::uint64_t seed) {
    Rng rng(seed);
    return random_tensor(shape, rng, 0.1, 1.1);
}

}  // namespace

TEST_CASE("elementwise add/sub/mul basic values") {
    Tensor a({2}, {1.0, 2.0});
    Tensor b({2}, {3.0, 4.0});
    Tensor c = add(a, b);
    CHECK(c.value() == std::vector<double>{4.0, 6.0});
    CHECK(sub(b, a).value() == std::vector<double>{2.0, 2.0});
    CHECK(mul(a, b).value() == std::vector<double>{3.0, 8.0});
    CHECK(div(b, a).value() == std::vector<double>{3.0, 2.0});
    CHECK(add(a, 1.5).value() == std::vector<double>{2.5, 3.5});
}

TEST_CASE("shape mismatch raises ShapeError") {
    Tensor a({2}, {1.0, 2.0});
    Tensor b({3}, {1.0, 2.0, 3.0});
    CHECK_THROWS_AS(add(a, b), ShapeError);
    CHECK_THROWS_AS(mul(a, b), ShapeError);
    CHECK_THROWS_AS(matmul(a, b), ShapeError);
}

TEST_CASE("mul by zero annihilates values and gradients") {
    Tensor x({3}, {1.0, -2.0, 3.0});
    x.set_requires_grad(true);
    Tape tape;
    Tensor y = mul(x, 0.0);
    for (double v : y.value()) CHECK(v == 0.0);
    Tensor loss = sum(y);
    tape.backward(loss);
    for (double g : x.grad()) CHECK(g == 0.0);
}

TEST_CASE("matmul identity and 2x2") {
    Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor x({3, 2}, {1, 2, 3, 4, 5, 6});
    CHECK(matmul(eye, x).value() == x.value());

    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor i2({2, 2}, {1, 0, 0, 1});
    CHECK(matmul(a, i2).value() == a.value());
}

TEST_CASE("reductions: sum, mean, norm2") {
    Tensor v({3}, {1, 2, 3});
    CHECK(sum(v).item() == 6.0);
    CHECK(mean(v).item() == doctest::Approx(2.0));
    Tensor p({2}, {3, 4});
    CHECK(norm2(p).item() == doctest::Approx(5.0));

    Tensor m({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(sum(m, 0).value() == std::vector<double>{5, 7, 9});
    CHECK(sum(m, 1).value() == std::vector<double>{6, 15});
    CHECK_THROWS_AS(sum(m, 2), ShapeError);
}

TEST_CASE("mean gradient is 1/n per element") {
    Tensor x({4}, {1, 2, 3, 4});
    x.set_requires_grad(true);
    Tape tape;
    tape.backward(mean(x));
    for (double g : x.grad()) CHECK(g == doctest::Approx(0.25));
}

TEST_CASE("backward of sum gives ones; norm2 squared gives 2x") {
    Tensor x({3}, {5, -1, 2});
    x.set_requires_grad(true);
    {
        Tape tape;
        tape.backward(sum(x));
        CHECK(x.grad() == std::vector<double>{1, 1, 1});
    }
    Tensor y({2}, {3, 4});
    y.set_requires_grad(true);
    {
        Tape tape;
        Tensor n = norm2(y);
        tape.backward(mul(n, n));
        CHECK(y.grad()[0] == doctest::Approx(6.0));
        CHECK(y.grad()[1] == doctest::Approx(8.0));
    }
}

TEST_CASE("norm2 backward at the zero vector is zero") {
    Tensor x({3}, 0.0);
    x.set_requires_grad(true);
    Tape tape;
    tape.backward(norm2(x));
    for (double g : x.grad()) CHECK(g == 0.0);
}

TEST_CASE("non-scalar backward loss is a contract error") {
    Tensor x({3}, {1, 2, 3});
    x.set_requires_grad(true);
    Tape tape;
    Tensor y = mul(x, 2.0);
    CHECK_THROWS_AS(tape.backward(y), ContractError);
}

TEST_CASE("gradient accumulation: backward twice equals 2x once") {
    Rng rng(7);
    Tensor x = random_tensor({5}, rng);
    x.set_requires_grad(true);
    Tape tape;
    Tensor loss = sum(mul(tanh(x), probe_weights({5}, 1)));
    tape.backward(loss);
    std::vector<double> g1 = x.grad();
    tape.backward(loss);
    for (std::size_t i = 0; i < g1.size(); ++i) CHECK(x.grad()[i] == doctest::Approx(2.0 * g1[i]));
}

TEST_CASE("finite differences: tanh/exp/sigmoid/div at random points") {
    Rng rng(11);
    for (int rep = 0; rep < 20; ++rep) {
        Tensor x = random_tensor({6}, rng, -2.0, 2.0);
        Tensor w = probe_weights({6}, 100 + rep);
        CHECK(grad_check([&](const Tensor& t) { return sum(mul(tanh(t), w)); }, x) <= 1e-6);
        CHECK(grad_check([&](const Tensor& t) { return sum(mul(exp(t), w)); }, x) <= 1e-6);
        CHECK(grad_check([&](const Tensor& t) { return sum(mul(sigmoid(t), w)); }, x) <= 1e-6);
        CHECK(grad_check([&](const Tensor& t) { return sum(div(w, add(mul(t, t), 1.0))); }, x) <=
              1e-6);
    }
}

TEST_CASE("finite differences: matmul wrt both operands") {
    Rng rng(13);
    Tensor b = random_tensor({4, 3}, rng);
    Tensor w = probe_weights({2, 3}, 5);
    Tensor a0 = random_tensor({2, 4}, rng);
    double err_a = grad_check(
        [&](const Tensor& a) { return sum(mul(matmul(a, b), w)); }, a0);
    CHECK(err_a <= 1e-6);
    double err_b = grad_check(
        [&](const Tensor& bb) { return sum(mul(matmul(a0, bb), w)); }, b);
    CHECK(err_b <= 1e-6);
}

TEST_CASE("finite differences: structural ops") {
    Rng rng(17);
    Tensor x = random_tensor({8}, rng);
    CHECK(grad_check([](const Tensor& t) { return pick(t, 3); }, x) <= 1e-8);
    CHECK(grad_check([](const Tensor& t) { return sum(slice(t, 2, 6)); }, x) <= 1e-8);
    Tensor other = random_tensor({4}, rng);
    CHECK(grad_check([&](const Tensor& t) { return norm2(concat(t, other)); }, x) <= 1e-6);
    CHECK(grad_check([](const Tensor& t) { return sum(mul(reshape(t, {2, 4}), 2.0)); }, x) <= 1e-8);
    std::vector<std::int64_t> map{7, 0, 3, 3, 1};
    CHECK(grad_check([&](const Tensor& t) {
              return sum(mul(gather(t, map, {5}), probe_weights({5}, 9)));
          }, x) <= 1e-8);
}

TEST_CASE("composite conv -> ELU -> sum matches finite differences") {
    Rng rng(19);
    ConvParams conv = make_conv(2, 3, 3, 3, 1, 1, rng);
    Tensor x = random_tensor({2, 5, 5}, rng);
    auto f = [&](const Tensor& t) { return sum(elu(conv2d(t, conv))); };
    CHECK(grad_check(f, x, 1e-5) <= 1e-4);

    // and wrt the kernel weights
    Tensor w0 = conv.weights.detached();
    auto fw = [&](const Tensor& w) {
        ConvParams c2 = conv;
        c2.weights = w;
        return sum(elu(conv2d(x, c2)));
    };
    CHECK(grad_check(fw, w0, 1e-5) <= 1e-4);
}

TEST_CASE("grad_check on f = sum is exact to 1e-10") {
    Rng rng(23);
    Tensor x = random_tensor({7}, rng);
    CHECK(grad_check([](const Tensor& t) { return sum(t); }, x) <= 1e-10);
}

TEST_CASE("grad_check documents eps sensitivity") {
    Rng rng(29);
    Tensor x = random_tensor({4}, rng, 0.5, 1.5);
    auto f = [](const Tensor& t) { return norm2(squash(t)); };
    double tight = grad_check(f, x, 1e-5);
    double loose = grad_check(f, x, 1e-1);
    CHECK(tight <= 1e-5);
    CHECK(loose > tight);
}

TEST_CASE("tape replay is deterministic: bit-identical gradients") {
    auto run = [] {
        Rng rng(42);
        Tensor x = random_tensor({3, 4}, rng);
        Tensor w = random_tensor({4, 2}, rng);
        w.set_requires_grad(true);
        Tape tape;
        Tensor loss = sum(tanh(matmul(x, w)));
        tape.backward(loss);
        return w.grad();
    };
    std::vector<double> g1 = run();
    std::vector<double> g2 = run();
    REQUIRE(g1.size() == g2.size());
    CHECK(std::memcmp(g1.data(), g2.data(), g1.size() * sizeof(double)) == 0);
}

TEST_CASE("ops outside a tape do not record or require grad") {
    Tensor x({2}, {1, 2});
    x.set_requires_grad(true);
    Tensor y = mul(x, 3.0);
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("NoGradGuard suspends recording") {
    Tensor x({2}, {1, 2});
    x.set_requires_grad(true);
    Tape tape;
    {
        NoGradGuard guard;
        Tensor y = mul(x, 3.0);
        CHECK_FALSE(y.requires_grad());
    }
    CHECK(tape.op_count() == 0);
}

TEST_CASE("rng determinism and categorical sampling") {
    Rng a(123), b(123);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng rng(5);
    std::vector<double> probs{0.25, 0.25, 0.25, 0.25};
    std::vector<int> hits(4, 0);
    for (int i = 0; i < 10000; ++i) hits[rng.categorical(probs)]++;
    for (int h : hits) {
        CHECK(h > 2300);
        CHECK(h < 2700);
    }
}
