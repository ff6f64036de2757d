#include "doctest.h"

#include <cmath>

#include "capsnav/layers.hpp"

using namespace capsnav;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.value()) v = rng.uniform(lo, hi);
    return t;
}

// Direct cross-correlation, quadruple loop. Independent of the im2col path.
Tensor conv_oracle(const Tensor& x, const ConvParams& p) {
    int in_ch = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    int out_ch = p.weights.shape()[0], kh = p.weights.shape()[2], kw = p.weights.shape()[3];
    int oh = (h + 2 * p.padding - kh) / p.stride + 1;
    int ow = (w + 2 * p.padding - kw) / p.stride + 1;
    Tensor out({out_ch, oh, ow});
    for (int oc = 0; oc < out_ch; ++oc)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double acc = p.bias.value()[oc];
                for (int ic = 0; ic < in_ch; ++ic)
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) {
                            int iy = oy * p.stride + ky - p.padding;
                            int ix = ox * p.stride + kx - p.padding;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                            acc += x.value()[(ic * h + iy) * w + ix] *
                                   p.weights.value()[((oc * in_ch + ic) * kh + ky) * kw + kx];
                        }
                out.value()[(oc * oh + oy) * ow + ox] = acc;
            }
    return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.shape() == b.shape());
    double m = 0.0;
    for (std::size_t i = 0; i < a.value().size(); ++i)
        m = std::max(m, std::abs(a.value()[i] - b.value()[i]));
    return m;
}

}  // namespace

TEST_CASE("conv2d: 1x1 unit kernel is the identity map") {
    Rng rng(1);
    Tensor x = random_tensor({1, 4, 4}, rng);
    ConvParams p = make_conv(1, 1, 1, 1, 1, 0, rng);
    p.weights.value() = {1.0};
    p.bias.value() = {0.0};
    CHECK(max_abs_diff(conv2d(x, p), x) == 0.0);
}

TEST_CASE("conv2d: all-ones 3x3 kernel over all-ones 3x3 input sums to 9 plus bias") {
    Rng rng(2);
    Tensor x({1, 3, 3}, 1.0);
    ConvParams p = make_conv(1, 1, 3, 3, 1, 0, rng);
    std::fill(p.weights.value().begin(), p.weights.value().end(), 1.0);
    p.bias.value() = {0.25};
    Tensor y = conv2d(x, p);
    CHECK(y.shape() == Shape{1, 1, 1});
    CHECK(y.item() == doctest::Approx(9.25));
}

TEST_CASE("conv2d matches the direct-convolution oracle on random instances") {
    Rng rng(3);
    for (int rep = 0; rep < 200; ++rep) {
        int in_ch = 1 + rng.uniform_int(3);
        int out_ch = 1 + rng.uniform_int(3);
        int kh = 1 + rng.uniform_int(3);
        int kw = 1 + rng.uniform_int(3);
        int stride = 1 + rng.uniform_int(2);
        int pad = rng.uniform_int(2);
        int h = kh + rng.uniform_int(5);
        int w = kw + rng.uniform_int(5);
        Tensor x = random_tensor({in_ch, h, w}, rng);
        ConvParams p = make_conv(in_ch, out_ch, kh, kw, stride, pad, rng);
        Tensor got = conv2d(x, p);
        Tensor want = conv_oracle(x, p);
        int oh = (h + 2 * pad - kh) / stride + 1;
        int ow = (w + 2 * pad - kw) / stride + 1;
        CHECK(got.shape() == Shape{out_ch, oh, ow});
        CHECK(max_abs_diff(got, want) <= 1e-12);
    }
}

TEST_CASE("conv2d rejects non-positive output extents") {
    Rng rng(4);
    Tensor x = random_tensor({1, 3, 3}, rng);
    ConvParams p = make_conv(1, 1, 5, 5, 1, 0, rng);
    CHECK_THROWS_AS(conv2d(x, p), ShapeError);
}

TEST_CASE("conv2d gradient matches finite differences") {
    Rng rng(5);
    Tensor x = random_tensor({2, 5, 5}, rng);
    ConvParams p = make_conv(2, 3, 3, 3, 2, 1, rng);
    auto fx = [&](const Tensor& t) { return sum(mul(conv2d(t, p), 0.7)); };
    CHECK(grad_check(fx, x) <= 1e-6);
    auto fw = [&](const Tensor& w) {
        ConvParams q = p;
        q.weights = w;
        return sum(mul(conv2d(x, q), 0.7));
    };
    CHECK(grad_check(fw, p.weights.detached()) <= 1e-6);
    auto fb = [&](const Tensor& b) {
        ConvParams q = p;
        q.bias = b;
        return sum(mul(conv2d(x, q), 0.7));
    };
    CHECK(grad_check(fb, p.bias.detached()) <= 1e-6);
}

TEST_CASE("batch_norm: constant input normalizes to zero in train mode") {
    BatchNormParams p = make_batch_norm(2);
    Tensor x({2, 3, 3}, 4.2);
    Tensor y = batch_norm(x, p);
    for (double v : y.value()) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("batch_norm: gamma=0 yields beta everywhere") {
    BatchNormParams p = make_batch_norm(2);
    std::fill(p.gamma.value().begin(), p.gamma.value().end(), 0.0);
    p.beta.value() = {1.5, -2.5};
    Rng rng(6);
    Tensor x = random_tensor({2, 2, 2}, rng);
    Tensor y = batch_norm(x, p);
    for (int i = 0; i < 4; ++i) {
        CHECK(y.value()[i] == doctest::Approx(1.5));
        CHECK(y.value()[4 + i] == doctest::Approx(-2.5));
    }
}

TEST_CASE("batch_norm output has zero mean and unit variance per channel") {
    BatchNormParams p = make_batch_norm(3);
    Rng rng(7);
    Tensor x = random_tensor({3, 8, 8}, rng, -20.0, 20.0);
    Tensor y = batch_norm(x, p);
    const int m = 64;
    for (int c = 0; c < 3; ++c) {
        double mu = 0.0;
        for (int i = 0; i < m; ++i) mu += y.value()[c * m + i];
        mu /= m;
        double var = 0.0;
        for (int i = 0; i < m; ++i) var += (y.value()[c * m + i] - mu) * (y.value()[c * m + i] - mu);
        var /= m;
        CHECK(std::abs(mu) <= 1e-9);
        CHECK(std::abs(var - 1.0) <= 1e-6);
    }
}

TEST_CASE("batch_norm eval mode uses running statistics") {
    BatchNormParams p = make_batch_norm(1);
    p.running_mean.value() = {2.0};
    p.running_var.value() = {4.0};
    p.train_mode = false;
    Tensor x({1, 1, 2}, {4.0, 0.0});
    Tensor y = batch_norm(x, p);
    CHECK(y.value()[0] == doctest::Approx((4.0 - 2.0) / std::sqrt(4.0 + p.eps)));
    CHECK(y.value()[1] == doctest::Approx((0.0 - 2.0) / std::sqrt(4.0 + p.eps)));
}

TEST_CASE("batch_norm updates running statistics only when asked") {
    BatchNormParams p = make_batch_norm(1);
    Rng rng(8);
    Tensor x = random_tensor({1, 4, 4}, rng, 1.0, 3.0);
    batch_norm(x, p, false);
    CHECK(p.running_mean.value()[0] == 0.0);
    CHECK(p.running_var.value()[0] == 1.0);
    batch_norm(x, p, true);
    CHECK(p.running_mean.value()[0] != 0.0);
}

TEST_CASE("batch_norm train-mode gradient matches finite differences") {
    Rng rng(9);
    BatchNormParams p = make_batch_norm(2);
    p.gamma.value() = {1.3, 0.8};
    p.beta.value() = {0.2, -0.4};
    Tensor x = random_tensor({2, 3, 3}, rng);
    Tensor probe = random_tensor({2, 3, 3}, rng, 0.1, 1.1);
    auto fx = [&](const Tensor& t) { return sum(mul(batch_norm(t, p), probe)); };
    CHECK(grad_check(fx, x, 1e-5) <= 1e-4);
    auto fg = [&](const Tensor& g) {
        BatchNormParams q = p;
        q.gamma = g;
        return sum(mul(batch_norm(x, q), probe));
    };
    CHECK(grad_check(fg, p.gamma.detached(), 1e-5) <= 1e-4);
}

TEST_CASE("batch_norm is legal at batch size one") {
    BatchNormParams p = make_batch_norm(1);
    Tensor x({1, 1, 1}, 7.0);
    Tensor y = batch_norm(x, p);  // variance 0, saved by eps
    CHECK(y.value()[0] == doctest::Approx(0.0));
}

TEST_CASE("tensors reject non-positive extents") {
    CHECK_THROWS_AS(Tensor({0, 2}), ShapeError);
    CHECK_THROWS_AS(Tensor({-1}), ShapeError);
}

TEST_CASE("elu values and derivative at zero") {
    Tensor x({3}, {0.0, -20.0, 1.0});
    Tensor y = elu(x);
    CHECK(y.value()[0] == 0.0);
    CHECK(y.value()[1] == doctest::Approx(-1.0).epsilon(1e-8));
    CHECK(y.value()[1] > -1.0);
    CHECK(y.value()[2] == 1.0);

    Tensor z({1}, 0.0);
    z.set_requires_grad(true);
    Tape tape;
    tape.backward(sum(elu(z)));
    CHECK(z.grad()[0] == 1.0);  // derivative at exactly 0 is 1
}

TEST_CASE("linear: identity and zero weight matrices") {
    Tensor x({3}, {1, 2, 3});
    Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor zero_b({3}, 0.0);
    CHECK(linear(x, eye, zero_b).value() == x.value());

    Tensor W0({2, 3}, 0.0);
    Tensor b({2}, {5.0, -1.0});
    CHECK(linear(x, W0, b).value() == b.value());
    CHECK_THROWS_AS(linear(x, W0, zero_b), ShapeError);
}

TEST_CASE("linear gradient matches finite differences") {
    Rng rng(10);
    Tensor x = random_tensor({5}, rng);
    Tensor W = random_tensor({3, 5}, rng);
    Tensor b = random_tensor({3}, rng);
    Tensor probe = random_tensor({3}, rng, 0.1, 1.1);
    CHECK(grad_check([&](const Tensor& t) { return sum(mul(linear(t, W, b), probe)); }, x) <= 1e-6);
    CHECK(grad_check([&](const Tensor& w) { return sum(mul(linear(x, w, b), probe)); }, W) <= 1e-6);
    CHECK(grad_check([&](const Tensor& t) { return sum(mul(linear(x, W, t), probe)); }, b) <= 1e-6);
}

TEST_CASE("softmax: uniform logits, shift invariance, closed form") {
    Tensor z({4}, 0.0);
    Tensor u = softmax(z);
    for (double v : u.value()) CHECK(v == doctest::Approx(0.25));

    Rng rng(11);
    Tensor logits = random_tensor({5}, rng, -3.0, 3.0);
    Tensor shifted = add(logits, 17.5);
    Tensor p1 = softmax(logits);
    Tensor p2 = softmax(shifted);
    double total = 0.0;
    for (int i = 0; i < 5; ++i) {
        CHECK(std::abs(p1.value()[i] - p2.value()[i]) <= 1e-12);
        CHECK(p1.value()[i] > 0.0);
        total += p1.value()[i];
    }
    CHECK(std::abs(total - 1.0) <= 1e-12);

    Tensor two({2}, {1.0, 2.0});
    Tensor p = softmax(two);
    double e = std::exp(1.0);
    CHECK(p.value()[0] == doctest::Approx(1.0 / (1.0 + e)).epsilon(1e-12));
    CHECK(p.value()[1] == doctest::Approx(e / (1.0 + e)).epsilon(1e-12));
}

TEST_CASE("softmax and log_softmax gradients match finite differences") {
    Rng rng(12);
    Tensor logits = random_tensor({6}, rng, -2.0, 2.0);
    Tensor probe = random_tensor({6}, rng, 0.1, 1.1);
    CHECK(grad_check([&](const Tensor& t) { return sum(mul(softmax(t), probe)); }, logits) <= 1e-6);
    CHECK(grad_check([&](const Tensor& t) { return sum(mul(log_softmax(t), probe)); }, logits) <=
          1e-6);
}

TEST_CASE("lstm_step with all-zero parameters") {
    Rng rng(13);
    LstmParams p = make_lstm(3, 4, rng);
    std::fill(p.W.value().begin(), p.W.value().end(), 0.0);
    std::fill(p.b.value().begin(), p.b.value().end(), 0.0);
    Tensor x({3}, 0.5);

    LstmState z = lstm_zero_state(4);
    LstmState s1 = lstm_step(x, z, p);
    for (double v : s1.c.value()) CHECK(v == doctest::Approx(0.0));
    for (double v : s1.h.value()) CHECK(v == doctest::Approx(0.0));

    LstmState withc{Tensor({4}, 0.0), Tensor({4}, {1.0, -2.0, 0.5, 3.0})};
    LstmState s2 = lstm_step(x, withc, p);
    for (int i = 0; i < 4; ++i) {
        double v = withc.c.value()[i];
        CHECK(s2.c.value()[i] == doctest::Approx(0.5 * v));
        CHECK(s2.h.value()[i] == doctest::Approx(0.5 * std::tanh(0.5 * v)));
    }
}

TEST_CASE("lstm_step gradient wrt all parameters matches finite differences") {
    Rng rng(14);
    LstmParams p = make_lstm(3, 4, rng);
    Tensor x = random_tensor({3}, rng);
    LstmState s0{random_tensor({4}, rng), random_tensor({4}, rng)};
    Tensor probe_h = random_tensor({4}, rng, 0.1, 1.1);
    Tensor probe_c = random_tensor({4}, rng, 0.1, 1.1);

    auto loss_for = [&](const LstmParams& q) {
        LstmState s1 = lstm_step(x, s0, q);
        return add(sum(mul(s1.h, probe_h)), sum(mul(s1.c, probe_c)));
    };
    auto fW = [&](const Tensor& w) {
        LstmParams q = p;
        q.W = w;
        return loss_for(q);
    };
    CHECK(grad_check(fW, p.W.detached(), 1e-5) <= 1e-4);
    auto fb = [&](const Tensor& b) {
        LstmParams q = p;
        q.b = b;
        return loss_for(q);
    };
    CHECK(grad_check(fb, p.b.detached(), 1e-5) <= 1e-4);
    auto fx = [&](const Tensor& t) { return sum(mul(lstm_step(t, s0, p).h, probe_h)); };
    CHECK(grad_check(fx, x, 1e-5) <= 1e-4);
}
