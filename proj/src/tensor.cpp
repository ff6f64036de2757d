#include "capsnav/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "kernels.hpp"

namespace capsnav {

namespace {

thread_local Tape* g_active_tape = nullptr;

bool taping(std::initializer_list<const Tensor*> inputs) {
    if (g_active_tape == nullptr) return false;
    for (const Tensor* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

void check_defined(const Tensor& t, const char* who) {
    if (!t.defined()) throw ContractError(std::string(who) + ": undefined tensor");
}

enum class Broadcast { kEqual, kScalarB, kScalarA };

Broadcast broadcast_mode(const Tensor& a, const Tensor& b, const char* who) {
    if (a.shape() == b.shape()) return Broadcast::kEqual;
    if (b.numel() == 1) return Broadcast::kScalarB;
    if (a.numel() == 1) return Broadcast::kScalarA;
    throw ShapeError(std::string(who) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " are not exact-match or scalar-broadcast");
}

}  // namespace

std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
    os << "]";
    return os.str();
}

// ---- Tensor ----

Tensor::Tensor(Shape shape, double fill) {
    for (int d : shape)
        if (d <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    node_ = std::make_shared<detail::Node>();
    node_->shape = std::move(shape);
    node_->value.assign(static_cast<std::size_t>(shape_numel(node_->shape)), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) {
    for (int d : shape)
        if (d <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    if (static_cast<std::int64_t>(data.size()) != shape_numel(shape))
        throw ShapeError("data size " + std::to_string(data.size()) + " does not match shape " +
                         shape_str(shape));
    node_ = std::make_shared<detail::Node>();
    node_->shape = std::move(shape);
    node_->value = std::move(data);
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

const Shape& Tensor::shape() const {
    check_defined(*this, "shape");
    return node_->shape;
}

std::int64_t Tensor::numel() const { return shape_numel(shape()); }

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item(): tensor has " + std::to_string(numel()) + " elements");
    return node_->value[0];
}

std::vector<double>& Tensor::value() {
    check_defined(*this, "value");
    return node_->value;
}

const std::vector<double>& Tensor::value() const {
    check_defined(*this, "value");
    return node_->value;
}

std::vector<double>& Tensor::grad() {
    check_defined(*this, "grad");
    if (!node_->requires_grad) throw ContractError("grad(): tensor does not require grad");
    return node_->grad;
}

const std::vector<double>& Tensor::grad() const {
    return const_cast<Tensor*>(this)->grad();
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
    check_defined(*this, "set_requires_grad");
    node_->requires_grad = on;
    if (on)
        node_->grad.assign(node_->value.size(), 0.0);
    else
        node_->grad.clear();
    return *this;
}

void Tensor::zero_grad() {
    if (requires_grad()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

double Tensor::at(std::initializer_list<int> idx) const {
    const Shape& s = shape();
    if (idx.size() != s.size()) throw ShapeError("at(): rank mismatch");
    std::int64_t off = 0;
    int k = 0;
    for (int i : idx) {
        if (i < 0 || i >= s[k]) throw ShapeError("at(): index out of range");
        off = off * s[k] + i;
        ++k;
    }
    return node_->value[static_cast<std::size_t>(off)];
}

Tensor Tensor::detached() const {
    check_defined(*this, "detached");
    return Tensor(node_->shape, node_->value);
}

// ---- Tape ----

Tape::Tape() {
    prev_ = g_active_tape;
    g_active_tape = this;
}

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(const Tensor& out, std::function<void()> backward_fn) {
    steps_.push_back(Step{out.node(), std::move(backward_fn)});
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw ContractError("backward: loss must be a scalar");
    if (!loss.requires_grad())
        throw ContractError("backward: loss does not participate in the tape");
    for (Step& s : steps_) std::fill(s.out->grad.begin(), s.out->grad.end(), 0.0);
    loss.node()->grad[0] += 1.0;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) it->fn();
}

NoGradGuard::NoGradGuard() : saved_(g_active_tape) { g_active_tape = nullptr; }
NoGradGuard::~NoGradGuard() { g_active_tape = saved_; }

// ---- Rng ----

struct Rng::Impl {
    std::mt19937_64 engine;
};

Rng::Rng(std::uint64_t seed) : impl_(std::make_shared<Impl>()) { impl_->engine.seed(seed); }

std::uint64_t Rng::next_u64() { return impl_->engine(); }

double Rng::uniform01() {
    // 53 mantissa bits; [0, 1). std::uniform_real_distribution is
    // implementation-defined, this mapping is not.
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

double Rng::normal() {
    double u1 = 1.0 - uniform01();  // (0, 1]
    double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

int Rng::uniform_int(int n) {
    if (n <= 0) throw ContractError("uniform_int: n must be positive");
    return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n));
}

int Rng::categorical(const std::vector<double>& probs) {
    if (probs.empty()) throw ContractError("categorical: empty distribution");
    double total = 0.0;
    for (double p : probs) total += p;
    double r = uniform01() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (r < acc) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size()) - 1;
}

std::uint64_t Rng::mix(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
}

// ---- op helpers ----

namespace {

Tensor make_out(Shape shape) { return Tensor(std::move(shape)); }

// Registers the backward rule and flips requires_grad on the output.
void record_op(Tensor& out, std::initializer_list<const Tensor*> inputs,
               std::function<void()> fn) {
    if (!taping(inputs)) return;
    out.set_requires_grad(true);
    g_active_tape->record(out, std::move(fn));
}

void add_into(std::vector<double>& dst, const std::vector<double>& src) {
    kernels::axpy(dst.size(), 1.0, src.data(), dst.data());
}

}  // namespace

// ---- elementwise ----

namespace {

template <typename Fwd, typename Bwd>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
    check_defined(a, name);
    check_defined(b, name);
    Broadcast mode = broadcast_mode(a, b, name);
    const Tensor& big = (mode == Broadcast::kScalarA) ? b : a;
    Tensor out = make_out(big.shape());
    const auto& av = a.value();
    const auto& bv = b.value();
    auto& ov = out.value();
    switch (mode) {
        case Broadcast::kEqual:
            for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(av[i], bv[i]);
            break;
        case Broadcast::kScalarB:
            for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(av[i], bv[0]);
            break;
        case Broadcast::kScalarA:
            for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(av[0], bv[i]);
            break;
    }
    record_op(out, {&a, &b}, [an = a.node(), bn = b.node(), on = out.node(), mode, bwd] {
        bwd(*an, *bn, *on, mode);
    });
    return out;
}

double scalar_grad_sum(const std::vector<double>& g) {
    double s = 0.0;
    for (double v : g) s += v;
    return s;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        "add", a, b, [](double x, double y) { return x + y; },
        [](detail::Node& an, detail::Node& bn, detail::Node& on, Broadcast mode) {
            if (an.requires_grad) {
                if (mode == Broadcast::kScalarA)
                    an.grad[0] += scalar_grad_sum(on.grad);
                else
                    add_into(an.grad, on.grad);
            }
            if (bn.requires_grad) {
                if (mode == Broadcast::kScalarB)
                    bn.grad[0] += scalar_grad_sum(on.grad);
                else
                    add_into(bn.grad, on.grad);
            }
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](detail::Node& an, detail::Node& bn, detail::Node& on, Broadcast mode) {
            if (an.requires_grad) {
                if (mode == Broadcast::kScalarA)
                    an.grad[0] += scalar_grad_sum(on.grad);
                else
                    add_into(an.grad, on.grad);
            }
            if (bn.requires_grad) {
                if (mode == Broadcast::kScalarB)
                    bn.grad[0] -= scalar_grad_sum(on.grad);
                else
                    kernels::axpy(bn.grad.size(), -1.0, on.grad.data(), bn.grad.data());
            }
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](detail::Node& an, detail::Node& bn, detail::Node& on, Broadcast mode) {
            const auto& g = on.grad;
            if (an.requires_grad) {
                switch (mode) {
                    case Broadcast::kEqual:
                        for (std::size_t i = 0; i < g.size(); ++i) an.grad[i] += g[i] * bn.value[i];
                        break;
                    case Broadcast::kScalarB:
                        kernels::axpy(g.size(), bn.value[0], g.data(), an.grad.data());
                        break;
                    case Broadcast::kScalarA: {
                        double s = 0.0;
                        for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * bn.value[i];
                        an.grad[0] += s;
                        break;
                    }
                }
            }
            if (bn.requires_grad) {
                switch (mode) {
                    case Broadcast::kEqual:
                        for (std::size_t i = 0; i < g.size(); ++i) bn.grad[i] += g[i] * an.value[i];
                        break;
                    case Broadcast::kScalarA:
                        kernels::axpy(g.size(), an.value[0], g.data(), bn.grad.data());
                        break;
                    case Broadcast::kScalarB: {
                        double s = 0.0;
                        for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * an.value[i];
                        bn.grad[0] += s;
                        break;
                    }
                }
            }
        });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(
        "div", a, b, [](double x, double y) { return x / y; },
        [](detail::Node& an, detail::Node& bn, detail::Node& on, Broadcast mode) {
            const auto& g = on.grad;
            auto aval = [&](std::size_t i) {
                return mode == Broadcast::kScalarA ? an.value[0] : an.value[i];
            };
            auto bval = [&](std::size_t i) {
                return mode == Broadcast::kScalarB ? bn.value[0] : bn.value[i];
            };
            if (an.requires_grad) {
                for (std::size_t i = 0; i < g.size(); ++i) {
                    double d = g[i] / bval(i);
                    if (mode == Broadcast::kScalarA)
                        an.grad[0] += d;
                    else
                        an.grad[i] += d;
                }
            }
            if (bn.requires_grad) {
                for (std::size_t i = 0; i < g.size(); ++i) {
                    double bi = bval(i);
                    double d = -g[i] * aval(i) / (bi * bi);
                    if (mode == Broadcast::kScalarB)
                        bn.grad[0] += d;
                    else
                        bn.grad[i] += d;
                }
            }
        });
}

Tensor add(const Tensor& a, double b) { return add(a, Tensor::scalar(b)); }
Tensor sub(const Tensor& a, double b) { return sub(a, Tensor::scalar(b)); }
Tensor mul(const Tensor& a, double b) { return mul(a, Tensor::scalar(b)); }
Tensor div(const Tensor& a, double b) { return div(a, Tensor::scalar(b)); }
Tensor scale(const Tensor& a, double s) { return mul(a, s); }
Tensor neg(const Tensor& a) { return mul(a, -1.0); }

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(const char* name, const Tensor& a, Fwd fwd, Bwd bwd) {
    check_defined(a, name);
    Tensor out = make_out(a.shape());
    const auto& av = a.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(av[i]);
    record_op(out, {&a}, [an = a.node(), on = out.node(), bwd] {
        if (!an->requires_grad) return;
        for (std::size_t i = 0; i < on->grad.size(); ++i)
            an->grad[i] += on->grad[i] * bwd(an->value[i], on->value[i]);
    });
    return out;
}

}  // namespace

Tensor exp(const Tensor& a) {
    return unary_op(
        "exp", a, [](double x) { return std::exp(x); },
        [](double, double y) { return y; });
}

Tensor tanh(const Tensor& a) {
    return unary_op(
        "tanh", a, [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
    return unary_op(
        "sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
        [](double, double y) { return y * (1.0 - y); });
}

// ---- matmul ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_defined(a, "matmul");
    check_defined(b, "matmul");
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError("matmul: expects rank-2 tensors, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const int m = a.shape()[0], k = a.shape()[1];
    const int k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2)
        throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    Tensor out = make_out({m, n});
    kernels::dgemm(false, false, m, n, k, 1.0, a.value().data(), k, b.value().data(), n, 0.0,
                   out.value().data(), n);
    record_op(out, {&a, &b}, [an = a.node(), bn = b.node(), on = out.node(), m, n, k] {
        if (an->requires_grad)  // dA += g * B^T
            kernels::dgemm(false, true, m, k, n, 1.0, on->grad.data(), n, bn->value.data(), n, 1.0,
                           an->grad.data(), k);
        if (bn->requires_grad)  // dB += A^T * g
            kernels::dgemm(true, false, k, n, m, 1.0, an->value.data(), k, on->grad.data(), n, 1.0,
                           bn->grad.data(), n);
    });
    return out;
}

// ---- reductions ----

Tensor sum(const Tensor& a) {
    check_defined(a, "sum");
    double s = 0.0;
    for (double v : a.value()) s += v;
    Tensor out = Tensor::scalar(s);
    record_op(out, {&a}, [an = a.node(), on = out.node()] {
        if (!an->requires_grad) return;
        double g = on->grad[0];
        for (double& d : an->grad) d += g;
    });
    return out;
}

namespace {

struct AxisSplit {
    std::int64_t pre, n, post;
    Shape out_shape;
};

AxisSplit split_axis(const Tensor& a, int axis, const char* who) {
    const Shape& s = a.shape();
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        throw ShapeError(std::string(who) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(s));
    AxisSplit sp{1, s[axis], 1, {}};
    for (int i = 0; i < axis; ++i) sp.pre *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) sp.post *= s[i];
    for (int i = 0; i < static_cast<int>(s.size()); ++i)
        if (i != axis) sp.out_shape.push_back(s[i]);
    if (sp.out_shape.empty()) sp.out_shape.push_back(1);
    return sp;
}

}  // namespace

Tensor sum(const Tensor& a, int axis) {
    check_defined(a, "sum");
    AxisSplit sp = split_axis(a, axis, "sum");
    Tensor out = make_out(sp.out_shape);
    const auto& av = a.value();
    auto& ov = out.value();
    std::fill(ov.begin(), ov.end(), 0.0);
    for (std::int64_t p = 0; p < sp.pre; ++p)
        for (std::int64_t i = 0; i < sp.n; ++i)
            for (std::int64_t q = 0; q < sp.post; ++q)
                ov[p * sp.post + q] += av[(p * sp.n + i) * sp.post + q];
    record_op(out, {&a}, [an = a.node(), on = out.node(), sp] {
        if (!an->requires_grad) return;
        for (std::int64_t p = 0; p < sp.pre; ++p)
            for (std::int64_t i = 0; i < sp.n; ++i)
                for (std::int64_t q = 0; q < sp.post; ++q)
                    an->grad[(p * sp.n + i) * sp.post + q] += on->grad[p * sp.post + q];
    });
    return out;
}

Tensor mean(const Tensor& a) { return div(sum(a), static_cast<double>(a.numel())); }

Tensor mean(const Tensor& a, int axis) {
    AxisSplit sp = split_axis(a, axis, "mean");
    return div(sum(a, axis), static_cast<double>(sp.n));
}

Tensor norm2(const Tensor& a) {
    check_defined(a, "norm2");
    double s = 0.0;
    for (double v : a.value()) s += v * v;
    Tensor out = Tensor::scalar(std::sqrt(s));
    record_op(out, {&a}, [an = a.node(), on = out.node()] {
        if (!an->requires_grad) return;
        double nrm = on->value[0];
        if (nrm == 0.0) return;  // subgradient at the zero vector
        double g = on->grad[0] / nrm;
        for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g * an->value[i];
    });
    return out;
}

// ---- structure ----

Tensor reshape(const Tensor& a, Shape new_shape) {
    check_defined(a, "reshape");
    if (shape_numel(new_shape) != a.numel())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(new_shape));
    Tensor out(new_shape, a.value());
    record_op(out, {&a}, [an = a.node(), on = out.node()] {
        if (an->requires_grad) add_into(an->grad, on->grad);
    });
    return out;
}

Tensor concat(const Tensor& a, const Tensor& b) {
    check_defined(a, "concat");
    check_defined(b, "concat");
    if (a.rank() != 1 || b.rank() != 1) throw ShapeError("concat: expects rank-1 tensors");
    const int na = a.shape()[0], nb = b.shape()[0];
    Tensor out = make_out({na + nb});
    auto& ov = out.value();
    std::copy(a.value().begin(), a.value().end(), ov.begin());
    std::copy(b.value().begin(), b.value().end(), ov.begin() + na);
    record_op(out, {&a, &b}, [an = a.node(), bn = b.node(), on = out.node(), na, nb] {
        if (an->requires_grad)
            kernels::axpy(static_cast<std::size_t>(na), 1.0, on->grad.data(), an->grad.data());
        if (bn->requires_grad)
            kernels::axpy(static_cast<std::size_t>(nb), 1.0, on->grad.data() + na, bn->grad.data());
    });
    return out;
}

Tensor slice(const Tensor& a, int begin, int end) {
    check_defined(a, "slice");
    if (a.rank() != 1) throw ShapeError("slice: expects a rank-1 tensor");
    if (begin < 0 || end > a.shape()[0] || begin >= end)
        throw ShapeError("slice: invalid range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") for " + shape_str(a.shape()));
    Tensor out = make_out({end - begin});
    std::copy(a.value().begin() + begin, a.value().begin() + end, out.value().begin());
    record_op(out, {&a}, [an = a.node(), on = out.node(), begin] {
        if (an->requires_grad)
            kernels::axpy(on->grad.size(), 1.0, on->grad.data(), an->grad.data() + begin);
    });
    return out;
}

Tensor pick(const Tensor& a, int index) {
    check_defined(a, "pick");
    if (a.rank() != 1) throw ShapeError("pick: expects a rank-1 tensor");
    if (index < 0 || index >= a.shape()[0]) throw ShapeError("pick: index out of range");
    Tensor out = Tensor::scalar(a.value()[index]);
    record_op(out, {&a}, [an = a.node(), on = out.node(), index] {
        if (an->requires_grad) an->grad[index] += on->grad[0];
    });
    return out;
}

Tensor gather(const Tensor& a, std::vector<std::int64_t> index_map, Shape out_shape) {
    check_defined(a, "gather");
    if (static_cast<std::int64_t>(index_map.size()) != shape_numel(out_shape))
        throw ShapeError("gather: index map size does not match output shape");
    const std::int64_t n = a.numel();
    for (std::int64_t idx : index_map)
        if (idx < 0 || idx >= n) throw ShapeError("gather: index out of range");
    Tensor out = make_out(std::move(out_shape));
    auto& ov = out.value();
    const auto& av = a.value();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[static_cast<std::size_t>(index_map[i])];
    record_op(out, {&a}, [an = a.node(), on = out.node(), map = std::move(index_map)] {
        if (!an->requires_grad) return;
        for (std::size_t i = 0; i < on->grad.size(); ++i)
            an->grad[static_cast<std::size_t>(map[i])] += on->grad[i];
    });
    return out;
}

// ---- gradient check ----

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
    Tensor xg = x.detached();
    xg.set_requires_grad(true);
    std::vector<double> analytic;
    {
        Tape tape;
        Tensor loss = f(xg);
        if (loss.numel() != 1) throw ContractError("grad_check: f must be scalar-valued");
        tape.backward(loss);
        analytic = xg.grad();
    }
    NoGradGuard no_grad;
    Tensor xp = x.detached();
    double max_err = 0.0;
    for (std::size_t i = 0; i < xp.value().size(); ++i) {
        double orig = xp.value()[i];
        xp.value()[i] = orig + eps;
        double fp = f(xp).item();
        xp.value()[i] = orig - eps;
        double fm = f(xp).item();
        xp.value()[i] = orig;
        double numeric = (fp - fm) / (2.0 * eps);
        double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
        max_err = std::max(max_err, err);
    }
    return max_err;
}

}  // namespace capsnav
