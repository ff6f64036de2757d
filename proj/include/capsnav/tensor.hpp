#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "capsnav/errors.hpp"

namespace capsnav {

using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

// One value in the computation graph. Tensors are cheap handles onto
// these; ops allocate a fresh node per result.
struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // sized like value iff requires_grad
    bool requires_grad = false;
};

}  // namespace detail

// Dense row-major tensor of 64-bit reals with optional participation in
// reverse-mode autodiff. Copying a Tensor copies the handle, not the data.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int rank() const { return static_cast<int>(shape().size()); }
    std::int64_t numel() const;

    // Scalar extraction; requires numel() == 1.
    double item() const;

    std::vector<double>& value();
    const std::vector<double>& value() const;

    // Gradient accumulator; only valid when requires_grad() is true.
    std::vector<double>& grad();
    const std::vector<double>& grad() const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool on);
    void zero_grad();

    double at(std::initializer_list<int> idx) const;

    // Value copy that does not participate in any tape.
    Tensor detached() const;

    std::shared_ptr<detail::Node> node() const { return node_; }

  private:
    std::shared_ptr<detail::Node> node_;
};

// Wengert list: ops executed while a Tape is active record a backward
// rule; backward() replays them in reverse. Confine one tape to one
// rollout/update context. Tapes nest; the innermost one records.
class Tape {
  public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active();

    void record(const Tensor& out, std::function<void()> backward_fn);

    // Seeds d(loss)/d(loss) = 1 and replays recorded ops in reverse.
    // Leaf gradients accumulate across repeated calls; intermediate
    // gradients are reset per call.
    void backward(const Tensor& loss);

    std::size_t op_count() const { return steps_.size(); }

  private:
    struct Step {
        std::shared_ptr<detail::Node> out;
        std::function<void()> fn;
    };
    std::vector<Step> steps_;
    Tape* prev_ = nullptr;
};

// Suspends recording on the active tape for the guard's lifetime.
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    Tape* saved_;
};

// Deterministic RNG: mt19937_64 core with fixed value mappings so the
// same seed yields the same stream on every platform.
class Rng {
  public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();
    double uniform01();                      // [0, 1)
    double uniform(double lo, double hi);    // [lo, hi)
    double normal();                         // Box-Muller, unit variance
    int uniform_int(int n);                  // {0, ..., n-1}
    int categorical(const std::vector<double>& probs);

    static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream);

  private:
    struct Impl;
    std::shared_ptr<Impl> impl_;
};

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, double b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, double b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, double b);
Tensor scale(const Tensor& a, double s);  // alias of mul(a, s)
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);

// ---- linear algebra ----
// a: [m x k], b: [k x n] -> [m x n]. Backward: dA = g * B^T, dB = A^T * g.
Tensor matmul(const Tensor& a, const Tensor& b);

// ---- reductions ----
Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, int axis);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, int axis);
// Euclidean norm of the whole tensor; gradient at the zero vector is
// defined as zero (subgradient choice, keeps squash differentiable at 0).
Tensor norm2(const Tensor& a);

// ---- structure ----
Tensor reshape(const Tensor& a, Shape new_shape);
Tensor concat(const Tensor& a, const Tensor& b);        // rank-1
Tensor slice(const Tensor& a, int begin, int end);      // rank-1, [begin, end)
Tensor pick(const Tensor& a, int index);                // rank-1 -> scalar
// out.value[i] = a.value[index_map[i]]; backward scatter-adds.
Tensor gather(const Tensor& a, std::vector<std::int64_t> index_map, Shape out_shape);

// Max over elements of |analytic - numeric| / max(1, |analytic|), where
// numeric is the central difference (f(x+eps e_i) - f(x-eps e_i)) / 2eps.
// f must be a pure scalar-valued function of x.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double eps = 1e-5);

}  // namespace capsnav
