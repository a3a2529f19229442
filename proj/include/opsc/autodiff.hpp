// opsc: opcode-sequence smart contract classifier
// Copyright 2026 The opsc Authors.
// Licensed under the Apache License, Version 2.0.

#pragma once

// Reverse-mode differentiation over dense row-major tensors.
//
// A Tape records every operation of one forward pass. Var is a handle into
// the tape. Operations are free functions taking Vars; each records its own
// backward rule. Tensors are at most rank 2 as far as the operations are
// concerned; higher ranks are viewed as (product of leading dims) x last dim.
//
// Only float and double are instantiated.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace opsc::ad
{
using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);

template <typename T>
class Tensor
{
public:
    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0));
    Tensor(Shape shape, std::vector<T> values);

    static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }
    static Tensor matrix(std::size_t rows, std::size_t cols, T fill = T(0))
    {
        return Tensor(Shape{rows, cols}, fill);
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    /// Matrix view: rank 0 is 1x1, rank 1 is 1xn, rank k>2 folds leading dims.
    std::size_t rows() const noexcept;
    std::size_t cols() const noexcept;

    T* data() noexcept { return values_.data(); }
    const T* data() const noexcept { return values_.data(); }
    std::span<T> values() noexcept { return values_; }
    std::span<const T> values() const noexcept { return values_; }
    std::vector<T>& storage() noexcept { return values_; }
    const std::vector<T>& storage() const noexcept { return values_; }

    T& operator[](std::size_t i) noexcept { return values_[i]; }
    const T& operator[](std::size_t i) const noexcept { return values_[i]; }
    T& at(std::size_t r, std::size_t c) noexcept { return values_[r * cols() + c]; }
    const T& at(std::size_t r, std::size_t c) const noexcept { return values_[r * cols() + c]; }

    T item() const;
    void fill(T v);
    bool same_shape(const Tensor& other) const noexcept
    {
        return shape_ == other.shape_ && values_.size() == other.values_.size();
    }

    template <typename U>
    Tensor<U> cast() const
    {
        return Tensor<U>(shape_, std::vector<U>(values_.begin(), values_.end()));
    }

    bool operator==(const Tensor& other) const = default;

private:
    Shape shape_;
    std::vector<T> values_;
};

/// A trainable tensor. layer_group selects its learning rate; frozen
/// parameters take no gradient and are never updated.
template <typename T>
struct Parameter
{
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    std::size_t layer_group = 0;
    bool frozen = false;

    Parameter() = default;
    Parameter(std::string name_, Tensor<T> value_, std::size_t group = 0)
        : name(std::move(name_)), value(std::move(value_)), grad(value.shape()), layer_group(group)
    {
    }

    void zero_grad() { grad = Tensor<T>(value.shape()); }
};

template <typename T>
class Tape;

template <typename T>
class Var
{
public:
    Var() = default;
    Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

    const Tensor<T>& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t id() const noexcept { return id_; }
    Tape<T>& tape() const noexcept { return *tape_; }
    bool valid() const noexcept { return tape_ != nullptr; }
    bool requires_grad() const;

private:
    Tape<T>* tape_ = nullptr;
    std::size_t id_ = 0;
};

template <typename T>
class Tape
{
public:
    /// Receives the gradient flowing into the node's output.
    using BackwardFn = std::function<void(Tape&, const Tensor<T>&)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var<T> constant(Tensor<T> value);
    /// Leaf whose gradient is kept on the tape (see grad()).
    Var<T> variable(Tensor<T> value);
    /// Leaf backed by a parameter; gradients accumulate into p.grad. Frozen
    /// parameters enter as constants.
    Var<T> parameter(Parameter<T>& p);

    Var<T> record(Tensor<T> value, bool requires_grad, BackwardFn backward);

    const Tensor<T>& value(std::size_t id) const;
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

    /// Gradient buffer of a node, allocated as zeros on first use.
    Tensor<T>& grad(std::size_t id);
    const Tensor<T>& grad(Var<T> v) { return grad(v.id()); }

    /// Propagate d(loss)/d(node) to every node in reverse recording order.
    /// A tape can be differentiated once.
    void backward(Var<T> loss);

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node
    {
        Tensor<T> value;
        Tensor<T> grad;
        Parameter<T>* param = nullptr;
        BackwardFn backward;
        bool requires_grad = false;
    };

    std::deque<Node> nodes_;
    bool differentiated_ = false;
};

// Primitives. All throw ShapeError naming the operation and both shapes.

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);
/// a * b^T
template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b);
template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> x, T factor);
/// x (n x d) plus a length-d bias on every row.
template <typename T>
Var<T> add_bias(Var<T> x, Var<T> bias);
template <typename T>
Var<T> sigmoid(Var<T> x);
template <typename T>
Var<T> tanh(Var<T> x);
template <typename T>
Var<T> relu(Var<T> x);
/// axis 1 normalizes each row, axis 0 each column.
template <typename T>
Var<T> log_softmax(Var<T> x, int axis = 1);
/// Rows of matrix selected by ids; result is ids.size() x cols.
template <typename T>
Var<T> embedding_lookup(Var<T> matrix, std::span<const std::int32_t> ids);
/// axis 0 stacks rows, axis 1 joins columns.
template <typename T>
Var<T> concat(std::span<const Var<T>> parts, int axis);
template <typename T>
Var<T> slice_rows(Var<T> x, std::size_t begin, std::size_t count);
template <typename T>
Var<T> slice_cols(Var<T> x, std::size_t begin, std::size_t count);
/// x * mask * factor, mask a constant of x's shape.
template <typename T>
Var<T> apply_mask(Var<T> x, const Tensor<T>& mask, T factor);
template <typename T>
Var<T> sum(Var<T> x);
template <typename T>
Var<T> mean(Var<T> x);

/// Running statistics of a batch-normalization layer.
template <typename T>
struct BatchNormStats
{
    Tensor<T> mean;
    Tensor<T> var;
};

/// Normalize each column of x (n x d) then apply gamma and beta. Training
/// uses batch statistics and folds them into stats with the given momentum
/// (unbiased variance); evaluation uses stats as constants.
template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormStats<T>& stats, bool training,
                  T momentum = T(0.1), T eps = T(1e-5));

// Pooling over a sequence of per-step B x d activations; row b covers steps
// [0, lengths[b]). Every length must be in 1..steps.size().
template <typename T>
Var<T> masked_mean_over_time(std::span<const Var<T>> steps, std::span<const std::size_t> lengths);
template <typename T>
Var<T> masked_max_over_time(std::span<const Var<T>> steps, std::span<const std::size_t> lengths);
/// Row b of the step lengths[b]-1.
template <typename T>
Var<T> last_over_time(std::span<const Var<T>> steps, std::span<const std::size_t> lengths);

inline constexpr std::int64_t kNoIgnore = -1;

/// Mean negative log-likelihood of targets under row-wise softmax(logits),
/// skipping rows whose target equals ignore_id.
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::int32_t> targets,
                     std::int64_t ignore_id = kNoIgnore);

/// Softmax of each row, no tape involved.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits);

struct GradCheckResult
{
    double max_rel_error = 0.0;
    std::size_t coordinates = 0;
    std::string worst;  ///< "param[index]" of the worst coordinate
};

/// Compare tape gradients against central differences. loss_fn must rebuild
/// the whole computation on the given tape and be deterministic. When
/// max_coords_per_param is nonzero, that many coordinates are sampled per
/// parameter; otherwise all are checked. Throws NumericalError when a loss
/// is non-finite.
GradCheckResult grad_check(const std::function<Var<double>(Tape<double>&)>& loss_fn,
                           std::span<Parameter<double>* const> params, double eps = 1e-5,
                           std::size_t max_coords_per_param = 0, std::uint64_t seed = 0);

}  // namespace opsc::ad
