// opsc: opcode-sequence smart contract classifier
// Copyright 2026 The opsc Authors.
// Licensed under the Apache License, Version 2.0.

#include "opsc/autodiff.hpp"

#include "opsc/error.hpp"
#include "opsc/rng.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace opsc::ad
{
namespace
{
template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
MatMap<T> as_mat(Tensor<T>& t)
{
    return MatMap<T>(t.data(), static_cast<Eigen::Index>(t.rows()),
                     static_cast<Eigen::Index>(t.cols()));
}

template <typename T>
ConstMatMap<T> as_mat(const Tensor<T>& t)
{
    return ConstMatMap<T>(t.data(), static_cast<Eigen::Index>(t.rows()),
                          static_cast<Eigen::Index>(t.cols()));
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b)
{
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                     shape_str(b));
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const std::string& why)
{
    throw ShapeError(std::string(op) + ": " + why + " (shape " + shape_str(a) + ")");
}

template <typename T>
void check_same_tape(const char* op, Var<T> a, Var<T> b)
{
    if (&a.tape() != &b.tape())
        throw ShapeError(std::string(op) + ": operands belong to different tapes");
}

template <typename T>
void require_matrix(const char* op, const Tensor<T>& t)
{
    if (t.rank() > 2)
        shape_fail(op, t.shape(), "expected rank <= 2");
}

}  // namespace

std::string shape_str(const Shape& shape)
{
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i)
    {
        if (i)
            s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// ---------------------------------------------------------------- Tensor

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill)
    : shape_(std::move(shape)),
      values_(std::accumulate(shape_.begin(), shape_.end(), std::size_t{1}, std::multiplies<>()),
              fill)
{
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values)
    : shape_(std::move(shape)), values_(std::move(values))
{
    const auto n =
        std::accumulate(shape_.begin(), shape_.end(), std::size_t{1}, std::multiplies<>());
    if (n != values_.size())
        throw ShapeError("tensor of shape " + shape_str(shape_) + " needs " + std::to_string(n) +
                         " values, got " + std::to_string(values_.size()));
}

template <typename T>
std::size_t Tensor<T>::rows() const noexcept
{
    if (shape_.size() < 2)
        return 1;
    std::size_t r = 1;
    for (std::size_t i = 0; i + 1 < shape_.size(); ++i)
        r *= shape_[i];
    return r;
}

template <typename T>
std::size_t Tensor<T>::cols() const noexcept
{
    return shape_.empty() ? 1 : shape_.back();
}

template <typename T>
T Tensor<T>::item() const
{
    if (values_.size() != 1)
        throw ShapeError("item() on tensor of shape " + shape_str(shape_));
    return values_[0];
}

template <typename T>
void Tensor<T>::fill(T v)
{
    std::fill(values_.begin(), values_.end(), v);
}

// ---------------------------------------------------------------- Tape

template <typename T>
const Tensor<T>& Var<T>::value() const
{
    return tape_->value(id_);
}

template <typename T>
bool Var<T>::requires_grad() const
{
    return tape_->requires_grad(id_);
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value)
{
    return record(std::move(value), false, nullptr);
}

template <typename T>
Var<T> Tape<T>::variable(Tensor<T> value)
{
    return record(std::move(value), true, nullptr);
}

template <typename T>
Var<T> Tape<T>::parameter(Parameter<T>& p)
{
    Node n;
    n.param = &p;
    n.requires_grad = !p.frozen;
    if (n.requires_grad && !p.grad.same_shape(p.value))
        p.zero_grad();
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, bool requires_grad, BackwardFn backward)
{
    if (differentiated_)
        throw NumericalError("tape already differentiated; start a new forward pass");
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad)
        n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
const Tensor<T>& Tape<T>::value(std::size_t id) const
{
    const auto& n = nodes_[id];
    return n.param ? n.param->value : n.value;
}

template <typename T>
Tensor<T>& Tape<T>::grad(std::size_t id)
{
    auto& n = nodes_[id];
    if (n.param)
        return n.param->grad;
    if (!n.grad.same_shape(n.value))
        n.grad = Tensor<T>(n.value.shape());
    return n.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> loss)
{
    if (&loss.tape() != this)
        throw NumericalError("backward: loss belongs to a different tape");
    if (differentiated_)
        throw NumericalError("backward called twice on one tape; re-run the forward pass");
    if (value(loss.id()).size() != 1)
        throw ShapeError("backward: loss must be a scalar, got shape " +
                         shape_str(value(loss.id()).shape()));
    differentiated_ = true;
    if (!nodes_[loss.id()].requires_grad)
        return;

    grad(loss.id())[0] += T(1);
    for (std::size_t i = loss.id() + 1; i-- > 0;)
    {
        auto& n = nodes_[i];
        if (!n.requires_grad || !n.backward || !n.grad.same_shape(n.value))
            continue;
        n.backward(*this, n.grad);
        // Intermediate gradients are no longer needed.
        n.grad = Tensor<T>();
    }
}

// ---------------------------------------------------------------- primitives

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b)
{
    check_same_tape("matmul", a, b);
    const auto& av = a.value();
    const auto& bv = b.value();
    require_matrix("matmul", av);
    require_matrix("matmul", bv);
    if (av.cols() != bv.rows())
        shape_fail("matmul", av.shape(), bv.shape());

    Tensor<T> out = Tensor<T>::matrix(av.rows(), bv.cols());
    as_mat(out).noalias() = as_mat(av) * as_mat(bv);

    auto& tape = a.tape();
    const auto ai = a.id(), bi = b.id();
    return tape.record(std::move(out), a.requires_grad() || b.requires_grad(),
                       [ai, bi](Tape<T>& t, const Tensor<T>& g) {
                           if (t.requires_grad(ai))
                               as_mat(t.grad(ai)).noalias() +=
                                   as_mat(g) * as_mat(t.value(bi)).transpose();
                           if (t.requires_grad(bi))
                               as_mat(t.grad(bi)).noalias() +=
                                   as_mat(t.value(ai)).transpose() * as_mat(g);
                       });
}

template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b)
{
    check_same_tape("matmul_nt", a, b);
    const auto& av = a.value();
    const auto& bv = b.value();
    require_matrix("matmul_nt", av);
    require_matrix("matmul_nt", bv);
    if (av.cols() != bv.cols())
        shape_fail("matmul_nt", av.shape(), bv.shape());

    Tensor<T> out = Tensor<T>::matrix(av.rows(), bv.rows());
    as_mat(out).noalias() = as_mat(av) * as_mat(bv).transpose();

    auto& tape = a.tape();
    const auto ai = a.id(), bi = b.id();
    return tape.record(std::move(out), a.requires_grad() || b.requires_grad(),
                       [ai, bi](Tape<T>& t, const Tensor<T>& g) {
                           if (t.requires_grad(ai))
                               as_mat(t.grad(ai)).noalias() += as_mat(g) * as_mat(t.value(bi));
                           if (t.requires_grad(bi))
                               as_mat(t.grad(bi)).noalias() +=
                                   as_mat(g).transpose() * as_mat(t.value(ai));
                       });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b)
{
    check_same_tape("add", a, b);
    const auto& av = a.value();
    const auto& bv = b.value();
    if (!av.same_shape(bv))
        shape_fail("add", av.shape(), bv.shape());
    Tensor<T> out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = av[i] + bv[i];
    const auto ai = a.id(), bi = b.id();
    return a.tape().record(std::move(out), a.requires_grad() || b.requires_grad(),
                           [ai, bi](Tape<T>& t, const Tensor<T>& g) {
                               for (auto id : {ai, bi})
                               {
                                   if (!t.requires_grad(id))
                                       continue;
                                   auto& dst = t.grad(id);
                                   for (std::size_t i = 0; i < g.size(); ++i)
                                       dst[i] += g[i];
                               }
                           });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b)
{
    check_same_tape("sub", a, b);
    const auto& av = a.value();
    const auto& bv = b.value();
    if (!av.same_shape(bv))
        shape_fail("sub", av.shape(), bv.shape());
    Tensor<T> out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = av[i] - bv[i];
    const auto ai = a.id(), bi = b.id();
    return a.tape().record(std::move(out), a.requires_grad() || b.requires_grad(),
                           [ai, bi](Tape<T>& t, const Tensor<T>& g) {
                               if (t.requires_grad(ai))
                               {
                                   auto& dst = t.grad(ai);
                                   for (std::size_t i = 0; i < g.size(); ++i)
                                       dst[i] += g[i];
                               }
                               if (t.requires_grad(bi))
                               {
                                   auto& dst = t.grad(bi);
                                   for (std::size_t i = 0; i < g.size(); ++i)
                                       dst[i] -= g[i];
                               }
                           });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b)
{
    check_same_tape("mul", a, b);
    const auto& av = a.value();
    const auto& bv = b.value();
    if (!av.same_shape(bv))
        shape_fail("mul", av.shape(), bv.shape());
    Tensor<T> out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = av[i] * bv[i];
    const auto ai = a.id(), bi = b.id();
    return a.tape().record(std::move(out), a.requires_grad() || b.requires_grad(),
                           [ai, bi](Tape<T>& t, const Tensor<T>& g) {
                               const auto& av = t.value(ai);
                               const auto& bv = t.value(bi);
                               if (t.requires_grad(ai))
                               {
                                   auto& dst = t.grad(ai);
                                   for (std::size_t i = 0; i < g.size(); ++i)
                                       dst[i] += g[i] * bv[i];
                               }
                               if (t.requires_grad(bi))
                               {
                                   auto& dst = t.grad(bi);
                                   for (std::size_t i = 0; i < g.size(); ++i)
                                       dst[i] += g[i] * av[i];
                               }
                           });
}

template <typename T>
Var<T> scale(Var<T> x, T factor)
{
    const auto& xv = x.value();
    Tensor<T> out(xv.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = xv[i] * factor;
    const auto xi = x.id();
    return x.tape().record(std::move(out), x.requires_grad(),
                           [xi, factor](Tape<T>& t, const Tensor<T>& g) {
                               auto& dst = t.grad(xi);
                               for (std::size_t i = 0; i < g.size(); ++i)
                                   dst[i] += g[i] * factor;
                           });
}

template <typename T>
Var<T> add_bias(Var<T> x, Var<T> bias)
{
    check_same_tape("add_bias", x, bias);
    const auto& xv = x.value();
    const auto& bv = bias.value();
    require_matrix("add_bias", xv);
    if (bv.size() != xv.cols() || bv.rows() != 1)
        shape_fail("add_bias", xv.shape(), bv.shape());
    Tensor<T> out = xv;
    const std::size_t r = xv.rows(), c = xv.cols();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
            out[i * c + j] += bv[j];
    const auto xi = x.id(), bi = bias.id();
    return x.tape().record(std::move(out), x.requires_grad() || bias.requires_grad(),
                           [xi, bi, r, c](Tape<T>& t, const Tensor<T>& g) {
                               if (t.requires_grad(xi))
                               {
                                   auto& dst = t.grad(xi);
                                   for (std::size_t i = 0; i < g.size(); ++i)
                                       dst[i] += g[i];
                               }
                               if (t.requires_grad(bi))
                               {
                                   auto& dst = t.grad(bi);
                                   for (std::size_t i = 0; i < r; ++i)
                                       for (std::size_t j = 0; j < c; ++j)
                                           dst[j] += g[i * c + j];
                               }
                           });
}

template <typename T>
Var<T> sigmoid(Var<T> x)
{
    const auto& xv = x.value();
    Tensor<T> out(xv.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = T(1) / (T(1) + std::exp(-xv[i]));
    const auto xi = x.id();
    auto& tape = x.tape();
    const auto self = tape.size();
    return tape.record(std::move(out), x.requires_grad(),
                       [xi, self](Tape<T>& t, const Tensor<T>& g) {
                           const auto& y = t.value(self);
                           auto& dst = t.grad(xi);
                           for (std::size_t i = 0; i < g.size(); ++i)
                               dst[i] += g[i] * y[i] * (T(1) - y[i]);
                       });
}

template <typename T>
Var<T> tanh(Var<T> x)
{
    const auto& xv = x.value();
    Tensor<T> out(xv.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = std::tanh(xv[i]);
    const auto xi = x.id();
    auto& tape = x.tape();
    const auto self = tape.size();
    return tape.record(std::move(out), x.requires_grad(),
                       [xi, self](Tape<T>& t, const Tensor<T>& g) {
                           const auto& y = t.value(self);
                           auto& dst = t.grad(xi);
                           for (std::size_t i = 0; i < g.size(); ++i)
                               dst[i] += g[i] * (T(1) - y[i] * y[i]);
                       });
}

template <typename T>
Var<T> relu(Var<T> x)
{
    const auto& xv = x.value();
    Tensor<T> out(xv.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = xv[i] > T(0) ? xv[i] : T(0);
    const auto xi = x.id();
    return x.tape().record(std::move(out), x.requires_grad(),
                           [xi](Tape<T>& t, const Tensor<T>& g) {
                               const auto& xv = t.value(xi);
                               auto& dst = t.grad(xi);
                               for (std::size_t i = 0; i < g.size(); ++i)
                                   if (xv[i] > T(0))
                                       dst[i] += g[i];
                           });
}

template <typename T>
Var<T> log_softmax(Var<T> x, int axis)
{
    const auto& xv = x.value();
    require_matrix("log_softmax", xv);
    if (axis != 0 && axis != 1)
        shape_fail("log_softmax", xv.shape(), "axis must be 0 or 1");
    const std::size_t r = xv.rows(), c = xv.cols();
    // Normalize along `len` elements spaced `stride` apart, `groups` times.
    const std::size_t groups = axis == 1 ? r : c;
    const std::size_t len = axis == 1 ? c : r;
    const std::size_t stride = axis == 1 ? 1 : c;
    const std::size_t group_step = axis == 1 ? c : 1;

    Tensor<T> out(xv.shape());
    for (std::size_t gi = 0; gi < groups; ++gi)
    {
        const std::size_t base = gi * group_step;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t k = 0; k < len; ++k)
            mx = std::max(mx, xv[base + k * stride]);
        T s = 0;
        for (std::size_t k = 0; k < len; ++k)
            s += std::exp(xv[base + k * stride] - mx);
        const T lse = mx + std::log(s);
        for (std::size_t k = 0; k < len; ++k)
            out[base + k * stride] = xv[base + k * stride] - lse;
    }
    const auto xi = x.id();
    auto& tape = x.tape();
    const auto self = tape.size();
    return tape.record(
        std::move(out), x.requires_grad(),
        [xi, self, groups, len, stride, group_step](Tape<T>& t, const Tensor<T>& g) {
            const auto& y = t.value(self);
            auto& dst = t.grad(xi);
            for (std::size_t gi = 0; gi < groups; ++gi)
            {
                const std::size_t base = gi * group_step;
                T gs = 0;
                for (std::size_t k = 0; k < len; ++k)
                    gs += g[base + k * stride];
                for (std::size_t k = 0; k < len; ++k)
                {
                    const auto idx = base + k * stride;
                    dst[idx] += g[idx] - std::exp(y[idx]) * gs;
                }
            }
        });
}

template <typename T>
Var<T> embedding_lookup(Var<T> matrix, std::span<const std::int32_t> ids)
{
    const auto& mv = matrix.value();
    require_matrix("embedding_lookup", mv);
    const std::size_t m = mv.rows(), n = mv.cols();
    Tensor<T> out = Tensor<T>::matrix(ids.size(), n);
    for (std::size_t i = 0; i < ids.size(); ++i)
    {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= m)
            shape_fail("embedding_lookup", mv.shape(), "id " + std::to_string(ids[i]) +
                                                          " out of range");
        std::copy_n(mv.data() + static_cast<std::size_t>(ids[i]) * n, n, out.data() + i * n);
    }
    const auto mi = matrix.id();
    std::vector<std::int32_t> saved(ids.begin(), ids.end());
    return matrix.tape().record(std::move(out), matrix.requires_grad(),
                                [mi, n, saved = std::move(saved)](Tape<T>& t, const Tensor<T>& g) {
                                    auto& dst = t.grad(mi);
                                    for (std::size_t i = 0; i < saved.size(); ++i)
                                    {
                                        T* row = dst.data() + static_cast<std::size_t>(saved[i]) * n;
                                        const T* src = g.data() + i * n;
                                        for (std::size_t j = 0; j < n; ++j)
                                            row[j] += src[j];
                                    }
                                });
}

template <typename T>
Var<T> concat(std::span<const Var<T>> parts, int axis)
{
    if (parts.empty())
        throw ShapeError("concat: no operands");
    if (axis != 0 && axis != 1)
        shape_fail("concat", parts[0].shape(), "axis must be 0 or 1");
    auto& tape = parts[0].tape();
    std::vector<std::size_t> ids;
    std::vector<std::size_t> extents;
    bool needs_grad = false;
    const std::size_t r0 = parts[0].value().rows(), c0 = parts[0].value().cols();
    std::size_t total = 0;
    for (const auto& p : parts)
    {
        check_same_tape("concat", parts[0], p);
        const auto& v = p.value();
        require_matrix("concat", v);
        if (axis == 0 && v.cols() != c0)
            shape_fail("concat", parts[0].shape(), v.shape());
        if (axis == 1 && v.rows() != r0)
            shape_fail("concat", parts[0].shape(), v.shape());
        const std::size_t e = axis == 0 ? v.rows() : v.cols();
        ids.push_back(p.id());
        extents.push_back(e);
        total += e;
        needs_grad = needs_grad || p.requires_grad();
    }

    Tensor<T> out = axis == 0 ? Tensor<T>::matrix(total, c0) : Tensor<T>::matrix(r0, total);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k)
    {
        const auto& v = parts[k].value();
        if (axis == 0)
        {
            std::copy_n(v.data(), v.size(), out.data() + offset * c0);
        }
        else
        {
            for (std::size_t i = 0; i < r0; ++i)
                std::copy_n(v.data() + i * extents[k], extents[k], out.data() + i * total + offset);
        }
        offset += extents[k];
    }

    return tape.record(std::move(out), needs_grad,
                       [ids = std::move(ids), extents = std::move(extents), axis, r0, c0,
                        total](Tape<T>& t, const Tensor<T>& g) {
                           std::size_t offset = 0;
                           for (std::size_t k = 0; k < ids.size(); ++k)
                           {
                               if (t.requires_grad(ids[k]))
                               {
                                   auto& dst = t.grad(ids[k]);
                                   if (axis == 0)
                                   {
                                       const T* src = g.data() + offset * c0;
                                       for (std::size_t i = 0; i < dst.size(); ++i)
                                           dst[i] += src[i];
                                   }
                                   else
                                   {
                                       for (std::size_t i = 0; i < r0; ++i)
                                           for (std::size_t j = 0; j < extents[k]; ++j)
                                               dst[i * extents[k] + j] += g[i * total + offset + j];
                                   }
                               }
                               offset += extents[k];
                           }
                       });
}

template <typename T>
Var<T> slice_rows(Var<T> x, std::size_t begin, std::size_t count)
{
    const auto& xv = x.value();
    require_matrix("slice_rows", xv);
    if (begin + count > xv.rows())
        shape_fail("slice_rows", xv.shape(), "rows [" + std::to_string(begin) + ", " +
                                                 std::to_string(begin + count) + ") out of range");
    const std::size_t c = xv.cols();
    Tensor<T> out = Tensor<T>::matrix(count, c);
    std::copy_n(xv.data() + begin * c, count * c, out.data());
    const auto xi = x.id();
    return x.tape().record(std::move(out), x.requires_grad(),
                           [xi, begin, c](Tape<T>& t, const Tensor<T>& g) {
                               T* dst = t.grad(xi).data() + begin * c;
                               for (std::size_t i = 0; i < g.size(); ++i)
                                   dst[i] += g[i];
                           });
}

template <typename T>
Var<T> slice_cols(Var<T> x, std::size_t begin, std::size_t count)
{
    const auto& xv = x.value();
    require_matrix("slice_cols", xv);
    if (begin + count > xv.cols())
        shape_fail("slice_cols", xv.shape(), "cols [" + std::to_string(begin) + ", " +
                                                 std::to_string(begin + count) + ") out of range");
    const std::size_t r = xv.rows(), c = xv.cols();
    Tensor<T> out = Tensor<T>::matrix(r, count);
    for (std::size_t i = 0; i < r; ++i)
        std::copy_n(xv.data() + i * c + begin, count, out.data() + i * count);
    const auto xi = x.id();
    return x.tape().record(std::move(out), x.requires_grad(),
                           [xi, begin, count, r, c](Tape<T>& t, const Tensor<T>& g) {
                               auto& dst = t.grad(xi);
                               for (std::size_t i = 0; i < r; ++i)
                                   for (std::size_t j = 0; j < count; ++j)
                                       dst[i * c + begin + j] += g[i * count + j];
                           });
}

template <typename T>
Var<T> apply_mask(Var<T> x, const Tensor<T>& mask, T factor)
{
    const auto& xv = x.value();
    if (!xv.same_shape(mask))
        shape_fail("apply_mask", xv.shape(), mask.shape());
    Tensor<T> out(xv.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = xv[i] * mask[i] * factor;
    const auto xi = x.id();
    return x.tape().record(std::move(out), x.requires_grad(),
                           [xi, mask, factor](Tape<T>& t, const Tensor<T>& g) {
                               auto& dst = t.grad(xi);
                               for (std::size_t i = 0; i < g.size(); ++i)
                                   dst[i] += g[i] * mask[i] * factor;
                           });
}

template <typename T>
Var<T> sum(Var<T> x)
{
    const auto& xv = x.value();
    T s = 0;
    for (std::size_t i = 0; i < xv.size(); ++i)
        s += xv[i];
    const auto xi = x.id();
    return x.tape().record(Tensor<T>::scalar(s), x.requires_grad(),
                           [xi](Tape<T>& t, const Tensor<T>& g) {
                               auto& dst = t.grad(xi);
                               for (std::size_t i = 0; i < dst.size(); ++i)
                                   dst[i] += g[0];
                           });
}

template <typename T>
Var<T> mean(Var<T> x)
{
    const auto n = x.value().size();
    if (n == 0)
        shape_fail("mean", x.shape(), "empty tensor");
    return scale(sum(x), T(1) / static_cast<T>(n));
}

template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormStats<T>& stats, bool training,
                  T momentum, T eps)
{
    check_same_tape("batch_norm", x, gamma);
    check_same_tape("batch_norm", x, beta);
    const auto& xv = x.value();
    require_matrix("batch_norm", xv);
    const std::size_t n = xv.rows(), d = xv.cols();
    if (gamma.value().size() != d || beta.value().size() != d)
        shape_fail("batch_norm", xv.shape(), gamma.shape());
    if (stats.mean.size() != d || stats.var.size() != d)
        shape_fail("batch_norm", xv.shape(), stats.mean.shape());

    std::vector<T> mu(d), inv(d);
    if (training)
    {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j)
                mu[j] += xv[i * d + j];
        for (auto& m : mu)
            m /= static_cast<T>(n);
        std::vector<T> var(d);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j)
            {
                const T c = xv[i * d + j] - mu[j];
                var[j] += c * c;
            }
        for (std::size_t j = 0; j < d; ++j)
        {
            const T biased = var[j] / static_cast<T>(n);
            const T unbiased = n > 1 ? var[j] / static_cast<T>(n - 1) : biased;
            inv[j] = T(1) / std::sqrt(biased + eps);
            stats.mean[j] = (T(1) - momentum) * stats.mean[j] + momentum * mu[j];
            stats.var[j] = (T(1) - momentum) * stats.var[j] + momentum * unbiased;
        }
    }
    else
    {
        for (std::size_t j = 0; j < d; ++j)
        {
            mu[j] = stats.mean[j];
            inv[j] = T(1) / std::sqrt(stats.var[j] + eps);
        }
    }

    const auto& gv = gamma.value();
    const auto& bv = beta.value();
    Tensor<T> xhat = Tensor<T>::matrix(n, d);
    Tensor<T> out = Tensor<T>::matrix(n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
        {
            const std::size_t k = i * d + j;
            xhat[k] = (xv[k] - mu[j]) * inv[j];
            out[k] = gv[j] * xhat[k] + bv[j];
        }

    const auto xi = x.id(), gi = gamma.id(), bi = beta.id();
    const bool needs = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
    return x.tape().record(
        std::move(out), needs,
        [xi, gi, bi, n, d, training, inv = std::move(inv),
         xhat = std::move(xhat)](Tape<T>& t, const Tensor<T>& g) {
            const auto& gv = t.value(gi);
            if (t.requires_grad(gi) || t.requires_grad(bi))
            {
                std::vector<T> dg(d), db(d);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < d; ++j)
                    {
                        dg[j] += g[i * d + j] * xhat[i * d + j];
                        db[j] += g[i * d + j];
                    }
                if (t.requires_grad(gi))
                {
                    auto& dst = t.grad(gi);
                    for (std::size_t j = 0; j < d; ++j)
                        dst[j] += dg[j];
                }
                if (t.requires_grad(bi))
                {
                    auto& dst = t.grad(bi);
                    for (std::size_t j = 0; j < d; ++j)
                        dst[j] += db[j];
                }
            }
            if (!t.requires_grad(xi))
                return;
            auto& dst = t.grad(xi);
            if (!training)
            {
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < d; ++j)
                        dst[i * d + j] += g[i * d + j] * gv[j] * inv[j];
                return;
            }
            // dx = inv/n * (n*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
            std::vector<T> s1(d), s2(d);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j)
                {
                    const T dxh = g[i * d + j] * gv[j];
                    s1[j] += dxh;
                    s2[j] += dxh * xhat[i * d + j];
                }
            const T nn = static_cast<T>(n);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j)
                {
                    const std::size_t k = i * d + j;
                    const T dxh = g[k] * gv[j];
                    dst[k] += inv[j] / nn * (nn * dxh - s1[j] - xhat[k] * s2[j]);
                }
        });
}

namespace
{
template <typename T>
void check_steps(const char* op, std::span<const Var<T>> steps, std::span<const std::size_t> lengths)
{
    if (steps.empty())
        throw ShapeError(std::string(op) + ": no time steps");
    const auto& first = steps[0].value();
    if (first.rows() != lengths.size())
        shape_fail(op, first.shape(), "lengths has " + std::to_string(lengths.size()) + " rows");
    for (const auto& s : steps)
        if (!s.value().same_shape(first))
            shape_fail(op, first.shape(), s.shape());
    for (auto len : lengths)
        if (len == 0 || len > steps.size())
            shape_fail(op, first.shape(), "sequence length " + std::to_string(len) +
                                              " outside 1.." + std::to_string(steps.size()));
}

template <typename T>
std::vector<std::size_t> step_ids(std::span<const Var<T>> steps, bool& needs_grad)
{
    std::vector<std::size_t> ids;
    needs_grad = false;
    for (const auto& s : steps)
    {
        ids.push_back(s.id());
        needs_grad = needs_grad || s.requires_grad();
    }
    return ids;
}
}  // namespace

template <typename T>
Var<T> masked_mean_over_time(std::span<const Var<T>> steps, std::span<const std::size_t> lengths)
{
    check_steps("masked_mean_over_time", steps, lengths);
    const std::size_t rows = lengths.size(), d = steps[0].value().cols();
    Tensor<T> out = Tensor<T>::matrix(rows, d);
    for (std::size_t b = 0; b < rows; ++b)
    {
        for (std::size_t t = 0; t < lengths[b]; ++t)
        {
            const T* src = steps[t].value().data() + b * d;
            for (std::size_t j = 0; j < d; ++j)
                out[b * d + j] += src[j];
        }
        const T inv = T(1) / static_cast<T>(lengths[b]);
        for (std::size_t j = 0; j < d; ++j)
            out[b * d + j] *= inv;
    }
    bool needs_grad = false;
    auto ids = step_ids(steps, needs_grad);
    std::vector<std::size_t> lens(lengths.begin(), lengths.end());
    return steps[0].tape().record(
        std::move(out), needs_grad,
        [ids = std::move(ids), lens = std::move(lens), d](Tape<T>& t, const Tensor<T>& g) {
            for (std::size_t b = 0; b < lens.size(); ++b)
            {
                const T inv = T(1) / static_cast<T>(lens[b]);
                for (std::size_t s = 0; s < lens[b]; ++s)
                {
                    if (!t.requires_grad(ids[s]))
                        continue;
                    T* dst = t.grad(ids[s]).data() + b * d;
                    for (std::size_t j = 0; j < d; ++j)
                        dst[j] += g[b * d + j] * inv;
                }
            }
        });
}

template <typename T>
Var<T> masked_max_over_time(std::span<const Var<T>> steps, std::span<const std::size_t> lengths)
{
    check_steps("masked_max_over_time", steps, lengths);
    const std::size_t rows = lengths.size(), d = steps[0].value().cols();
    Tensor<T> out = Tensor<T>::matrix(rows, d);
    std::vector<std::size_t> argmax(rows * d, 0);
    for (std::size_t b = 0; b < rows; ++b)
        for (std::size_t j = 0; j < d; ++j)
        {
            T best = steps[0].value()[b * d + j];
            std::size_t best_t = 0;
            for (std::size_t t = 1; t < lengths[b]; ++t)
            {
                const T v = steps[t].value()[b * d + j];
                if (v > best)
                {
                    best = v;
                    best_t = t;
                }
            }
            out[b * d + j] = best;
            argmax[b * d + j] = best_t;
        }
    bool needs_grad = false;
    auto ids = step_ids(steps, needs_grad);
    return steps[0].tape().record(
        std::move(out), needs_grad,
        [ids = std::move(ids), argmax = std::move(argmax), d](Tape<T>& t, const Tensor<T>& g) {
            for (std::size_t k = 0; k < argmax.size(); ++k)
            {
                const auto src = ids[argmax[k]];
                if (t.requires_grad(src))
                    t.grad(src)[k] += g[k];
            }
        });
}

template <typename T>
Var<T> last_over_time(std::span<const Var<T>> steps, std::span<const std::size_t> lengths)
{
    check_steps("last_over_time", steps, lengths);
    const std::size_t rows = lengths.size(), d = steps[0].value().cols();
    Tensor<T> out = Tensor<T>::matrix(rows, d);
    for (std::size_t b = 0; b < rows; ++b)
        std::copy_n(steps[lengths[b] - 1].value().data() + b * d, d, out.data() + b * d);
    bool needs_grad = false;
    auto ids = step_ids(steps, needs_grad);
    std::vector<std::size_t> lens(lengths.begin(), lengths.end());
    return steps[0].tape().record(
        std::move(out), needs_grad,
        [ids = std::move(ids), lens = std::move(lens), d](Tape<T>& t, const Tensor<T>& g) {
            for (std::size_t b = 0; b < lens.size(); ++b)
            {
                const auto src = ids[lens[b] - 1];
                if (!t.requires_grad(src))
                    continue;
                T* dst = t.grad(src).data() + b * d;
                for (std::size_t j = 0; j < d; ++j)
                    dst[j] += g[b * d + j];
            }
        });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits)
{
    Tensor<T> out(logits.shape());
    const std::size_t r = logits.rows(), c = logits.cols();
    for (std::size_t i = 0; i < r; ++i)
    {
        const T* row = logits.data() + i * c;
        const T mx = *std::max_element(row, row + c);
        T s = 0;
        for (std::size_t j = 0; j < c; ++j)
            s += (out[i * c + j] = std::exp(row[j] - mx));
        for (std::size_t j = 0; j < c; ++j)
            out[i * c + j] /= s;
    }
    return out;
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::int32_t> targets, std::int64_t ignore_id)
{
    const auto& lv = logits.value();
    require_matrix("cross_entropy", lv);
    const std::size_t r = lv.rows(), c = lv.cols();
    if (targets.size() != r)
        shape_fail("cross_entropy", lv.shape(), std::to_string(targets.size()) + " targets");

    Tensor<T> probs = softmax_rows(lv);
    std::size_t counted = 0;
    // Accumulate in double so float training sees a stable loss value.
    double nll = 0;
    for (std::size_t i = 0; i < r; ++i)
    {
        if (targets[i] == ignore_id)
            continue;
        if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= c)
            shape_fail("cross_entropy", lv.shape(), "target " + std::to_string(targets[i]) +
                                                        " out of range");
        const T* row = lv.data() + i * c;
        const T mx = *std::max_element(row, row + c);
        double s = 0;
        for (std::size_t j = 0; j < c; ++j)
            s += std::exp(static_cast<double>(row[j] - mx));
        nll += -(static_cast<double>(row[targets[i]] - mx) - std::log(s));
        ++counted;
    }
    if (counted == 0)
        throw NumericalError("cross_entropy: every position is ignored");

    const auto li = logits.id();
    std::vector<std::int32_t> saved(targets.begin(), targets.end());
    return logits.tape().record(
        Tensor<T>::scalar(static_cast<T>(nll / static_cast<double>(counted))),
        logits.requires_grad(),
        [li, c, counted, ignore_id, saved = std::move(saved),
         probs = std::move(probs)](Tape<T>& t, const Tensor<T>& g) {
            auto& dst = t.grad(li);
            const T w = g[0] / static_cast<T>(counted);
            for (std::size_t i = 0; i < saved.size(); ++i)
            {
                if (saved[i] == ignore_id)
                    continue;
                for (std::size_t j = 0; j < c; ++j)
                    dst[i * c + j] += w * probs[i * c + j];
                dst[i * c + static_cast<std::size_t>(saved[i])] -= w;
            }
        });
}

// ---------------------------------------------------------------- grad_check

GradCheckResult grad_check(const std::function<Var<double>(Tape<double>&)>& loss_fn,
                           std::span<Parameter<double>* const> params, double eps,
                           std::size_t max_coords_per_param, std::uint64_t seed)
{
    auto eval = [&]() {
        Tape<double> tape;
        const double v = loss_fn(tape).value().item();
        if (!std::isfinite(v))
            throw NumericalError("grad_check: non-finite loss");
        return v;
    };

    for (auto* p : params)
        p->zero_grad();
    {
        Tape<double> tape;
        auto loss = loss_fn(tape);
        if (!std::isfinite(loss.value().item()))
            throw NumericalError("grad_check: non-finite loss");
        tape.backward(loss);
    }
    std::vector<Tensor<double>> analytic;
    for (auto* p : params)
        analytic.push_back(p->grad);

    GradCheckResult result;
    Rng rng(seed);
    for (std::size_t k = 0; k < params.size(); ++k)
    {
        auto* p = params[k];
        std::vector<std::size_t> coords(p->value.size());
        std::iota(coords.begin(), coords.end(), 0);
        if (max_coords_per_param && coords.size() > max_coords_per_param)
        {
            rng.shuffle(coords);
            coords.resize(max_coords_per_param);
        }
        for (auto i : coords)
        {
            const double orig = p->value[i];
            p->value[i] = orig + eps;
            const double plus = eval();
            p->value[i] = orig - eps;
            const double minus = eval();
            p->value[i] = orig;
            const double fd = (plus - minus) / (2 * eps);
            const double ad = analytic[k][i];
            const double rel =
                std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 1e-12});
            ++result.coordinates;
            if (rel > result.max_rel_error)
            {
                result.max_rel_error = rel;
                result.worst = p->name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return result;
}

#define OPSC_INSTANTIATE(T)                                                                      \
    template class Tensor<T>;                                                                    \
    template class Var<T>;                                                                       \
    template class Tape<T>;                                                                      \
    template Var<T> matmul(Var<T>, Var<T>);                                                      \
    template Var<T> matmul_nt(Var<T>, Var<T>);                                                   \
    template Var<T> add(Var<T>, Var<T>);                                                         \
    template Var<T> sub(Var<T>, Var<T>);                                                         \
    template Var<T> mul(Var<T>, Var<T>);                                                         \
    template Var<T> scale(Var<T>, T);                                                            \
    template Var<T> add_bias(Var<T>, Var<T>);                                                    \
    template Var<T> sigmoid(Var<T>);                                                             \
    template Var<T> tanh(Var<T>);                                                                \
    template Var<T> relu(Var<T>);                                                                \
    template Var<T> log_softmax(Var<T>, int);                                                    \
    template Var<T> embedding_lookup(Var<T>, std::span<const std::int32_t>);                     \
    template Var<T> concat(std::span<const Var<T>>, int);                                        \
    template Var<T> slice_rows(Var<T>, std::size_t, std::size_t);                                \
    template Var<T> slice_cols(Var<T>, std::size_t, std::size_t);                                \
    template Var<T> apply_mask(Var<T>, const Tensor<T>&, T);                                     \
    template Var<T> sum(Var<T>);                                                                 \
    template Var<T> mean(Var<T>);                                                                \
    template Var<T> batch_norm(Var<T>, Var<T>, Var<T>, BatchNormStats<T>&, bool, T, T);          \
    template Var<T> masked_mean_over_time(std::span<const Var<T>>, std::span<const std::size_t>); \
    template Var<T> masked_max_over_time(std::span<const Var<T>>, std::span<const std::size_t>);  \
    template Var<T> last_over_time(std::span<const Var<T>>, std::span<const std::size_t>);        \
    template Var<T> cross_entropy(Var<T>, std::span<const std::int32_t>, std::int64_t);          \
    template Tensor<T> softmax_rows(const Tensor<T>&);

OPSC_INSTANTIATE(float)
OPSC_INSTANTIATE(double)

#undef OPSC_INSTANTIATE

}  // namespace opsc::ad
