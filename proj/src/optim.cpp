// opsc: opcode-sequence smart contract classifier
// Copyright 2026 The opsc Authors.
// Licensed under the Apache License, Version 2.0.

#include "opsc/optim.hpp"

#include "opsc/error.hpp"

#include <algorithm>
#include <cmath>

namespace opsc::optim
{
namespace
{
template <typename T>
void check_finite(const ad::Parameter<T>& p)
{
    for (std::size_t i = 0; i < p.grad.size(); ++i)
        if (!std::isfinite(p.grad[i]))
            throw NumericalError("non-finite gradient in parameter " + p.name);
}

double lr_for(std::span<const double> group_lrs, std::size_t group)
{
    if (group_lrs.empty())
        throw UsageError("optimizer step needs at least one learning rate");
    return group_lrs[std::min(group, group_lrs.size() - 1)];
}

}  // namespace

template <typename T>
void Adam<T>::step(const ParamList<T>& params, std::span<const double> group_lrs)
{
    for (auto* p : params)
        if (!p->frozen)
            check_finite(*p);

    const T b1 = static_cast<T>(config_.beta1);
    const T b2 = static_cast<T>(config_.beta2);
    for (auto* p : params)
    {
        if (p->frozen)
            continue;
        auto& st = state_[p->name];
        if (!st.m.same_shape(p->value))
        {
            st.m = ad::Tensor<T>(p->value.shape());
            st.v = ad::Tensor<T>(p->value.shape());
            st.steps = 0;
        }
        ++st.steps;
        const double lr = lr_for(group_lrs, p->layer_group);
        const T bc1 = static_cast<T>(1.0 - std::pow(config_.beta1, static_cast<double>(st.steps)));
        const T bc2 = static_cast<T>(1.0 - std::pow(config_.beta2, static_cast<double>(st.steps)));
        const T step_lr = static_cast<T>(lr);
        const T decay = static_cast<T>(lr * config_.weight_decay);
        const T eps = static_cast<T>(config_.eps);
        for (std::size_t i = 0; i < p->value.size(); ++i)
        {
            const T g = p->grad[i];
            st.m[i] = b1 * st.m[i] + (T(1) - b1) * g;
            st.v[i] = b2 * st.v[i] + (T(1) - b2) * g * g;
            const T m_hat = st.m[i] / bc1;
            const T v_hat = st.v[i] / bc2;
            const T w = p->value[i];
            p->value[i] = w - decay * w - step_lr * m_hat / (std::sqrt(v_hat) + eps);
        }
    }
}

template <typename T>
void sgd_step(const ParamList<T>& params, std::span<const double> group_lrs, double weight_decay)
{
    for (auto* p : params)
        if (!p->frozen)
            check_finite(*p);
    for (auto* p : params)
    {
        if (p->frozen)
            continue;
        const double lr = lr_for(group_lrs, p->layer_group);
        const T step_lr = static_cast<T>(lr);
        const T decay = static_cast<T>(lr * weight_decay);
        for (std::size_t i = 0; i < p->value.size(); ++i)
        {
            const T w = p->value[i];
            p->value[i] = w - step_lr * p->grad[i] - decay * w;
        }
    }
}

template <typename T>
void AveragedSgd<T>::step(const ParamList<T>& params, std::span<const double> group_lrs)
{
    sgd_step(params, group_lrs, weight_decay_);
    if (!averaging_)
        return;
    ++count_;
    const T k = static_cast<T>(count_);
    for (auto* p : params)
    {
        auto it = average_.find(p->name);
        if (it == average_.end() || count_ == 1)
        {
            average_[p->name] = p->value;
            continue;
        }
        auto& avg = it->second;
        for (std::size_t i = 0; i < avg.size(); ++i)
            avg[i] += (p->value[i] - avg[i]) / k;
    }
}

template <typename T>
void AveragedSgd<T>::swap_in_average(const ParamList<T>& params)
{
    for (auto* p : params)
    {
        auto it = average_.find(p->name);
        if (it != average_.end())
            std::swap(p->value, it->second);
    }
}

template class Adam<float>;
template class Adam<double>;
template class AveragedSgd<float>;
template class AveragedSgd<double>;
template void sgd_step(const ParamList<float>&, std::span<const double>, double);
template void sgd_step(const ParamList<double>&, std::span<const double>, double);

}  // namespace opsc::optim
