// opsc: opcode-sequence smart contract classifier
// Copyright 2026 The opsc Authors.
// Licensed under the Apache License, Version 2.0.

#pragma once

#include "opsc/autodiff.hpp"

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace opsc::optim
{
template <typename T>
using ParamList = std::vector<ad::Parameter<T>*>;

struct AdamConfig
{
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-7;
    double weight_decay = 0.01;
};

/// Adam with decoupled weight decay. The learning rate of each parameter is
/// group_lrs[param.layer_group] (or the last entry when the group index runs
/// past the list). Frozen parameters and their moment state are untouched.
template <typename T>
class Adam
{
public:
    explicit Adam(AdamConfig config = {}) : config_(config) {}

    void step(const ParamList<T>& params, std::span<const double> group_lrs);

    /// Used by the one-cycle schedule to cycle momentum inversely to the lr.
    void set_beta1(double beta1) { config_.beta1 = beta1; }
    const AdamConfig& config() const { return config_; }

    struct State
    {
        ad::Tensor<T> m;
        ad::Tensor<T> v;
        std::size_t steps = 0;
    };
    const std::map<std::string, State>& state() const { return state_; }

private:
    AdamConfig config_;
    std::map<std::string, State> state_;
};

/// w <- w - lr*g - lr*wd*w, skipping frozen parameters.
template <typename T>
void sgd_step(const ParamList<T>& params, std::span<const double> group_lrs, double weight_decay);

/// SGD whose iterates can be averaged once averaging is triggered; the
/// trainer triggers it when validation loss stops improving (NT-ASGD).
template <typename T>
class AveragedSgd
{
public:
    explicit AveragedSgd(double weight_decay = 0.0) : weight_decay_(weight_decay) {}

    void step(const ParamList<T>& params, std::span<const double> group_lrs);

    void start_averaging() { averaging_ = true; }
    bool averaging() const { return averaging_; }
    std::size_t averaged_steps() const { return count_; }

    /// Swap averaged and current values (call twice to restore).
    void swap_in_average(const ParamList<T>& params);

private:
    double weight_decay_;
    bool averaging_ = false;
    std::size_t count_ = 0;
    std::map<std::string, ad::Tensor<T>> average_;
};

}  // namespace opsc::optim
