// opsc: opcode-sequence smart contract classifier
// Copyright 2026 The opsc Authors.
// Licensed under the Apache License, Version 2.0.

#pragma once

#include <cstddef>
#include <functional>
#include <vector>

namespace opsc::schedule
{
struct OneCycleSchedule
{
    double max_lr = 0.01;
    std::size_t total_steps = 1;
    double warmup_fraction = 0.3;
    double start_div = 25.0;
    double final_div = 1e4;
    double momentum_max = 0.95;
    double momentum_min = 0.85;
};

/// Index of the step that reaches max_lr.
std::size_t warmup_end_step(const OneCycleSchedule& s);

/// Cosine rise from max_lr/start_div to max_lr over the warmup, then cosine
/// decay to max_lr/final_div at the last step. Throws UsageError unless
/// step < total_steps.
double one_cycle_lr(std::size_t step, const OneCycleSchedule& s);

/// Momentum cycled inversely to the learning rate.
double one_cycle_momentum(std::size_t step, const OneCycleSchedule& s);

/// Geometric spread from lr_lo (first group) to lr_hi (last group).
std::vector<double> discriminative_lrs(std::size_t n_groups, double lr_lo = 0.0044,
                                       double lr_hi = 0.04);

struct LrFinderOptions
{
    double lr_start = 1e-7;
    double lr_end = 10.0;
    std::size_t steps = 100;
    double smoothing = 0.98;
    double divergence_factor = 4.0;
    std::size_t skip_end = 5;
    std::size_t min_points = 10;
};

struct LrFinderPoint
{
    double lr;
    double loss;           ///< raw mini-batch loss
    double smoothed_loss;  ///< bias-corrected moving average
};

struct LrFinderResult
{
    std::vector<LrFinderPoint> points;
    double suggestion = 0.0;
    bool diverged = false;
};

/// Sweep the learning rate geometrically. train_step(lr) runs one mini-batch
/// at that rate and returns its loss. Stops when the smoothed loss exceeds
/// divergence_factor times its best or the loss is non-finite. Throws
/// NumericalError when fewer than min_points points were recorded.
LrFinderResult lr_find(const std::function<double(double)>& train_step,
                       const LrFinderOptions& options = {});

}  // namespace opsc::schedule
