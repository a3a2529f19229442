// opsc: opcode-sequence smart contract classifier
// Copyright 2026 The opsc Authors.
// Licensed under the Apache License, Version 2.0.

#include "opsc/schedule.hpp"

#include "opsc/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace opsc::schedule
{
namespace
{
// Cosine interpolation, exact at both ends.
double cosine(double from, double to, double pct)
{
    if (pct <= 0.0)
        return from;
    if (pct >= 1.0)
        return to;
    return to + (from - to) * (1.0 + std::cos(std::numbers::pi * pct)) / 2.0;
}

void check(std::size_t step, const OneCycleSchedule& s)
{
    if (s.total_steps == 0 || step >= s.total_steps)
        throw UsageError("one-cycle step " + std::to_string(step) + " outside 0.." +
                         std::to_string(s.total_steps == 0 ? 0 : s.total_steps - 1));
    if (!(s.max_lr > 0) || !(s.start_div > 0) || !(s.final_div > 0))
        throw UsageError("one-cycle needs positive max_lr, start_div and final_div");
    if (!(s.warmup_fraction >= 0 && s.warmup_fraction <= 1))
        throw UsageError("one-cycle warmup_fraction must be in [0, 1]");
}

}  // namespace

std::size_t warmup_end_step(const OneCycleSchedule& s)
{
    if (s.total_steps <= 1)
        return 0;
    const auto last = s.total_steps - 1;
    const auto w = static_cast<std::size_t>(
        std::floor(s.warmup_fraction * static_cast<double>(s.total_steps)));
    // Keep at least one decay step so the final value is reached.
    return std::min(w, last - 1);
}

double one_cycle_lr(std::size_t step, const OneCycleSchedule& s)
{
    check(step, s);
    const double lo = s.max_lr / s.start_div;
    const double end = s.max_lr / s.final_div;
    if (s.total_steps == 1)
        return lo;
    const auto w = warmup_end_step(s);
    const auto last = s.total_steps - 1;
    if (step < w)
        return cosine(lo, s.max_lr, static_cast<double>(step) / static_cast<double>(w));
    return cosine(s.max_lr, end, static_cast<double>(step - w) / static_cast<double>(last - w));
}

double one_cycle_momentum(std::size_t step, const OneCycleSchedule& s)
{
    check(step, s);
    if (s.total_steps == 1)
        return s.momentum_max;
    const auto w = warmup_end_step(s);
    const auto last = s.total_steps - 1;
    if (step < w)
        return cosine(s.momentum_max, s.momentum_min,
                      static_cast<double>(step) / static_cast<double>(w));
    return cosine(s.momentum_min, s.momentum_max,
                  static_cast<double>(step - w) / static_cast<double>(last - w));
}

std::vector<double> discriminative_lrs(std::size_t n_groups, double lr_lo, double lr_hi)
{
    if (n_groups == 0)
        throw UsageError("discriminative_lrs needs at least one group");
    if (!(lr_lo > 0) || lr_lo > lr_hi)
        throw UsageError("discriminative_lrs needs 0 < lr_lo <= lr_hi");
    if (n_groups == 1)
        return {lr_hi};
    std::vector<double> out(n_groups);
    const double ratio = lr_hi / lr_lo;
    for (std::size_t i = 0; i < n_groups; ++i)
        out[i] = lr_lo * std::pow(ratio, static_cast<double>(i) / static_cast<double>(n_groups - 1));
    out.front() = lr_lo;
    out.back() = lr_hi;
    return out;
}

LrFinderResult lr_find(const std::function<double(double)>& train_step,
                       const LrFinderOptions& o)
{
    if (!(o.lr_start > 0) || !(o.lr_end > o.lr_start) || o.steps < 2)
        throw UsageError("lr_find needs 0 < lr_start < lr_end and at least 2 steps");
    const double mult = std::pow(o.lr_end / o.lr_start, 1.0 / static_cast<double>(o.steps - 1));

    LrFinderResult result;
    double avg = 0.0;
    double best = 0.0;
    for (std::size_t i = 0; i < o.steps; ++i)
    {
        const double lr = o.lr_start * std::pow(mult, static_cast<double>(i));
        const double loss = train_step(lr);
        if (!std::isfinite(loss))
        {
            result.diverged = true;
            break;
        }
        avg = o.smoothing * avg + (1.0 - o.smoothing) * loss;
        const double smoothed = avg / (1.0 - std::pow(o.smoothing, static_cast<double>(i + 1)));
        result.points.push_back({lr, loss, smoothed});
        if (i == 0 || smoothed < best)
            best = smoothed;
        if (smoothed > o.divergence_factor * best)
        {
            result.diverged = true;
            break;
        }
    }

    const auto n = result.points.size();
    if (n < o.min_points || n < o.skip_end + 2)
        throw NumericalError("lr_find recorded only " + std::to_string(n) +
                             " points before the loss diverged; use a smaller lr_start");
    const auto usable = n - o.skip_end;
    double steepest = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + 1 < usable; ++i)
    {
        const double slope = (result.points[i + 1].smoothed_loss - result.points[i].smoothed_loss) /
                             std::log(result.points[i + 1].lr / result.points[i].lr);
        if (slope < steepest)
        {
            steepest = slope;
            result.suggestion = result.points[i].lr;
        }
    }
    return result;
}

}  // namespace opsc::schedule
