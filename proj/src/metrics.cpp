// opsc: opcode-sequence smart contract classifier
// Copyright 2026 The opsc Authors.
// Licensed under the Apache License, Version 2.0.

#include "opsc/metrics.hpp"

#include "opsc/error.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

namespace opsc::metrics
{
ConfusionMatrix::ConfusionMatrix(std::size_t n_classes) : n_(n_classes), counts_(n_classes * n_classes)
{
    if (n_classes == 0)
        throw UsageError("confusion matrix needs at least one class");
}

ConfusionMatrix ConfusionMatrix::from_rows(const std::vector<std::vector<std::uint64_t>>& rows)
{
    ConfusionMatrix cm(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
    {
        if (rows[i].size() != rows.size())
            throw UsageError("confusion matrix row " + std::to_string(i) + " has " +
                             std::to_string(rows[i].size()) + " entries, expected " +
                             std::to_string(rows.size()));
        for (std::size_t j = 0; j < rows.size(); ++j)
            cm.at(i, j) = rows[i][j];
    }
    return cm;
}

std::uint64_t& ConfusionMatrix::at(std::size_t actual, std::size_t predicted)
{
    return counts_.at(actual * n_ + predicted);
}

std::uint64_t ConfusionMatrix::at(std::size_t actual, std::size_t predicted) const
{
    return counts_.at(actual * n_ + predicted);
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t actual) const
{
    std::uint64_t s = 0;
    for (std::size_t j = 0; j < n_; ++j)
        s += at(actual, j);
    return s;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t predicted) const
{
    std::uint64_t s = 0;
    for (std::size_t i = 0; i < n_; ++i)
        s += at(i, predicted);
    return s;
}

std::uint64_t ConfusionMatrix::total() const
{
    return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

std::uint64_t ConfusionMatrix::trace() const
{
    std::uint64_t s = 0;
    for (std::size_t i = 0; i < n_; ++i)
        s += at(i, i);
    return s;
}

void ConfusionMatrix::write_csv(std::ostream& out) const
{
    out << "actual";
    for (std::size_t j = 0; j < n_; ++j)
        out << ",pred_type" << j + 1;
    out << '\n';
    for (std::size_t i = 0; i < n_; ++i)
    {
        out << "type" << i + 1;
        for (std::size_t j = 0; j < n_; ++j)
            out << ',' << at(i, j);
        out << '\n';
    }
}

nlohmann::json ConfusionMatrix::to_json() const
{
    auto rows = nlohmann::json::array();
    for (std::size_t i = 0; i < n_; ++i)
    {
        auto row = nlohmann::json::array();
        for (std::size_t j = 0; j < n_; ++j)
            row.push_back(at(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

ConfusionMatrix confusion(std::span<const std::size_t> predicted,
                          std::span<const std::size_t> actual, std::size_t n_classes)
{
    if (predicted.size() != actual.size())
        throw UsageError("confusion: " + std::to_string(predicted.size()) +
                         " predictions for " + std::to_string(actual.size()) + " labels");
    ConfusionMatrix cm(n_classes);
    for (std::size_t i = 0; i < actual.size(); ++i)
    {
        if (actual[i] >= n_classes || predicted[i] >= n_classes)
            throw UsageError("confusion: sample " + std::to_string(i) +
                             " has a class index outside 0.." + std::to_string(n_classes - 1));
        ++cm.at(actual[i], predicted[i]);
    }
    return cm;
}

double accuracy(const ConfusionMatrix& cm)
{
    const auto n = cm.total();
    if (n == 0)
        throw UsageError("accuracy of an empty confusion matrix");
    return static_cast<double>(cm.trace()) / static_cast<double>(n);
}

namespace
{
Ratio ratio(std::uint64_t num, std::uint64_t den)
{
    if (den == 0)
        return {0.0, true};
    return {static_cast<double>(num) / static_cast<double>(den), false};
}

}  // namespace

Ratio recall(const ConfusionMatrix& cm, std::size_t k)
{
    return ratio(cm.at(k, k), cm.row_sum(k));
}

Ratio precision(const ConfusionMatrix& cm, std::size_t k)
{
    return ratio(cm.at(k, k), cm.col_sum(k));
}

double f_beta(double p, double r, double beta)
{
    const double b2 = beta * beta;
    const double den = b2 * p + r;
    if (den == 0.0)
        return 0.0;
    return (1.0 + b2) * p * r / den;
}

double weighted(std::span<const double> values, std::span<const std::uint64_t> supports)
{
    if (values.size() != supports.size())
        throw UsageError("weighted: " + std::to_string(values.size()) + " values for " +
                         std::to_string(supports.size()) + " supports");
    const std::uint64_t n = std::accumulate(supports.begin(), supports.end(), std::uint64_t{0});
    if (n == 0)
        throw UsageError("weighted average with zero total support");
    double s = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i)
        s += static_cast<double>(supports[i]) * values[i];
    return s / static_cast<double>(n);
}

RocCurve roc_curve(std::span<const double> scores, std::span<const std::size_t> labels,
                   std::size_t k)
{
    if (scores.size() != labels.size())
        throw UsageError("roc_curve: " + std::to_string(scores.size()) + " scores for " +
                         std::to_string(labels.size()) + " labels");
    std::size_t pos = 0;
    for (auto l : labels)
        pos += l == k;
    const std::size_t neg = labels.size() - pos;
    if (pos == 0 || neg == 0)
        throw DataError("roc_curve: class " + std::to_string(k + 1) + " has " +
                        std::to_string(pos) + " positives and " + std::to_string(neg) +
                        " negatives; AUC is undefined");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    RocCurve curve;
    curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < order.size();)
    {
        const double threshold = scores[order[i]];
        for (; i < order.size() && scores[order[i]] == threshold; ++i)
        {
            if (labels[order[i]] == k)
                ++tp;
            else
                ++fp;
        }
        const RocPoint p{threshold, static_cast<double>(fp) / static_cast<double>(neg),
                         static_cast<double>(tp) / static_cast<double>(pos)};
        const auto& prev = curve.points.back();
        curve.auc += (p.fpr - prev.fpr) * (p.tpr + prev.tpr) / 2.0;
        curve.points.push_back(p);
    }
    return curve;
}

double percent(double fraction)
{
    return std::floor(fraction * 1000.0 + 0.5) / 10.0;
}

MetricsReport report(const ConfusionMatrix& cm, std::span<const double> scores,
                     std::span<const std::size_t> labels, double beta)
{
    const std::size_t n = cm.n_classes();
    MetricsReport r;
    r.cm = cm;
    r.beta = beta;
    r.total = cm.total();
    r.accuracy = accuracy(cm);

    std::vector<double> rec, prec, f;
    std::vector<std::uint64_t> support;
    for (std::size_t k = 0; k < n; ++k)
    {
        ClassMetrics c;
        c.support = cm.row_sum(k);
        c.recall = recall(cm, k);
        c.precision = precision(cm, k);
        c.fbeta = f_beta(c.precision.value, c.recall.value, beta);
        rec.push_back(c.recall.value);
        prec.push_back(c.precision.value);
        f.push_back(c.fbeta);
        support.push_back(c.support);
        r.per_class.push_back(c);
    }
    r.weighted_recall = weighted(rec, support);
    r.weighted_precision = weighted(prec, support);
    r.weighted_fbeta = weighted(f, support);

    if (!scores.empty())
    {
        if (scores.size() != labels.size() * n)
            throw UsageError("report: expected " + std::to_string(labels.size() * n) +
                             " scores, got " + std::to_string(scores.size()));
        std::vector<double> column(labels.size());
        for (std::size_t k = 0; k < n; ++k)
        {
            for (std::size_t i = 0; i < labels.size(); ++i)
                column[i] = scores[i * n + k];
            const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), k));
            if (pos == 0 || pos == labels.size())
            {
                r.roc.emplace_back();
                continue;
            }
            r.roc.push_back(roc_curve(column, labels, k));
            r.per_class[k].auc = r.roc.back().auc;
        }
    }
    return r;
}

nlohmann::json MetricsReport::to_json() const
{
    nlohmann::json per = nlohmann::json::array();
    for (std::size_t k = 0; k < per_class.size(); ++k)
    {
        const auto& c = per_class[k];
        nlohmann::json flags = nlohmann::json::array();
        if (c.precision.zero_division)
            flags.push_back("precision_zero_division");
        if (c.recall.zero_division)
            flags.push_back("recall_zero_division");
        per.push_back({{"class", k + 1},
                       {"support", c.support},
                       {"precision", c.precision.value},
                       {"recall", c.recall.value},
                       {"fbeta", c.fbeta},
                       {"auc", c.auc ? nlohmann::json(*c.auc) : nlohmann::json(nullptr)},
                       {"flags", flags}});
    }
    return {{"total", total},
            {"accuracy", accuracy},
            {"beta", beta},
            {"per_class", per},
            {"weighted",
             {{"recall", weighted_recall},
              {"precision", weighted_precision},
              {"fbeta", weighted_fbeta}}},
            {"confusion", cm.to_json()}};
}

std::string MetricsReport::to_table() const
{
    std::ostringstream os;
    os << std::fixed << std::setprecision(1);
    const auto row = [&](const std::string& name, auto value_of, double weighted_value) {
        for (std::size_t k = 0; k < per_class.size(); ++k)
        {
            os << std::left << std::setw(18) << (k == 0 ? name : "") << std::right << std::setw(6)
               << percent(value_of(per_class[k])) << " (Type-" << k + 1 << ")";
            if (k == 0)
                os << std::setw(10) << percent(weighted_value);
            os << '\n';
        }
    };
    os << std::left << std::setw(18) << "Measure" << std::right << std::setw(15) << "Class-wise"
       << std::setw(10) << "Weighted" << '\n';
    os << std::left << std::setw(18) << "Test Accuracy" << std::right << std::setw(6)
       << percent(accuracy) << " (Overall)" << std::setw(8) << "---" << '\n';
    row("Recall", [](const ClassMetrics& c) { return c.recall.value; }, weighted_recall);
    row("Precision", [](const ClassMetrics& c) { return c.precision.value; }, weighted_precision);
    row("F_beta", [](const ClassMetrics& c) { return c.fbeta; }, weighted_fbeta);
    return os.str();
}

void MetricsReport::write_roc_csv(std::ostream& out) const
{
    out << "class,threshold,fpr,tpr\n";
    out << std::setprecision(17);
    for (std::size_t k = 0; k < roc.size(); ++k)
        for (const auto& p : roc[k].points)
        {
            out << k + 1 << ',';
            if (std::isinf(p.threshold))
                out << "inf";
            else
                out << p.threshold;
            out << ',' << p.fpr << ',' << p.tpr << '\n';
        }
}

}  // namespace opsc::metrics
