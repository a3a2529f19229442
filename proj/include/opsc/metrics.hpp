// opsc: opcode-sequence smart contract classifier
// Copyright 2026 The opsc Authors.
// Licensed under the Apache License, Version 2.0.

#pragma once

#include <nlohmann/json.hpp>

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace opsc::metrics
{
/// Square count matrix. Rows are the actual class, columns the predicted
/// class; classes are 0-based indices.
class ConfusionMatrix
{
public:
    explicit ConfusionMatrix(std::size_t n_classes = 4);
    static ConfusionMatrix from_rows(const std::vector<std::vector<std::uint64_t>>& rows);

    std::size_t n_classes() const { return n_; }
    std::uint64_t& at(std::size_t actual, std::size_t predicted);
    std::uint64_t at(std::size_t actual, std::size_t predicted) const;

    std::uint64_t row_sum(std::size_t actual) const;
    std::uint64_t col_sum(std::size_t predicted) const;
    std::uint64_t total() const;
    std::uint64_t trace() const;

    void write_csv(std::ostream& out) const;
    nlohmann::json to_json() const;

    bool operator==(const ConfusionMatrix&) const = default;

private:
    std::size_t n_;
    std::vector<std::uint64_t> counts_;
};

/// Throws UsageError on length mismatch or an index >= n_classes.
ConfusionMatrix confusion(std::span<const std::size_t> predicted,
                          std::span<const std::size_t> actual, std::size_t n_classes = 4);

/// trace / N. Throws UsageError when N = 0.
double accuracy(const ConfusionMatrix& cm);

/// A ratio whose denominator may be zero; then value is 0 and the flag set.
struct Ratio
{
    double value = 0.0;
    bool zero_division = false;
};

Ratio recall(const ConfusionMatrix& cm, std::size_t k);
Ratio precision(const ConfusionMatrix& cm, std::size_t k);

/// (1 + b^2) p r / (b^2 p + r), 0 when the denominator is 0. b = 1 is the
/// harmonic mean 2pr / (p + r).
double f_beta(double p, double r, double beta = 1.0);

/// Support-weighted mean sum(n_i m_i) / N. Throws UsageError when the
/// lengths differ or N = 0.
double weighted(std::span<const double> values, std::span<const std::uint64_t> supports);

struct RocPoint
{
    double threshold;  ///< +inf for the (0, 0) anchor
    double fpr;
    double tpr;
};

struct RocCurve
{
    std::vector<RocPoint> points;
    double auc = 0.0;
};

/// One-vs-rest ROC for class k. Thresholds are the distinct scores in
/// descending order; tied scores move together. Throws DataError when
/// class k has no positives or no negatives.
RocCurve roc_curve(std::span<const double> scores, std::span<const std::size_t> labels,
                   std::size_t k);

struct ClassMetrics
{
    std::uint64_t support = 0;
    Ratio precision;
    Ratio recall;
    double fbeta = 0.0;
    std::optional<double> auc;
};

struct MetricsReport
{
    ConfusionMatrix cm;
    std::uint64_t total = 0;
    double accuracy = 0.0;
    std::vector<ClassMetrics> per_class;
    double weighted_recall = 0.0;
    double weighted_precision = 0.0;
    double weighted_fbeta = 0.0;
    double beta = 1.0;
    std::vector<RocCurve> roc;  ///< per class, empty when no scores were given

    nlohmann::json to_json() const;
    /// Class-wise and weighted percentages in the layout of the published table.
    std::string to_table() const;
    /// Rows of (class, threshold, fpr, tpr).
    void write_roc_csv(std::ostream& out) const;
};

/// Percentage rounded half-up to one decimal.
double percent(double fraction);

/// Assemble all metrics. scores, when non-empty, is N x n_classes row-major
/// class probabilities aligned with labels; ROC/AUC are computed for every
/// class that has both positives and negatives.
MetricsReport report(const ConfusionMatrix& cm, std::span<const double> scores = {},
                     std::span<const std::size_t> labels = {}, double beta = 1.0);

}  // namespace opsc::metrics
