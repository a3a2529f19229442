// opsc: opcode-sequence smart contract classifier
// Copyright 2026 The opsc Authors.
// Licensed under the Apache License, Version 2.0.

#pragma once

// End-to-end steps shared by the command-line tool, the Python module and
// the acceptance checks.

#include "opsc/config.hpp"
#include "opsc/corpus.hpp"
#include "opsc/metrics.hpp"
#include "opsc/trainer.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace opsc::pipeline
{
/// Deduplicated records plus ingestion counts.
struct Prepared
{
    std::vector<ContractRecord> records;
    IngestStats stats;
    std::size_t duplicates_removed = 0;

    nlohmann::json summary() const;
};

Prepared prepare(std::istream& corpus, const CorpusConfig& config);
Prepared prepare(const std::filesystem::path& corpus, const CorpusConfig& config);

/// Split plus the vocabulary of its training part.
struct SplitWithVocab
{
    SplitDataset split;
    Vocab vocab;
};

SplitWithVocab split_and_vocab(const std::vector<ContractRecord>& records,
                               const CorpusConfig& config, std::uint64_t seed);

/// Numericalized splits. Language-model sequences come from train and valid.
struct Datasets
{
    std::vector<Example> train;
    std::vector<Example> valid;
    std::vector<Example> test;
    std::vector<std::vector<TokenId>> lm_train;
    std::vector<std::vector<TokenId>> lm_valid;
};

Datasets numericalize_split(const SplitDataset& split, const Vocab& vocab);

/// The run's model settings with the vocabulary size filled in.
model::ModelConfig model_config(const RunConfig& config, const Vocab& vocab);

/// Metrics report (with ROC curves) of a classifier on examples.
metrics::MetricsReport evaluate(train::Classifier& clf, const std::vector<Example>& examples,
                                const train::ClfTrainConfig& config);

/// Write metrics.json, confusion.csv and roc.csv into dir.
void write_report(const metrics::MetricsReport& report, const std::filesystem::path& dir);

struct Prediction
{
    std::size_t class_index = 0;
    std::array<double, kNumClasses> probabilities{};

    Label label() const { return label_from_index(class_index); }
};

/// Classify raw bytecode hex strings.
std::vector<Prediction> predict(train::Classifier& clf, const Vocab& vocab,
                                const std::vector<std::string>& bytecodes,
                                const CorpusConfig& corpus, const train::ClfTrainConfig& config);

/// One labeled prediction per line: "actual,predicted" with 1-based types,
/// optionally followed by the four class probabilities. A header line whose
/// first field is "actual" is skipped.
struct PredictionTable
{
    std::vector<std::size_t> actual;     ///< class indices
    std::vector<std::size_t> predicted;  ///< class indices
    std::vector<double> scores;          ///< N x 4 when every line has them
};

PredictionTable read_predictions(std::istream& in);
metrics::MetricsReport report_from_predictions(const PredictionTable& table);

struct RunResult
{
    std::optional<train::LmTrainResult> lm;
    train::ClfTrainResult clf;
    metrics::MetricsReport train_report;
    metrics::MetricsReport test_report;
};

/// Split, pretrain the language model (when pretrain is set), fine-tune the
/// classifier and evaluate it. With a non-empty out the effective config,
/// split manifest, vocabulary, histories, checkpoints and test metrics are
/// written there.
RunResult run(const RunConfig& config, const std::vector<ContractRecord>& records,
              const std::filesystem::path& out = {}, bool pretrain = true);

}  // namespace opsc::pipeline
