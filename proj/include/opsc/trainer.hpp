// opsc: opcode-sequence smart contract classifier
// Copyright 2026 The opsc Authors.
// Licensed under the Apache License, Version 2.0.

#pragma once

#include "opsc/corpus.hpp"
#include "opsc/model.hpp"
#include "opsc/optim.hpp"
#include "opsc/schedule.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace opsc::train
{
using LanguageModel = model::LanguageModel<float>;
using Classifier = model::Classifier<float>;

enum class OptimizerKind
{
    Adam,
    AveragedSgd,
};

struct CycleConfig
{
    double warmup_fraction = 0.3;
    double start_div = 25.0;
    double final_div = 1e4;
};

struct LmTrainConfig
{
    std::size_t epochs = 10;
    std::size_t batch_size = 16;
    std::size_t bptt = 35;
    double max_lr = 0.01;
    double weight_decay = 0.01;
    double clip_norm = 0.0;  ///< 0 disables global-norm clipping
    OptimizerKind optimizer = OptimizerKind::Adam;
    CycleConfig cycle;
    std::uint64_t seed = 0;
};

struct ClfTrainConfig
{
    std::size_t epochs = 20;
    std::size_t batch_size = 16;
    std::size_t max_len = 400;
    Truncate truncate = Truncate::KeepHead;
    double lr_lo = 0.0044;
    double lr_hi = 0.04;
    double weight_decay = 0.01;
    double clip_norm = 0.0;
    bool gradual_unfreeze = true;
    std::size_t epochs_per_stage = 1;
    /// Validation weighted F_beta whose first crossing is recorded; 0 = off.
    double target_fbeta = 0.0;
    bool stop_at_target = false;
    CycleConfig cycle;
    std::uint64_t seed = 0;
};

struct EpochRecord
{
    std::size_t epoch = 0;  ///< 1-based
    std::size_t stage = 0;
    double train_loss = 0.0;
    std::optional<double> valid_loss;
    std::optional<double> valid_fbeta;
    std::optional<double> valid_accuracy;

    nlohmann::json to_json() const;
};

/// Where a training run writes its artifacts. Empty dir disables output.
struct RunOutput
{
    std::filesystem::path dir;
    const Vocab* vocab = nullptr;
    nlohmann::json metadata = nlohmann::json::object();
};

struct LmTrainResult
{
    LanguageModel best;
    std::vector<EpochRecord> history;
    std::optional<double> best_valid_loss;
};

struct ClfTrainResult
{
    Classifier best;
    std::vector<EpochRecord> history;
    double best_fbeta = -1.0;  ///< stays -1 without a validation split
    std::size_t best_epoch = 0;
    std::optional<std::size_t> epochs_to_target;
};

/// Parameter trainability for unfreeze stage k: the head group is always
/// trainable and the k last encoder groups join it. Stage n_groups-1
/// unfreezes everything. Throws UsageError when stage >= n_groups.
void gradual_unfreeze(const std::vector<ad::Parameter<float>*>& params, std::size_t n_groups,
                      std::size_t stage);
void gradual_unfreeze(Classifier& clf, std::size_t stage);
std::size_t max_unfreeze_stage(const model::ModelConfig& config);

/// Sum of squared gradients over trainable parameters, then rescale to
/// max_norm when above it. Returns the norm before clipping.
double clip_grad_norm(const std::vector<ad::Parameter<float>*>& params, double max_norm);

/// Mean next-token loss in evaluation mode with state carried across steps.
/// Shrinks batch and bptt for small inputs; nullopt when under two tokens.
std::optional<double> evaluate_lm(LanguageModel& lm, const std::vector<std::vector<TokenId>>& seqs,
                                  std::size_t batch_size, std::size_t bptt);

struct ClfEvaluation
{
    std::vector<std::size_t> predicted;
    std::vector<std::size_t> actual;
    std::vector<double> probabilities;  ///< N x n_classes row-major
    double loss = 0.0;
};

/// Predictions in the order of examples.
ClfEvaluation evaluate_clf(Classifier& clf, const std::vector<Example>& examples,
                           std::size_t batch_size, std::size_t max_len,
                           Truncate truncate = Truncate::KeepHead);

/// Weighted F_beta (beta = 1) of an evaluation.
double weighted_fbeta(const ClfEvaluation& eval, std::size_t n_classes);

/// Throws NumericalError on a non-finite loss; the best checkpoint written
/// so far stays in the output directory.
LmTrainResult train_lm(LanguageModel& lm, const std::vector<std::vector<TokenId>>& train,
                       const std::vector<std::vector<TokenId>>& valid, const LmTrainConfig& config,
                       const RunOutput& output = {});

ClfTrainResult train_clf(Classifier& clf, const std::vector<Example>& train,
                         const std::vector<Example>& valid, const ClfTrainConfig& config,
                         const RunOutput& output = {});

/// Learning-rate sweep on language-model batches. Weights are restored
/// bitwise afterwards.
schedule::LrFinderResult lr_find_lm(LanguageModel& lm,
                                    const std::vector<std::vector<TokenId>>& train,
                                    const LmTrainConfig& config,
                                    const schedule::LrFinderOptions& options = {});

/// Learning-rate sweep on classifier batches with the encoder fully trainable.
schedule::LrFinderResult lr_find_clf(Classifier& clf, const std::vector<Example>& train,
                                     const ClfTrainConfig& config,
                                     const schedule::LrFinderOptions& options = {});

}  // namespace opsc::train
