// opsc: opcode-sequence smart contract classifier
// Copyright 2026 The opsc Authors.
// Licensed under the Apache License, Version 2.0.

#pragma once

#include "opsc/corpus.hpp"
#include "opsc/model.hpp"
#include "opsc/trainer.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>

namespace opsc
{
struct CorpusConfig
{
    std::size_t min_freq = 1;
    bool collapse_push = false;
    SplitRatios ratios;
    SplitRounding rounding = SplitRounding::TrainRemainder;
};

/// Every knob of a pipeline run. The JSON form has the sections "corpus",
/// "model", "lm" and "clf" plus top-level "seed" and "preset"; unknown keys
/// are rejected. The model vocabulary size is filled from the vocab file.
struct RunConfig
{
    std::string preset = "desk";
    std::uint64_t seed = 0;
    CorpusConfig corpus;
    model::ModelConfig model;
    train::LmTrainConfig lm;
    train::ClfTrainConfig clf;

    /// "desk" (64/64, 10 + 20 epochs), "synth" (desk dims, no dropout,
    /// 30 + 50 epochs), "full" (400/1150) or "paper" (full dims, 132
    /// classifier epochs). Throws UsageError for other names.
    static RunConfig preset_config(const std::string& name);

    /// Start from j["preset"] (default desk) and apply the given keys.
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::filesystem::path& path);
    nlohmann::json to_json() const;
    void save(const std::filesystem::path& path) const;

    /// Trainer seeds derived from the run seed.
    train::LmTrainConfig lm_config() const;
    train::ClfTrainConfig clf_config() const;
};

}  // namespace opsc
