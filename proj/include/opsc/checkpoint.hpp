// opsc: opcode-sequence smart contract classifier
// Copyright 2026 The opsc Authors.
// Licensed under the Apache License, Version 2.0.

#pragma once

// Binary checkpoint layout, all integers little-endian:
//
//   "OPSC" | u32 version | u32 header_len | header JSON
//   u32 n_records | n_records x (u32 name_len | name | u32 rank | rank x u64 dim |
//                                prod(dims) x f32 value)
//
// The header holds the model kind, the vocabulary and its content hash, the
// model hyperparameters and free-form metadata.

#include "opsc/corpus.hpp"
#include "opsc/model.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace opsc::checkpoint
{
inline constexpr std::uint32_t kVersion = 1;

enum class Kind
{
    LanguageModel,
    Classifier,
};

std::string kind_name(Kind kind);

struct Record
{
    std::string name;
    ad::Tensor<float> value;
};

struct Checkpoint
{
    Kind kind = Kind::LanguageModel;
    Vocab vocab;
    model::ModelConfig config;
    nlohmann::json metadata = nlohmann::json::object();
    std::vector<Record> records;
};

void write(std::ostream& out, const Checkpoint& ckpt);
/// Throws CheckpointError on bad magic or version, a header whose vocab
/// hash does not match its vocabulary, or a truncated record (named).
Checkpoint read(std::istream& in);

void save(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load(const std::filesystem::path& path);

Checkpoint from_model(const model::LanguageModel<float>& lm, const Vocab& vocab,
                      nlohmann::json metadata = nlohmann::json::object());
Checkpoint from_model(const model::Classifier<float>& clf, const Vocab& vocab,
                      nlohmann::json metadata = nlohmann::json::object());

/// Rebuild a model. Throws CheckpointError on a kind mismatch, a missing,
/// unexpected or misshapen parameter, or (when expected_vocab is given) a
/// vocabulary hash mismatch.
model::LanguageModel<float> to_language_model(const Checkpoint& ckpt,
                                              const Vocab* expected_vocab = nullptr);
model::Classifier<float> to_classifier(const Checkpoint& ckpt,
                                       const Vocab* expected_vocab = nullptr);

/// Copy record values into matching parameters and buffers by name. Every
/// record must be consumed.
void assign(const Checkpoint& ckpt, const std::vector<ad::Parameter<float>*>& params,
            const std::vector<std::pair<std::string, ad::Tensor<float>*>>& buffers = {});

}  // namespace opsc::checkpoint
