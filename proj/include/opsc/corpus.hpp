// opsc: opcode-sequence smart contract classifier
// Copyright 2026 The opsc Authors.
// Licensed under the Apache License, Version 2.0.

#pragma once

#include "opsc/evm_disasm.hpp"
#include "opsc/rng.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace opsc
{
/// Vulnerability classes. Numeric values are the corpus-file labels; the
/// composite Prodigal+Greedy label (5) is rejected at ingestion.
enum class Label : int
{
    Suicidal = 1,
    Prodigal = 2,
    Greedy = 3,
    Normal = 4,
};

inline constexpr std::size_t kNumClasses = 4;

std::string_view label_name(Label label);

/// 0-based class index used by the networks and the metrics.
inline std::size_t class_index(Label label) { return static_cast<std::size_t>(label) - 1; }
inline Label label_from_index(std::size_t index) { return static_cast<Label>(index + 1); }

struct ContractRecord
{
    std::string address;
    std::vector<std::string> tokens;
    Label label = Label::Normal;
};

struct IngestStats
{
    std::array<std::size_t, kNumClasses> per_label{};
    std::size_t skipped_composite = 0;  ///< label 5 records
    std::size_t skipped_empty = 0;      ///< records that decode to zero tokens
};

struct IngestResult
{
    std::vector<ContractRecord> records;
    IngestStats stats;
};

/// Parse a line-delimited JSON corpus. Each line is
/// {"address": str, "bytecode": hex | "tokens": [str], "label": 1..5}.
/// Throws DataError naming the line on malformed input or duplicate address.
IngestResult ingest(std::istream& in, const evm::DisasmOptions& disasm = {});
IngestResult ingest(const std::filesystem::path& path, const evm::DisasmOptions& disasm = {});

/// Write records in the tokens form of the corpus format.
void write_corpus(std::ostream& out, const std::vector<ContractRecord>& records);

/// Keep every vulnerable record; keep only the first Normal record for each
/// distinct token sequence. Order is otherwise preserved.
std::vector<ContractRecord> dedup_normals(const std::vector<ContractRecord>& records);

struct SplitRatios
{
    double train = 0.70;
    double valid = 0.15;
    double test = 0.15;
};

/// Which split receives the rounding remainder. With TrainRemainder valid and
/// test get floor(ratio * n); with TestRemainder train and valid are floored.
enum class SplitRounding
{
    TrainRemainder,
    TestRemainder,
};

struct SplitSizes
{
    std::size_t train = 0;
    std::size_t valid = 0;
    std::size_t test = 0;
};

/// Per-class split sizes. Classes with at least 3 records get at least one
/// record in every split.
SplitSizes split_sizes(std::size_t n, const SplitRatios& ratios,
                       SplitRounding rounding = SplitRounding::TrainRemainder);

struct SplitDataset
{
    std::vector<ContractRecord> train;
    std::vector<ContractRecord> valid;
    std::vector<ContractRecord> test;
    std::uint64_t seed = 0;
    SplitRatios ratios;
};

/// Shuffle each class with the seed and cut it at the given ratios.
/// Throws DataError when a present class has fewer than 3 records.
SplitDataset stratified_split(const std::vector<ContractRecord>& records,
                              const SplitRatios& ratios, std::uint64_t seed,
                              SplitRounding rounding = SplitRounding::TrainRemainder);

/// Split manifest: addresses per split plus seed and ratios.
void write_split_manifest(std::ostream& out, const SplitDataset& split);

/// Rebuild a split from a manifest and the records it refers to.
SplitDataset apply_split_manifest(std::istream& manifest,
                                  const std::vector<ContractRecord>& records);

using TokenId = std::int32_t;

class Vocab
{
public:
    static constexpr TokenId kPad = 0;
    static constexpr TokenId kUnk = 1;
    static constexpr TokenId kBos = 2;
    static constexpr std::size_t kNumReserved = 3;

    Vocab();

    /// Tokens with frequency >= min_freq, most frequent first, ties broken
    /// lexicographically. Throws DataError on an empty training split.
    static Vocab build(const std::vector<ContractRecord>& train, std::size_t min_freq = 1);
    static Vocab from_tokens(std::vector<std::string> itos);

    TokenId id(std::string_view token) const;
    const std::string& token(TokenId id) const { return itos_.at(static_cast<std::size_t>(id)); }
    bool contains(std::string_view token) const;
    std::size_t size() const { return itos_.size(); }
    const std::vector<std::string>& tokens() const { return itos_; }

    /// FNV-1a 64 over the TSV serialization, as 16 hex digits.
    std::string content_hash() const;

    void save(std::ostream& out) const;
    static Vocab load(std::istream& in);

    bool operator==(const Vocab& other) const { return itos_ == other.itos_; }

private:
    std::vector<std::string> itos_;
    std::unordered_map<std::string, TokenId> stoi_;
};

/// BOS followed by token ids; unknown tokens map to UNK.
std::vector<TokenId> numericalize(const std::vector<std::string>& tokens, const Vocab& vocab);

/// A numericalized, labeled sequence.
struct Example
{
    std::vector<TokenId> ids;
    std::size_t label = 0;  ///< class index 0..3
};

std::vector<Example> make_examples(const std::vector<ContractRecord>& records, const Vocab& vocab);

/// One language-model step. Matrices are row-major batch_size x bptt.
struct LmBatch
{
    std::size_t batch_size = 0;
    std::size_t bptt = 0;
    std::vector<TokenId> inputs;
    std::vector<TokenId> targets;

    TokenId input(std::size_t row, std::size_t col) const { return inputs[row * bptt + col]; }
    TokenId target(std::size_t row, std::size_t col) const { return targets[row * bptt + col]; }
};

/// Concatenates the sequences into batch_size parallel streams and walks them
/// bptt tokens at a time. Consecutive batches continue each stream, so hidden
/// state may be carried between them. Only full steps are produced.
class LmBatchStream
{
public:
    LmBatchStream(const std::vector<std::vector<TokenId>>& sequences, std::size_t batch_size,
                  std::size_t bptt);

    std::size_t num_steps() const { return num_steps_; }
    std::size_t stream_length() const { return stream_len_; }

    bool next(LmBatch& batch);
    void reset() { step_ = 0; }

private:
    std::vector<TokenId> data_;  // batch_size rows of stream_len_
    std::size_t batch_size_;
    std::size_t bptt_;
    std::size_t stream_len_ = 0;
    std::size_t num_steps_ = 0;
    std::size_t step_ = 0;
};

/// Padded classification batch. ids is row-major batch_size x width.
struct ClfBatch
{
    std::size_t batch_size = 0;
    std::size_t width = 0;
    std::vector<TokenId> ids;
    std::vector<std::size_t> lengths;
    std::vector<std::size_t> labels;
    std::vector<std::size_t> indices;  ///< positions in the source example list

    TokenId id(std::size_t row, std::size_t col) const { return ids[row * width + col]; }
};

enum class Truncate
{
    KeepHead,
    KeepTail,
};

/// Group examples of similar length into padded batches. With an rng the
/// grouping and batch order are shuffled (training); without one examples
/// are sorted by length, longest first.
std::vector<ClfBatch> clf_batches(const std::vector<Example>& examples, std::size_t batch_size,
                                  std::size_t max_len, Rng* rng = nullptr,
                                  Truncate truncate = Truncate::KeepHead);

}  // namespace opsc
