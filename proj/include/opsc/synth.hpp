// opsc: opcode-sequence smart contract classifier
// Copyright 2026 The opsc Authors.
// Licensed under the Apache License, Version 2.0.

#pragma once

// Labeled synthetic corpus for desk-scale checks. Each class owns a short
// opcode motif planted into uniform opcode noise. Motifs reuse the noise
// alphabet, so single opcodes carry little class signal and the order of
// the motif carries most of it.

#include "opsc/corpus.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace opsc::synth
{
struct SynthConfig
{
    std::size_t per_class = 50;
    std::size_t mean_len = 120;    ///< opcode count
    std::size_t len_jitter = 40;   ///< lengths are uniform in mean +- jitter
    std::size_t motif_copies = 2;  ///< motif occurrences per contract
    std::size_t duplicate_normals = 0;  ///< extra Normal records copying an earlier one
    std::uint64_t seed = 0;
};

struct SynthRecord
{
    std::string address;
    std::string bytecode;  ///< 0x-prefixed hex
    Label label = Label::Normal;
};

/// The opcodes noise is drawn from.
const std::vector<std::string_view>& noise_alphabet();
/// The motif planted for each class, indexed by class index.
const std::array<std::vector<std::string_view>, kNumClasses>& motifs();

/// Records grouped by class, Type-1 first; duplicates follow the Normals.
std::vector<SynthRecord> generate(const SynthConfig& config);

/// One JSON object per line in the corpus-file format.
void write_jsonl(std::ostream& out, const std::vector<SynthRecord>& records);

}  // namespace opsc::synth
