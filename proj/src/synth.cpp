// opsc: opcode-sequence smart contract classifier
// Copyright 2026 The opsc Authors.
// Licensed under the Apache License, Version 2.0.

#include "opsc/synth.hpp"

#include "opsc/error.hpp"
#include "opsc/evm_disasm.hpp"
#include "opsc/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <ostream>

namespace opsc::synth
{
const std::vector<std::string_view>& noise_alphabet()
{
    static const std::vector<std::string_view> alphabet = {
        "ADD",    "SUB",     "MUL",      "AND",       "OR",     "EQ",     "LT",
        "GT",     "ISZERO",  "POP",      "MLOAD",     "MSTORE", "SLOAD",  "SSTORE",
        "JUMP",   "JUMPI",   "JUMPDEST", "CALLER",    "CALLVALUE", "CALL", "SELFDESTRUCT",
        "DUP1",   "SWAP1",   "PUSH1",    "PUSH2",
    };
    return alphabet;
}

const std::array<std::vector<std::string_view>, kNumClasses>& motifs()
{
    static const std::array<std::vector<std::string_view>, kNumClasses> m = {{
        {"CALLER", "SLOAD", "EQ", "JUMPI", "SELFDESTRUCT"},
        {"CALLVALUE", "ISZERO", "JUMPI", "CALLER", "CALL"},
        {"CALLVALUE", "SSTORE", "JUMPDEST", "POP", "JUMP"},
        {"CALLER", "SLOAD", "EQ", "ISZERO", "JUMPI"},
    }};
    return m;
}

namespace
{
void emit(std::vector<std::uint8_t>& code, std::string_view op, Rng& rng)
{
    const auto& table = evm::load_opcode_table();
    const auto byte = table.byte_of(op);
    if (!byte)
        throw UsageError("synthetic opcode '" + std::string(op) + "' is not in the opcode table");
    code.push_back(*byte);
    const auto info = table.lookup(*byte);
    for (std::size_t i = 0; i < info->immediate_bytes; ++i)
        code.push_back(static_cast<std::uint8_t>(rng.below(256)));
}

std::string address(Rng& rng)
{
    std::string out = "0x";
    char buf[17];
    for (int i = 0; i < 2; ++i)
    {
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(rng.next_u64()));
        out += buf;
    }
    std::snprintf(buf, sizeof buf, "%08llx",
                  static_cast<unsigned long long>(rng.next_u64() & 0xffffffffULL));
    out += buf;
    return out;
}

}  // namespace

std::vector<SynthRecord> generate(const SynthConfig& cfg)
{
    if (cfg.len_jitter > cfg.mean_len)
        throw UsageError("synthetic length jitter exceeds the mean length");
    const std::size_t motif_tokens = cfg.motif_copies * motifs()[0].size();
    if (cfg.mean_len - cfg.len_jitter < motif_tokens + 1)
        throw UsageError("synthetic contracts are too short for " +
                         std::to_string(cfg.motif_copies) + " motif copies");
    if (cfg.duplicate_normals > 0 && cfg.per_class == 0)
        throw UsageError("duplicate normals need at least one normal record");

    Rng rng(cfg.seed);
    const auto& alphabet = noise_alphabet();
    std::vector<SynthRecord> out;
    for (std::size_t k = 0; k < kNumClasses; ++k)
    {
        const auto& motif = motifs()[k];
        for (std::size_t n = 0; n < cfg.per_class; ++n)
        {
            const auto len =
                cfg.mean_len - cfg.len_jitter + static_cast<std::size_t>(rng.below(2 * cfg.len_jitter + 1));
            // Noise slots, then motif starts chosen among the gaps.
            const std::size_t noise = len - motif_tokens;
            std::vector<std::size_t> starts;
            for (std::size_t c = 0; c < cfg.motif_copies; ++c)
                starts.push_back(static_cast<std::size_t>(rng.below(noise + 1)));
            std::sort(starts.begin(), starts.end());

            std::vector<std::uint8_t> code;
            std::size_t next_motif = 0;
            for (std::size_t i = 0; i <= noise; ++i)
            {
                while (next_motif < starts.size() && starts[next_motif] == i)
                {
                    for (auto op : motif)
                        emit(code, op, rng);
                    ++next_motif;
                }
                if (i < noise)
                    emit(code, alphabet[rng.below(alphabet.size())], rng);
            }
            out.push_back({address(rng), evm::to_hex(code), label_from_index(k)});
        }
    }
    const std::size_t first_normal = out.size() - cfg.per_class;
    for (std::size_t d = 0; d < cfg.duplicate_normals; ++d)
    {
        const auto src = first_normal + static_cast<std::size_t>(rng.below(cfg.per_class));
        out.push_back({address(rng), out[src].bytecode, Label::Normal});
    }
    return out;
}

void write_jsonl(std::ostream& out, const std::vector<SynthRecord>& records)
{
    for (const auto& r : records)
    {
        const nlohmann::json j = {{"address", r.address},
                                  {"bytecode", r.bytecode},
                                  {"label", static_cast<int>(r.label)}};
        out << j.dump() << '\n';
    }
}

}  // namespace opsc::synth
