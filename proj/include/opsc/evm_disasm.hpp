// opsc: opcode-sequence smart contract classifier
// Copyright 2026 The opsc Authors.
// Licensed under the Apache License, Version 2.0.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace opsc::evm
{
/// Token emitted for byte values with no defined instruction.
inline constexpr std::string_view kInvalidToken = "INVALID";

struct OpcodeInfo
{
    std::string_view mnemonic;
    std::uint8_t immediate_bytes = 0;
};

/// Byte value to instruction map. Undefined byte values have no entry.
class OpcodeTable
{
public:
    OpcodeTable() = default;

    std::optional<OpcodeInfo> lookup(std::uint8_t byte) const;
    std::optional<std::uint8_t> byte_of(std::string_view mnemonic) const;

    std::size_t size() const;
    bool defined(std::uint8_t byte) const { return entries_[byte].has_value(); }

    void set(std::uint8_t byte, OpcodeInfo info) { entries_[byte] = info; }

private:
    std::array<std::optional<OpcodeInfo>, 256> entries_{};
};

/// The canonical EVM instruction set (through Cancun). Mnemonics follow the
/// historical names used by contract-analysis tooling: 0x20 is SHA3, 0x44 is
/// DIFFICULTY, 0xff is SELFDESTRUCT and 0xfe is the designated INVALID.
const OpcodeTable& load_opcode_table();

struct OpcodeSequence
{
    std::vector<std::string> tokens;
    std::size_t source_len_bytes = 0;
};

struct DisasmOptions
{
    /// Map PUSH1..PUSH32 onto a single "PUSH" token.
    bool collapse_push = false;
};

/// Decode hex bytecode (optional 0x prefix, any case) into mnemonic tokens.
/// PUSH immediates are consumed without emitting tokens; a PUSH whose
/// immediate runs past the end emits its mnemonic and ends the scan.
/// Throws DataError on odd length or a non-hex digit.
OpcodeSequence disassemble(std::string_view bytecode_hex,
                           const OpcodeTable& table = load_opcode_table(),
                           const DisasmOptions& options = {});

/// Hex text to raw bytes, with the same validation rules as disassemble().
std::vector<std::uint8_t> parse_hex(std::string_view hex);

std::string to_hex(const std::vector<std::uint8_t>& bytes, bool prefix = true);

}  // namespace opsc::evm
