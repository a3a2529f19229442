// opsc: opcode-sequence smart contract classifier
// Copyright 2026 The opsc Authors.
// Licensed under the Apache License, Version 2.0.

#include "opsc/evm_disasm.hpp"

#include "opsc/error.hpp"

#include <string>

namespace opsc::evm
{
namespace
{
constexpr std::string_view kPushNames[] = {"PUSH1", "PUSH2", "PUSH3", "PUSH4", "PUSH5", "PUSH6",
    "PUSH7", "PUSH8", "PUSH9", "PUSH10", "PUSH11", "PUSH12", "PUSH13", "PUSH14", "PUSH15",
    "PUSH16", "PUSH17", "PUSH18", "PUSH19", "PUSH20", "PUSH21", "PUSH22", "PUSH23", "PUSH24",
    "PUSH25", "PUSH26", "PUSH27", "PUSH28", "PUSH29", "PUSH30", "PUSH31", "PUSH32"};

constexpr std::string_view kDupNames[] = {"DUP1", "DUP2", "DUP3", "DUP4", "DUP5", "DUP6", "DUP7",
    "DUP8", "DUP9", "DUP10", "DUP11", "DUP12", "DUP13", "DUP14", "DUP15", "DUP16"};

constexpr std::string_view kSwapNames[] = {"SWAP1", "SWAP2", "SWAP3", "SWAP4", "SWAP5", "SWAP6",
    "SWAP7", "SWAP8", "SWAP9", "SWAP10", "SWAP11", "SWAP12", "SWAP13", "SWAP14", "SWAP15",
    "SWAP16"};

constexpr std::string_view kLogNames[] = {"LOG0", "LOG1", "LOG2", "LOG3", "LOG4"};

struct Simple
{
    std::uint8_t byte;
    std::string_view name;
};

constexpr Simple kSimple[] = {
    {0x00, "STOP"}, {0x01, "ADD"}, {0x02, "MUL"}, {0x03, "SUB"}, {0x04, "DIV"}, {0x05, "SDIV"},
    {0x06, "MOD"}, {0x07, "SMOD"}, {0x08, "ADDMOD"}, {0x09, "MULMOD"}, {0x0a, "EXP"},
    {0x0b, "SIGNEXTEND"},

    {0x10, "LT"}, {0x11, "GT"}, {0x12, "SLT"}, {0x13, "SGT"}, {0x14, "EQ"}, {0x15, "ISZERO"},
    {0x16, "AND"}, {0x17, "OR"}, {0x18, "XOR"}, {0x19, "NOT"}, {0x1a, "BYTE"}, {0x1b, "SHL"},
    {0x1c, "SHR"}, {0x1d, "SAR"},

    {0x20, "SHA3"},

    {0x30, "ADDRESS"}, {0x31, "BALANCE"}, {0x32, "ORIGIN"}, {0x33, "CALLER"},
    {0x34, "CALLVALUE"}, {0x35, "CALLDATALOAD"}, {0x36, "CALLDATASIZE"},
    {0x37, "CALLDATACOPY"}, {0x38, "CODESIZE"}, {0x39, "CODECOPY"}, {0x3a, "GASPRICE"},
    {0x3b, "EXTCODESIZE"}, {0x3c, "EXTCODECOPY"}, {0x3d, "RETURNDATASIZE"},
    {0x3e, "RETURNDATACOPY"}, {0x3f, "EXTCODEHASH"},

    {0x40, "BLOCKHASH"}, {0x41, "COINBASE"}, {0x42, "TIMESTAMP"}, {0x43, "NUMBER"},
    {0x44, "DIFFICULTY"}, {0x45, "GASLIMIT"}, {0x46, "CHAINID"}, {0x47, "SELFBALANCE"},
    {0x48, "BASEFEE"}, {0x49, "BLOBHASH"}, {0x4a, "BLOBBASEFEE"},

    {0x50, "POP"}, {0x51, "MLOAD"}, {0x52, "MSTORE"}, {0x53, "MSTORE8"}, {0x54, "SLOAD"},
    {0x55, "SSTORE"}, {0x56, "JUMP"}, {0x57, "JUMPI"}, {0x58, "PC"}, {0x59, "MSIZE"},
    {0x5a, "GAS"}, {0x5b, "JUMPDEST"}, {0x5c, "TLOAD"}, {0x5d, "TSTORE"}, {0x5e, "MCOPY"},
    {0x5f, "PUSH0"},

    {0xf0, "CREATE"}, {0xf1, "CALL"}, {0xf2, "CALLCODE"}, {0xf3, "RETURN"},
    {0xf4, "DELEGATECALL"}, {0xf5, "CREATE2"}, {0xfa, "STATICCALL"}, {0xfd, "REVERT"},
    {0xfe, "INVALID"}, {0xff, "SELFDESTRUCT"},
};

OpcodeTable build_table()
{
    OpcodeTable t;
    for (const auto& s : kSimple)
        t.set(s.byte, {s.name, 0});
    for (int k = 0; k < 32; ++k)
        t.set(static_cast<std::uint8_t>(0x60 + k), {kPushNames[k], static_cast<std::uint8_t>(k + 1)});
    for (int k = 0; k < 16; ++k)
    {
        t.set(static_cast<std::uint8_t>(0x80 + k), {kDupNames[k], 0});
        t.set(static_cast<std::uint8_t>(0x90 + k), {kSwapNames[k], 0});
    }
    for (int k = 0; k < 5; ++k)
        t.set(static_cast<std::uint8_t>(0xa0 + k), {kLogNames[k], 0});
    return t;
}

int hex_value(char c) noexcept
{
    if (c >= '0' && c <= '9')
        return c - '0';
    if (c >= 'a' && c <= 'f')
        return c - 'a' + 10;
    if (c >= 'A' && c <= 'F')
        return c - 'A' + 10;
    return -1;
}

std::string_view strip_prefix(std::string_view hex) noexcept
{
    if (hex.size() >= 2 && hex[0] == '0' && (hex[1] == 'x' || hex[1] == 'X'))
        hex.remove_prefix(2);
    return hex;
}

}  // namespace

std::optional<OpcodeInfo> OpcodeTable::lookup(std::uint8_t byte) const
{
    return entries_[byte];
}

std::optional<std::uint8_t> OpcodeTable::byte_of(std::string_view mnemonic) const
{
    for (std::size_t b = 0; b < entries_.size(); ++b)
        if (entries_[b] && entries_[b]->mnemonic == mnemonic)
            return static_cast<std::uint8_t>(b);
    return std::nullopt;
}

std::size_t OpcodeTable::size() const
{
    std::size_t n = 0;
    for (const auto& e : entries_)
        n += e.has_value();
    return n;
}

const OpcodeTable& load_opcode_table()
{
    static const OpcodeTable table = build_table();
    return table;
}

std::vector<std::uint8_t> parse_hex(std::string_view hex)
{
    hex = strip_prefix(hex);
    if (hex.size() % 2 != 0)
        throw DataError("malformed bytecode: odd number of hex digits (byte offset " +
                        std::to_string(hex.size() / 2) + " is incomplete)");
    std::vector<std::uint8_t> bytes(hex.size() / 2);
    for (std::size_t i = 0; i < bytes.size(); ++i)
    {
        const int hi = hex_value(hex[2 * i]);
        const int lo = hex_value(hex[2 * i + 1]);
        if (hi < 0 || lo < 0)
            throw DataError("malformed bytecode: non-hex character at byte offset " +
                            std::to_string(i));
        bytes[i] = static_cast<std::uint8_t>((hi << 4) | lo);
    }
    return bytes;
}

std::string to_hex(const std::vector<std::uint8_t>& bytes, bool prefix)
{
    static constexpr char digits[] = "0123456789abcdef";
    std::string out = prefix ? "0x" : "";
    out.reserve(out.size() + 2 * bytes.size());
    for (auto b : bytes)
    {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0xf]);
    }
    return out;
}

OpcodeSequence disassemble(std::string_view bytecode_hex, const OpcodeTable& table,
                           const DisasmOptions& options)
{
    const auto bytes = parse_hex(bytecode_hex);
    OpcodeSequence seq;
    seq.source_len_bytes = bytes.size();
    seq.tokens.reserve(bytes.size());

    std::size_t pc = 0;
    while (pc < bytes.size())
    {
        const auto info = table.lookup(bytes[pc]);
        if (!info)
        {
            seq.tokens.emplace_back(kInvalidToken);
            ++pc;
            continue;
        }
        if (options.collapse_push && info->immediate_bytes > 0)
            seq.tokens.emplace_back("PUSH");
        else
            seq.tokens.emplace_back(info->mnemonic);
        pc += 1 + info->immediate_bytes;
    }
    return seq;
}

}  // namespace opsc::evm
