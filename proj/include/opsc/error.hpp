// opsc: opcode-sequence smart contract classifier
// Copyright 2026 The opsc Authors.
// Licensed under the Apache License, Version 2.0.

#pragma once

#include <stdexcept>
#include <string>

namespace opsc
{
/// Base class of every error raised by the library. The CLI maps each
/// subclass onto a distinct process exit code.
class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// Invalid arguments or configuration (exit code 2).
class UsageError : public Error
{
public:
    using Error::Error;
};

/// Malformed or unusable input data: bytecode, corpus lines, splits (exit code 3).
class DataError : public Error
{
public:
    using Error::Error;
};

/// Checkpoint format, integrity, or compatibility failure (exit code 4).
class CheckpointError : public Error
{
public:
    using Error::Error;
};

/// Non-finite losses or gradients, shape errors inside numerics (exit code 5).
class NumericalError : public Error
{
public:
    using Error::Error;
};

class ShapeError : public NumericalError
{
public:
    using NumericalError::NumericalError;
};

}  // namespace opsc
