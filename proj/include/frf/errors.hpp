// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace frf {

/// Shape or dimension mismatch between operands.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A documented precondition of an operation was violated.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// File-system level failure (missing file, short read, write failure).
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed text or binary input. Messages carry line/field context.
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input parsed but failed semantic validation.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised by the allocation meter when a configured byte cap would be exceeded.
class MemoryCapExceeded : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite values encountered in a numerical routine.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace frf
