// Copyright 2026 The serireg authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace serireg {

/// Base of all serireg exceptions. The three direct subclasses map onto the
/// CLI exit-code families: ConfigError -> 2, DataError -> 3, NumericError -> 4.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

// -- config errors ----------------------------------------------------------

class InvalidSpec : public ConfigError {
public:
    using ConfigError::ConfigError;
};

// -- data errors -------------------------------------------------------------

class MissingSlice : public DataError {
public:
    MissingSlice(const std::string& msg, int slice_index)
        : DataError(msg), index(slice_index) {}
    int index;
};

class DimensionMismatch : public DataError {
public:
    using DataError::DataError;
};

class UnsupportedFormat : public DataError {
public:
    using DataError::DataError;
};

class IoFailure : public DataError {
public:
    using DataError::DataError;
};

class HeaderMismatch : public DataError {
public:
    using DataError::DataError;
};

class TruncatedFile : public DataError {
public:
    using DataError::DataError;
};

class ConventionMismatch : public DataError {
public:
    using DataError::DataError;
};

class SliceSetMismatch : public DataError {
public:
    using DataError::DataError;
};

class EmptyMask : public DataError {
public:
    using DataError::DataError;
};

// -- numeric errors ----------------------------------------------------------

/// Fixed-point field inversion (or an optimizer) ran out of iterations.
/// Carries the best residual attained so callers can decide how bad it is.
class NotConverged : public NumericError {
public:
    NotConverged(const std::string& msg, double residual, int iters)
        : NumericError(msg), best_residual(residual), iterations(iters) {}
    double best_residual;
    int iterations;
};

/// Similarity is undefined because one input has zero variance.
class FlatImage : public NumericError {
public:
    using NumericError::NumericError;
};

/// Energy or gradient became NaN/Inf; usually a step size or lambda problem.
class NonFinite : public NumericError {
public:
    using NumericError::NumericError;
};

} // namespace serireg
