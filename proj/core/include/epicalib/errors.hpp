#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace epicalib {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A simulated or derived quantity became NaN/Inf or left its valid range.
class NumericalFailure : public Error {
public:
    using Error::Error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

/// No compartment is observed where at least one is required.
class EmptyMask : public Error {
public:
    using Error::Error;
};

class GridMismatch : public Error {
public:
    using Error::Error;
};

/// The kernel gram matrix stayed indefinite after the jitter ladder hit its cap.
class FactorizationFailure : public Error {
public:
    using Error::Error;
};

class InnerOptFailure : public Error {
public:
    using Error::Error;
};

class OptFailure : public Error {
public:
    using Error::Error;
};

class ZeroZ : public Error {
public:
    using Error::Error;
};

class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, long step) : Error(what), step_(step) {}
    long step() const noexcept { return step_; }

private:
    long step_;
};

class MissingCountry : public Error {
public:
    using Error::Error;
};

class GapInSeries : public Error {
public:
    GapInSeries(const std::string& what, std::vector<std::string> missing)
        : Error(what), missing_(std::move(missing)) {}
    const std::vector<std::string>& missing_dates() const noexcept { return missing_; }

private:
    std::vector<std::string> missing_;
};

class MalformedRow : public Error {
public:
    MalformedRow(const std::string& what, long line) : Error(what), line_(line) {}
    long line() const noexcept { return line_; }

private:
    long line_;
};

/// Invalid user configuration (config file, flags, network document).
class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace epicalib
