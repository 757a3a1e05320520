#pragma once

#include <stdexcept>
#include <string>

namespace fedbug {

// Process exit codes used by the command-line front end.
enum class ExitCode : int {
    kOk = 0,
    kConfig = 2,
    kData = 3,
    kNumeric = 4,
};

class Error : public std::runtime_error {
public:
    Error(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    ExitCode code() const noexcept { return code_; }

private:
    ExitCode code_;
};

/// Invalid configuration, shape mismatch, or out-of-range argument.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ExitCode::kConfig, what) {}
};

/// Malformed or inconsistent input data.
class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(ExitCode::kData, what) {}
};

/// Non-finite values or divergence during a computation.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error(ExitCode::kNumeric, what) {}
};

/// Argument outside the mathematical domain of a closed-form routine.
class DomainError : public Error {
public:
    explicit DomainError(const std::string& what) : Error(ExitCode::kConfig, what) {}
};

}  // namespace fedbug
