#pragma once

#include <stdexcept>
#include <string>

namespace plip {

enum class ErrorCategory { config, data, numeric };

const char* category_name(ErrorCategory c) noexcept;

/// Base for every error the library throws on purpose. The CLI maps the
/// category onto its exit message.
class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& what)
        : std::runtime_error(what), category_(category) {}
    ErrorCategory category() const noexcept { return category_; }

private:
    ErrorCategory category_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ErrorCategory::config, what) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(ErrorCategory::data, what) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error(ErrorCategory::numeric, what) {}
};

class ShapeError : public DataError {
public:
    using DataError::DataError;
};

}  // namespace plip
