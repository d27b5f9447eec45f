#pragma once

#include <stdexcept>
#include <string>

namespace pyraflow {

// All library errors carry a short machine-readable kind plus a detail
// message; the CLI maps kinds to exit codes and prints
// "error: <kind>: <detail>".
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& detail)
        : std::runtime_error(kind + ": " + detail), kind_(std::move(kind)) {}

    const std::string& kind() const { return kind_; }

private:
    std::string kind_;
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& m) : Error("config", m) {}
};

struct DataError : Error {
    explicit DataError(const std::string& m) : Error("data", m) {}
};

struct FormatError : Error {
    explicit FormatError(const std::string& m) : Error("format", m) {}
};

struct IoError : Error {
    explicit IoError(const std::string& m) : Error("io", m) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& m) : Error("numeric", m) {}
};

struct UsageError : Error {
    explicit UsageError(const std::string& m) : Error("usage", m) {}
};

}  // namespace pyraflow
