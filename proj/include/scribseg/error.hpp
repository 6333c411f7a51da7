#pragma once

#include <stdexcept>
#include <string>

namespace scribseg {

// Exception categories map one-to-one onto CLI exit codes.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class ExitCode : int { ok = 0, config = 2, data = 3, numerical = 4 };

// Non-fatal conditions ("no supervision available", ...) are routed here so
// tests and the CLI can observe them. Default sink writes to stderr once per
// distinct message.
void warn(const std::string& message);
void set_warning_sink(void (*sink)(const std::string&));

}  // namespace scribseg
