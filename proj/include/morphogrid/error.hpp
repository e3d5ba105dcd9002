#pragma once

#include <stdexcept>
#include <string>

namespace morphogrid {

// Process exit codes used by the CLI.
enum class ExitCode : int { Ok = 0, Config = 2, Data = 3, Numeric = 4 };

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const noexcept { return ExitCode::Data; }
};

// Precondition on a call argument was violated.
struct ArgumentError : Error {
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::Config; }
};

struct ConfigError : Error {
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::Config; }
};

// Malformed input document. `line`/`offset` are 0 when unknown.
struct ParseError : Error {
  ParseError(const std::string& what, std::size_t line, std::size_t offset)
      : Error(what + " (line " + std::to_string(line) + ", offset " +
              std::to_string(offset) + ")"),
        line(line),
        offset(offset) {}
  std::size_t line;
  std::size_t offset;
};

// Input is well-formed but not in a supported format or schema.
struct FormatError : Error {
  using Error::Error;
};

struct NumericError : Error {
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::Numeric; }
};

}  // namespace morphogrid
