#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fedfair {

// Tensor or parameter shapes that do not line up.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A value or configuration violates a documented precondition.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed input text. Carries the 1-based line number it failed on.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Local training produced a non-finite loss or update.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t client_id, std::size_t round, const std::string& what)
      : std::runtime_error("client " + std::to_string(client_id) + ", round " +
                           std::to_string(round) + ": " + what),
        client_id_(client_id),
        round_(round) {}

  std::size_t client_id() const noexcept { return client_id_; }
  std::size_t round() const noexcept { return round_; }

 private:
  std::size_t client_id_;
  std::size_t round_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fedfair
