#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace castel {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid model, scenario or formula input (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Reachability exploration hit its state limit.
class StateLimitError : public Error {
 public:
  StateLimitError(std::size_t limit, std::size_t explored, std::size_t frontier)
      : Error("state limit " + std::to_string(limit) + " exceeded (" + std::to_string(explored) +
              " states explored, frontier size " + std::to_string(frontier) + ")"),
        limit_(limit),
        explored_(explored),
        frontier_(frontier) {}

  std::size_t limit() const { return limit_; }
  std::size_t explored() const { return explored_; }
  std::size_t frontier() const { return frontier_; }

 private:
  std::size_t limit_;
  std::size_t explored_;
  std::size_t frontier_;
};

/// Syntax error in guard or formula text, with the byte offset of the problem.
class ParseError : public ConfigError {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : ConfigError(what + " at offset " + std::to_string(offset)), offset_(offset) {}

  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace castel
