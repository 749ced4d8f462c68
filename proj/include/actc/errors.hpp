#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace actc {

// Label sequence cannot be aligned to the given number of frames.
class InfeasibleAlignmentError : public std::runtime_error {
public:
  explicit InfeasibleAlignmentError(const std::string& msg)
      : std::runtime_error(msg) {}
};

// Malformed dataset/checkpoint file. Carries the byte offset of the failure.
class ParseError : public std::runtime_error {
public:
  ParseError(const std::string& msg, std::size_t byte_offset)
      : std::runtime_error(msg + " (byte offset " +
                           std::to_string(byte_offset) + ")"),
        offset(byte_offset) {}
  std::size_t offset;
};

// A loss function handed to the gradient checker returned different values
// on repeated evaluation.
class InconsistencyError : public std::runtime_error {
public:
  explicit InconsistencyError(const std::string& msg)
      : std::runtime_error(msg) {}
};

}  // namespace actc
