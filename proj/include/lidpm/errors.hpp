#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lidpm {

// Malformed or unreadable input data (files, poses, labels).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Record-alignment or format violation at a known byte offset.
class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : DataError(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// A sampler or training run produced a non-finite value.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, double step)
      : std::runtime_error(what), step_(step) {}

  // Diffusion step at which the failure was detected.
  double step() const noexcept { return step_; }

 private:
  double step_;
};

}  // namespace lidpm
