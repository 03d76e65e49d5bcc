// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace smatch {

// Shapes of operands are incompatible.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A documented precondition of an operation was violated by the caller.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Non-finite values reached an operation that refuses them.
class NumericError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// User-supplied data (keypoints, paths, annotation files) is unusable.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A binary file did not parse. offset() is the byte position of the problem.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

// A computation would exceed a configured or physical memory budget.
class ResourceError : public std::runtime_error {
 public:
  ResourceError(const std::string& what, std::uint64_t requested_elements)
      : std::runtime_error(what + " (requested " +
                           std::to_string(requested_elements) + " elements)"),
        requested_(requested_elements) {}
  std::uint64_t requested_elements() const noexcept { return requested_; }

 private:
  std::uint64_t requested_;
};

}  // namespace smatch
