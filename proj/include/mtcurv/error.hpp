#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mtcurv {

/// Precondition or shape violation on the caller's side.
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed, truncated or unreadable data on disk.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
  DataError(const std::string& path, const std::string& what)
      : std::runtime_error(path + ": " + what), path_(path) {}
  DataError(const std::string& path, std::uint64_t offset, const std::string& what)
      : std::runtime_error(path + " @ byte " + std::to_string(offset) + ": " + what),
        path_(path),
        offset_(offset) {}

  const std::string& path() const noexcept { return path_; }
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::string path_;
  std::uint64_t offset_ = 0;
};

/// NaN/Inf in a forward value, loss or gradient.
class NumericFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mtcurv
