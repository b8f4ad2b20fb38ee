#pragma once

#include <stdexcept>
#include <string>

namespace callisto {

/// I/O failure with the offending path attached.
class IoError : public std::runtime_error {
 public:
  IoError(const std::string& message, std::string path)
      : std::runtime_error(message + ": " + path), path_(std::move(path)) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// On-disk data failed validation (bad magic, truncated payload, id mismatch).
class CorruptionError : public IoError {
 public:
  using IoError::IoError;
};

/// Caller violated a runtime protocol, e.g. events for an unknown group.
class ProtocolError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace callisto
