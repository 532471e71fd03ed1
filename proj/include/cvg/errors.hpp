#pragma once

#include <stdexcept>
#include <string>

namespace cvg {

// Base of every error raised by the library. Each subclass maps to one
// failure family so callers (the CLI in particular) can pick an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class AlignmentError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// A required artifact (earlier level, feature network) is absent.
class MissingPrerequisiteError : public Error {
 public:
  using Error::Error;
};

// A checkpoint exists but cannot be used: wrong format, fingerprint
// mismatch or statistics that are not valid for the requested use.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

// Raised when a training loss becomes non-finite; carries the path of the
// diagnostic checkpoint written before aborting (empty if none).
class NumericError : public Error {
 public:
  NumericError(const std::string& what, std::string diagnostic_path)
      : Error(what), diagnostic_path_(std::move(diagnostic_path)) {}
  const std::string& diagnostic_path() const { return diagnostic_path_; }

 private:
  std::string diagnostic_path_;
};

}  // namespace cvg
