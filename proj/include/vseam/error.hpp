#pragma once

#include <stdexcept>
#include <string>

namespace vseam {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidDimensionError : public Error {
 public:
  using Error::Error;
};

class OutOfRangeError : public Error {
 public:
  using Error::Error;
};

class ShapeMismatchError : public Error {
 public:
  using Error::Error;
};

class InvalidPlanError : public Error {
 public:
  using Error::Error;
};

class EmptyInputError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Invariant or precondition violation on user-supplied data.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A JSONL record failed schema checks. `line` is 1-based.
class SchemaError : public ValidationError {
 public:
  SchemaError(int line, std::string field, const std::string& what)
      : ValidationError("line " + std::to_string(line) + ": field '" + field +
                        "': " + what),
        line_(line),
        field_(std::move(field)) {}

  int line() const noexcept { return line_; }
  const std::string& field() const noexcept { return field_; }

 private:
  int line_;
  std::string field_;
};

/// Failure reported by an external tool client (segmenter, inpainter, ...).
class ClientError : public Error {
 public:
  ClientError(std::string client, const std::string& what)
      : Error(client + ": " + what), client_(std::move(client)) {}

  const std::string& client() const noexcept { return client_; }

 private:
  std::string client_;
};

/// A pipeline stage failed; carries the stage and its manifest path.
class StageError : public Error {
 public:
  StageError(std::string stage, std::string manifest, const std::string& what)
      : Error("stage '" + stage + "' failed (" + manifest + "): " + what),
        stage_(std::move(stage)),
        manifest_(std::move(manifest)) {}

  const std::string& stage() const noexcept { return stage_; }
  const std::string& manifest() const noexcept { return manifest_; }

 private:
  std::string stage_;
  std::string manifest_;
};

}  // namespace vseam
