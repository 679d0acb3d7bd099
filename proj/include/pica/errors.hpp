#ifndef PICA_ERRORS_HPP_
#define PICA_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace pica {

// Root of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Sequence, cache or context longer than the model allows.
class OverflowError : public Error {
 public:
  using Error::Error;
};

// Capture/intervention coordinates that do not address a real site.
class PlanError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  enum class Kind {
    kParse,
    kTruncated,
    kUnknownVersion,
    kShapeMismatch,
    kMissingTensor,
    kChecksumMismatch,
    kNonFinite,
  };

  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

class TokenizerError : public Error {
 public:
  using Error::Error;
};

class TemplateError : public Error {
 public:
  using Error::Error;
};

class DatasetError : public Error {
 public:
  using Error::Error;
};

class JudgeError : public Error {
 public:
  using Error::Error;
};

// Network failures, rate limiting and server errors; retried with backoff.
class TransientJudgeError : public JudgeError {
 public:
  using JudgeError::JudgeError;
};

}  // namespace pica

#endif  // PICA_ERRORS_HPP_
