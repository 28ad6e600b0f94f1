#pragma once

#include <stdexcept>
#include <string>

namespace tsap {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an operation's precondition (non-scalar loss, bad config).
class ContractError : public Error {
 public:
  using Error::Error;
};

class InvalidParams : public Error {
 public:
  using Error::Error;
};

/// NaN/inf appeared where the computation requires finite values.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Every row of an embedding must have non-vanishing norm before
/// normalization; collapse to zero is reported instead of divided through.
class DegenerateEmbedding : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class MetricError : public Error {
 public:
  using Error::Error;
};

/// Failure attributed to one stage of an experiment pipeline.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("[" + stage + "] " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

}  // namespace tsap
