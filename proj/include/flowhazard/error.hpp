#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace flowhazard {

enum class ErrorKind {
  MissingInput,
  MissingColumn,
  EmptyInput,
  MalformedRow,
  SchemaMismatch,
  LengthMismatch,
  InvalidSpec,
  InvalidConfig,
  DegenerateData,
  NonFinite,
  NoEvents,
  SingularHessian,
  NonConvergence,
  AccuracyGateFailed,
  AllIterationsFailed,
};

constexpr std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::MissingInput: return "MissingInput";
    case ErrorKind::MissingColumn: return "MissingColumn";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::MalformedRow: return "MalformedRow";
    case ErrorKind::SchemaMismatch: return "SchemaMismatch";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::InvalidSpec: return "InvalidSpec";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::DegenerateData: return "DegenerateData";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::NoEvents: return "NoEvents";
    case ErrorKind::SingularHessian: return "SingularHessian";
    case ErrorKind::NonConvergence: return "NonConvergence";
    case ErrorKind::AccuracyGateFailed: return "AccuracyGateFailed";
    case ErrorKind::AllIterationsFailed: return "AllIterationsFailed";
  }
  return "Unknown";
}

/// Exception carrying a machine-readable kind alongside the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Raised when a trained model fails the held-out accuracy gate.
class AccuracyGateError : public Error {
 public:
  AccuracyGateError(double achieved, double required)
      : Error(ErrorKind::AccuracyGateFailed,
              "held-out accuracy " + std::to_string(achieved) + " below gate " +
                  std::to_string(required)),
        achieved_(achieved),
        required_(required) {}

  double achieved() const noexcept { return achieved_; }
  double required() const noexcept { return required_; }

 private:
  double achieved_;
  double required_;
};

}  // namespace flowhazard
