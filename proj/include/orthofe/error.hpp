#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace orthofe {

enum class ErrorKind {
  MissingCell,
  DuplicateRow,
  NonNumericValue,
  BadHeader,
  IdMismatch,
  InvalidFoldCount,
  SingletonGroupPeriod,
  RankDeficientDesign,
  HorizonTooLarge,
  InvalidArgument,
  FoldTooSmall,
  SpecMismatch,
  SingularNestedFit,
  SingularJacobian,
  RankDeficientJacobian,
  DegenerateRegressor,
  TooManyFailures,
  EstimationFailed,
};

std::string_view to_string(ErrorKind kind);

/// Library error. `kind()` distinguishes data errors (bad input files) from
/// numerical failures so callers such as the CLI can map them to exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  bool is_data_error() const noexcept {
    switch (kind_) {
      case ErrorKind::MissingCell:
      case ErrorKind::DuplicateRow:
      case ErrorKind::NonNumericValue:
      case ErrorKind::BadHeader:
      case ErrorKind::IdMismatch:
      case ErrorKind::SingletonGroupPeriod:
        return true;
      default:
        return false;
    }
  }

 private:
  ErrorKind kind_;
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MissingCell: return "MissingCell";
    case ErrorKind::DuplicateRow: return "DuplicateRow";
    case ErrorKind::NonNumericValue: return "NonNumericValue";
    case ErrorKind::BadHeader: return "BadHeader";
    case ErrorKind::IdMismatch: return "IdMismatch";
    case ErrorKind::InvalidFoldCount: return "InvalidFoldCount";
    case ErrorKind::SingletonGroupPeriod: return "SingletonGroupPeriod";
    case ErrorKind::RankDeficientDesign: return "RankDeficientDesign";
    case ErrorKind::HorizonTooLarge: return "HorizonTooLarge";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::FoldTooSmall: return "FoldTooSmall";
    case ErrorKind::SpecMismatch: return "SpecMismatch";
    case ErrorKind::SingularNestedFit: return "SingularNestedFit";
    case ErrorKind::SingularJacobian: return "SingularJacobian";
    case ErrorKind::RankDeficientJacobian: return "RankDeficientJacobian";
    case ErrorKind::DegenerateRegressor: return "DegenerateRegressor";
    case ErrorKind::TooManyFailures: return "TooManyFailures";
    case ErrorKind::EstimationFailed: return "EstimationFailed";
  }
  return "Unknown";
}

}  // namespace orthofe
