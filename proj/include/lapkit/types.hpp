#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace lapkit {

using Real = double;
using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr Real kLog2Pi = 1.8378770664093454835606594728112352797;

enum class ErrorCode {
  InvalidMatrix,
  NotPositiveDefinite,
  InvalidInput,
  TrainingDiverged,
  UnsupportedCombination,
  UnsupportedMode,
  InvalidRank,
  TooLarge,
  InvalidPrior,
  InvalidSize,
  InvalidVariance,
  BridgeDegenerate,
  MissingData,
  InvalidState,
  InvalidDistribution,
};

/// Library-wide exception carrying a machine-checkable error code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const { return code_; }

  /// Numeric failures (as opposed to invalid configuration/input).
  bool numeric() const {
    return code_ == ErrorCode::NotPositiveDefinite ||
           code_ == ErrorCode::TrainingDiverged ||
           code_ == ErrorCode::BridgeDegenerate;
  }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace lapkit
