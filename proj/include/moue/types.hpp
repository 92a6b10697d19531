#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace moue {

// All core math is 64-bit: gradient checks against central finite
// differences need the headroom.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using IntMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Masking sentinel shared by every module; bit-exact IEEE -inf.
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Configuration / usage errors (bad keys, invalid values). CLI exit code 1.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Data and file-format errors (checkpoint magic/version/truncation,
/// missing files). CLI exit code 2.
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

/// Non-finite loss or gradient during training. CLI exit code 3.
struct DivergenceError : std::runtime_error {
  explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace moue
