#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace seqsleep {

// Dense row-major matrix used throughout; rows index samples/time steps,
// columns index features.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Additive floor for log-power spectra, and the posterior floor applied before
// any log in the loss and in ensemble aggregation.
inline constexpr double kLogFloor = 1e-12;

inline constexpr std::size_t kNumStages = 5;

enum class Stage : std::uint8_t { W = 0, N1 = 1, N2 = 2, N3 = 3, REM = 4 };

inline constexpr std::array<std::string_view, kNumStages> kStageNames = {"W", "N1", "N2", "N3",
                                                                          "REM"};

inline std::string_view stage_name(Stage s) { return kStageNames[static_cast<std::size_t>(s)]; }
inline std::size_t stage_index(Stage s) { return static_cast<std::size_t>(s); }

// Error hierarchy. The CLI maps each family onto an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad flags, missing files, invalid configuration (exit 1).
class UsageError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent data (exit 2).
class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite values, divergence (exit 3).
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Operand shapes do not agree.
class ShapeError : public DataError {
 public:
  using DataError::DataError;
};

std::string shape_string(std::size_t rows, std::size_t cols);

}  // namespace seqsleep
