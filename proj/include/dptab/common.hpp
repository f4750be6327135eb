#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace dptab {

using TokenId = std::int32_t;
using Rng = std::mt19937_64;

/// Target sentinel for positions that carry no loss. Never a valid token id.
inline constexpr TokenId kIgnore = -1;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

// Error categories map onto CLI exit codes (2, 3, 4).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Seeds a generator from OS entropy. Used when a run asks for real privacy.
inline Rng entropy_rng() {
  std::random_device device;
  std::seed_seq seq{device(), device(), device(), device(), device(), device()};
  return Rng(seq);
}

}  // namespace dptab
