#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace bikop {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Invalid user input: bad config keys, invariant violations, malformed requests.
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Failure while executing: corrupt files, missing artifacts, I/O problems.
class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Numerical contract violation: divergence, zero-norm cosine, non-finite values.
class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline void check_shape(const Mat& m, Eigen::Index rows, Eigen::Index cols,
                        const std::string& what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw std::invalid_argument(what + ": expected " + std::to_string(rows) + "x" +
                                std::to_string(cols) + ", got " + std::to_string(m.rows()) +
                                "x" + std::to_string(m.cols()));
  }
}

}  // namespace bikop
