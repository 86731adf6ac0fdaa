#pragma once

// Test-only finite-difference utilities. Central differences at float64,
// independent of the tape's analytic path.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "bikop/autodiff.hpp"

namespace bikop::testing {

struct FdReport {
  double max_rel_err = 0.0;
  std::string worst;
};

inline double rel_err(double analytic, double numeric) {
  double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

/// Compares Param::grad (already populated by a backward pass) against central
/// finite differences of `loss_fn`, which must recompute the scalar loss from
/// current param values.
inline FdReport check_param_grads(const std::vector<Param*>& params,
                                  const std::function<double()>& loss_fn, double h = 1e-5) {
  FdReport rep;
  for (Param* p : params) {
    for (Eigen::Index i = 0; i < p->value.rows(); ++i) {
      for (Eigen::Index j = 0; j < p->value.cols(); ++j) {
        double orig = p->value(i, j);
        p->value(i, j) = orig + h;
        double up = loss_fn();
        p->value(i, j) = orig - h;
        double down = loss_fn();
        p->value(i, j) = orig;
        double num = (up - down) / (2.0 * h);
        double err = rel_err(p->grad(i, j), num);
        if (err > rep.max_rel_err) {
          rep.max_rel_err = err;
          rep.worst = p->name + "(" + std::to_string(i) + "," + std::to_string(j) +
                      ") analytic=" + std::to_string(p->grad(i, j)) +
                      " numeric=" + std::to_string(num);
        }
      }
    }
  }
  return rep;
}

}  // namespace bikop::testing
