#pragma once

#include <functional>
#include <string>

#include "d2d/nn/tape.hpp"

namespace d2d::nn {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  int worst_index = -1;
  long long coords = 0;

  bool pass(double tol = 1e-3) const { return max_rel_err < tol; }
};

// Compares the tape's analytic gradients against central differences on
// every coordinate of every parameter in the store. build must be a
// deterministic function of the store (inputs it needs should be registered
// as parameters, which also makes their gradients checkable). eps per
// coordinate is eps_scale * max(1, |theta_i|); relative error is
// |a - n| / max(1, |a| + |n|).
GradCheckReport grad_check(ParamStore& store, const std::function<Var(Tape&)>& build,
                           double eps_scale = 1e-2);

}  // namespace d2d::nn
