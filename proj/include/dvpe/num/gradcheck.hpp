#pragma once

#include "dvpe/num/tape.hpp"

#include <functional>
#include <vector>

namespace dvpe::num {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

using ScalarFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

/// Compares reverse-mode gradients of f against central differences.
/// Relative error per component is |a - n| / max(|a|, |n|, floor).
/// The tape checks every op for non-finite output and throws NonFiniteError
/// naming the op.
GradCheckResult grad_check(const ScalarFn& f, const std::vector<Tensor<double>>& inputs, double eps = 1e-5,
                           double floor = 1e-4);

/// Same comparison with respect to parameter tensors. `f` builds the loss
/// from the current parameter values. At most `max_per_param` entries of each
/// parameter are perturbed (evenly strided); 0 checks all of them.
GradCheckResult grad_check_params(const std::function<Var<double>(Tape<double>&)>& f,
                                  const std::vector<Param<double>*>& params, double eps = 1e-5, double floor = 1e-4,
                                  std::size_t max_per_param = 0);

}  // namespace dvpe::num
