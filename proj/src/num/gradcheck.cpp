#include "dvpe/num/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace dvpe::num {

namespace {

void update(GradCheckResult& r, double a, double n, double floor, std::size_t input, std::size_t index) {
  const double err = std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
  ++r.checked;
  if (r.checked == 1 || err > r.max_rel_err) {
    r.max_rel_err = err;
    r.worst_input = input;
    r.worst_index = index;
    r.analytic = a;
    r.numeric = n;
  }
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& f, const std::vector<Tensor<double>>& inputs, double eps, double floor) {
  auto evaluate = [&](const std::vector<Tensor<double>>& xs, std::vector<std::vector<double>>* grads) {
    Tape<double> tape;
    tape.set_check_finite(true, "grad_check");
    std::vector<Var<double>> vars;
    for (const auto& x : xs) vars.push_back(tape.input(x));
    Var<double> out = f(tape, vars);
    if (grads != nullptr) {
      tape.backward(out);
      grads->clear();
      for (const auto& v : vars) {
        if (tape.has_grad(v.id)) grads->push_back(tape.grad(v.id));
        else grads->emplace_back(v.size(), 0.0);
      }
    }
    return out.item();
  };

  std::vector<std::vector<double>> analytic;
  evaluate(inputs, &analytic);
  GradCheckResult r;
  std::vector<Tensor<double>> xs = inputs;
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (std::size_t k = 0; k < xs[i].size(); ++k) {
      const double orig = xs[i].data[k];
      xs[i].data[k] = orig + eps;
      const double fp = evaluate(xs, nullptr);
      xs[i].data[k] = orig - eps;
      const double fm = evaluate(xs, nullptr);
      xs[i].data[k] = orig;
      update(r, analytic[i][k], (fp - fm) / (2.0 * eps), floor, i, k);
    }
  return r;
}

GradCheckResult grad_check_params(const std::function<Var<double>(Tape<double>&)>& f,
                                  const std::vector<Param<double>*>& params, double eps, double floor,
                                  std::size_t max_per_param) {
  auto evaluate = [&](bool with_grad) {
    Tape<double> tape;
    tape.set_check_finite(true, "grad_check");
    Var<double> out = f(tape);
    if (with_grad) tape.backward(out);
    return out.item();
  };
  for (auto* p : params) p->zero_grad();
  evaluate(true);
  std::vector<std::vector<double>> analytic;
  for (auto* p : params) analytic.push_back(p->grad);

  GradCheckResult r;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& data = params[i]->value.data;
    const std::size_t n = data.size();
    const std::size_t stride = (max_per_param == 0 || n <= max_per_param) ? 1 : n / max_per_param;
    for (std::size_t k = 0; k < n; k += stride) {
      const double orig = data[k];
      data[k] = orig + eps;
      const double fp = evaluate(false);
      data[k] = orig - eps;
      const double fm = evaluate(false);
      data[k] = orig;
      update(r, analytic[i][k], (fp - fm) / (2.0 * eps), floor, i, k);
    }
  }
  for (auto* p : params) p->zero_grad();
  return r;
}

}  // namespace dvpe::num
