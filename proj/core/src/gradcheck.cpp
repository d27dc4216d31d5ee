#include "sca/gradcheck.hpp"

#include <cmath>
#include <limits>

#include "sca/errors.hpp"

namespace sca {

namespace {

double evaluate(const ScalarGraph& f, const std::vector<Tensor>& params) {
  Tape tape(false);
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(tape.constant(p));
  return f(tape, vars).value().item();
}

}  // namespace

GradCheckResult finite_diff_check(const ScalarGraph& f,
                                  const std::vector<Tensor>& params,
                                  double eps, double abs_floor) {
  if (!(eps > 0.0)) throw DomainError("finite_diff_check: eps must be > 0");

  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& p : params) vars.push_back(tape.leaf(p));
    Var loss = f(tape, vars);
    tape.backward(loss);
    for (const auto& v : vars) analytic.push_back(v.grad());
  }

  GradCheckResult result;
  std::vector<Tensor> probe = params;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double x = params[p][i];
      probe[p][i] = x + eps;
      const double up = evaluate(f, probe);
      probe[p][i] = x - eps;
      const double down = evaluate(f, probe);
      probe[p][i] = x;
      ++result.entries_checked;

      const double a = analytic[p][i];
      const double n = (up - down) / (2.0 * eps);
      double rel;
      if (!std::isfinite(up) || !std::isfinite(down) || !std::isfinite(a)) {
        rel = std::numeric_limits<double>::infinity();
        result.finite = false;
      } else {
        const double scale = std::max(std::abs(a), std::abs(n));
        rel = scale < abs_floor ? 0.0 : std::abs(a - n) / scale;
      }
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.param = p;
        result.entry = i;
        result.analytic = a;
        result.numeric = n;
      }
    }
  }
  return result;
}

}  // namespace sca
