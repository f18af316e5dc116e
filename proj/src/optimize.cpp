#include "msr/optimize.hpp"

#include <ceres/ceres.h>

#include <cmath>

namespace msr {

namespace {

class Adapter final : public ceres::FirstOrderFunction {
public:
  Adapter(const Objective& f, int n) : f_(f), n_(n) {}
  bool Evaluate(const double* x, double* cost, double* grad) const override {
    const double v = f_(x, grad);
    if (!std::isfinite(v)) return false;
    *cost = v;
    return true;
  }
  int NumParameters() const override { return n_; }

private:
  const Objective& f_;
  int n_;
};

}  // namespace

LbfgsResult lbfgs_minimize(const Objective& f, std::vector<double>& x, const LbfgsOptions& opts) {
  LbfgsResult res;
  const int n = static_cast<int>(x.size());
  res.initial_value = f(x.data(), nullptr);
  if (n == 0) {
    res.value = res.initial_value;
    res.converged = true;
    return res;
  }
  ceres::GradientProblemSolver::Options o;
  o.line_search_direction_type = ceres::LBFGS;
  o.max_lbfgs_rank = opts.memory;
  o.max_num_iterations = opts.max_iterations;
  o.function_tolerance = opts.function_tolerance;
  o.gradient_tolerance = opts.gradient_tolerance;
  o.parameter_tolerance = opts.parameter_tolerance;
  o.logging_type = ceres::SILENT;
  o.minimizer_progress_to_stdout = false;

  ceres::GradientProblem problem(new Adapter(f, n));
  ceres::GradientProblemSolver::Summary summary;
  std::vector<double> start = x;
  ceres::Solve(o, problem, x.data(), &summary);

  res.value = f(x.data(), nullptr);
  if (!std::isfinite(res.value) || res.value > res.initial_value) {
    x = start;
    res.value = res.initial_value;
  }
  res.iterations = static_cast<int>(summary.iterations.size());
  res.converged = summary.termination_type == ceres::CONVERGENCE;
  for (auto it = summary.iterations.rbegin(); it != summary.iterations.rend(); ++it)
    if (it->step_is_successful && it->iteration > 0) {
      res.last_decrease = std::abs(it->cost_change);
      break;
    }
  res.message = summary.message;
  return res;
}

}  // namespace msr
