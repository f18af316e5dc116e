#pragma once

#include <functional>
#include <string>
#include <vector>

namespace msr {

// f(x, grad) returns the objective and fills grad when non-null.
// Returning a non-finite value marks x as infeasible; the line search backs off.
using Objective = std::function<double(const double* x, double* grad)>;

struct LbfgsOptions {
  int max_iterations = 2000;
  double function_tolerance = 1e-12;
  double gradient_tolerance = 1e-10;
  double parameter_tolerance = 1e-14;
  int memory = 10;
};

struct LbfgsResult {
  double value = 0.0;
  double initial_value = 0.0;
  int iterations = 0;
  bool converged = false;
  double last_decrease = 0.0;
  std::string message;
};

// Limited-memory BFGS with a Wolfe line search; x holds the start and receives the result.
LbfgsResult lbfgs_minimize(const Objective& f, std::vector<double>& x, const LbfgsOptions& opts = {});

}  // namespace msr
