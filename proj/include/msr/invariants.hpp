#pragma once

#include <string>
#include <vector>

#include "msr/config.hpp"

namespace msr {

struct InvariantResult {
  std::string name;
  bool pass = true;
  bool skipped = false;
  double value = 0.0;      // measured defect
  double tolerance = 0.0;
  std::string detail;
};

// Cheap property suite driven by a run configuration.
std::vector<InvariantResult> run_invariants(const RunConfig& c);

}  // namespace msr
