#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "msr/solvers.hpp"

namespace msr {

struct DensitySpec {
  DensityKind kind = DensityKind::PWellDist;
  double p = 4.0;
  double C = 1.0;
  bool double_well = false;
  double delta = 1.0;

  EnergyDensity build() const;
};

struct EnvelopeRequest {
  std::vector<Mat3> targets;
  std::vector<double> radii;  // targets t e1 (x) e1
};

struct CapacityCase {
  double p = 2.0, r = 0.1;
};

struct RunConfig {
  RegimeConfig regime;
  DensitySpec density;
  Geometry geom;
  ForceSystem forces;
  Resolution mesh;
  SolveOptions solver;
  EnvelopeRequest envelope;
  std::vector<CapacityCase> capacity;
  std::string output = "out";
  std::uint64_t seed = 20240611;
  std::string source;  // the parsed text, for hashing
};

// Every problem found, in file order.
class ConfigErrors : public ConfigError {
public:
  explicit ConfigErrors(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

private:
  std::vector<std::string> problems_;
};

// `regime` replaces regime.kind before validation; an eps list without explicit h follows it.
RunConfig parse_config(const std::string& path, std::optional<Regime> regime = std::nullopt);
RunConfig parse_config_text(const std::string& text, const std::string& origin = "<string>",
                            std::optional<Regime> regime = std::nullopt);

// SHA-256 of the configuration text, hex.
std::string config_hash(const std::string& text);

}  // namespace msr
