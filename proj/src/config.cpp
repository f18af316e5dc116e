#include "msr/config.hpp"

#include <openssl/evp.h>
#include <toml.hpp>

#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace msr {

ConfigErrors::ConfigErrors(std::vector<std::string> problems)
    : ConfigError([&] {
        std::string s = "invalid configuration:";
        for (const auto& p : problems) s += "\n  - " + p;
        return s;
      }()),
      problems_(std::move(problems)) {}

EnergyDensity DensitySpec::build() const {
  switch (kind) {
    case DensityKind::RadialQuartic: return EnergyDensity::radial_quartic();
    case DensityKind::QuadraticConvex: return EnergyDensity::quadratic_convex();
    case DensityKind::PWellDist:
      return EnergyDensity::pwell_dist(p, C, double_well ? std::optional<double>(delta) : std::nullopt);
    case DensityKind::Custom: break;
  }
  throw ConfigError("custom densities cannot be configured from a file");
}

namespace {

class Reader {
public:
  std::vector<std::string> problems;

  void strict(const toml::table& t, const std::string& where, std::initializer_list<const char*> allowed) {
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : t)
      if (!ok.count(std::string(k.str()))) problems.push_back(where + ": unknown key '" + std::string(k.str()) + "'");
  }

  const toml::table* table(const toml::table& t, const char* key, const std::string& where, bool required) {
    const toml::node* n = t.get(key);
    if (!n) {
      if (required) problems.push_back(where + ": missing table [" + key + "]");
      return nullptr;
    }
    if (!n->is_table()) {
      problems.push_back(where + ": '" + key + "' must be a table");
      return nullptr;
    }
    return n->as_table();
  }

  template <class T>
  void get(const toml::table& t, const char* key, const std::string& where, T& out, bool required = false) {
    const toml::node* n = t.get(key);
    if (!n) {
      if (required) problems.push_back(where + ": missing key '" + key + "'");
      return;
    }
    if constexpr (std::is_same_v<T, double>) {
      if (auto v = n->value<double>())
        out = *v;
      else
        problems.push_back(where + "." + key + ": expected a number");
    } else if constexpr (std::is_same_v<T, bool>) {
      if (auto v = n->value<bool>())
        out = *v;
      else
        problems.push_back(where + "." + key + ": expected true or false");
    } else if constexpr (std::is_integral_v<T>) {
      if (auto v = n->value<std::int64_t>())
        out = static_cast<T>(*v);
      else
        problems.push_back(where + "." + key + ": expected an integer");
    } else {
      if (auto v = n->value<std::string>())
        out = *v;
      else
        problems.push_back(where + "." + key + ": expected a string");
    }
  }

  std::vector<double> numbers(const toml::node& n, const std::string& where) {
    std::vector<double> out;
    const toml::array* a = n.as_array();
    if (!a) {
      problems.push_back(where + ": expected an array of numbers");
      return out;
    }
    for (const auto& e : *a) {
      if (auto v = e.value<double>())
        out.push_back(*v);
      else
        problems.push_back(where + ": expected numbers only");
    }
    return out;
  }

  bool vec3(const toml::table& t, const char* key, const std::string& where, Vec3& out) {
    const toml::node* n = t.get(key);
    if (!n) return false;
    const auto v = numbers(*n, where + "." + key);
    if (v.size() != 3) {
      problems.push_back(where + "." + key + ": expected 3 components");
      return false;
    }
    out = Vec3(v[0], v[1], v[2]);
    return true;
  }

  bool mat3(const toml::node& n, const std::string& where, Mat3& out) {
    const toml::array* rows = n.as_array();
    if (!rows || rows->size() != 3) {
      problems.push_back(where + ": expected a 3x3 array of rows");
      return false;
    }
    for (int i = 0; i < 3; ++i) {
      const auto r = numbers(*rows->get(i), where);
      if (r.size() != 3) {
        problems.push_back(where + ": expected a 3x3 array of rows");
        return false;
      }
      for (int j = 0; j < 3; ++j) out(i, j) = r[j];
    }
    return true;
  }

  bool mat3(const toml::table& t, const char* key, const std::string& where, Mat3& out) {
    const toml::node* n = t.get(key);
    return n && mat3(*n, where + "." + key, out);
  }
};

void read_field(Reader& rd, const toml::table& t, const std::string& where, Field3& f) {
  rd.strict(t, where, {"c", "A", "amp", "k", "phase"});
  rd.vec3(t, "c", where, f.c);
  rd.mat3(t, "A", where, f.A);
  rd.vec3(t, "amp", where, f.amp);
  rd.vec3(t, "k", where, f.k);
  rd.get(t, "phase", where, f.phase);
}

void read_matfield(Reader& rd, const toml::table& t, const std::string& where, MatField& f) {
  rd.strict(t, where, {"c0", "x1", "x2", "x3"});
  rd.mat3(t, "c0", where, f.c0);
  rd.mat3(t, "x1", where, f.lin[0]);
  rd.mat3(t, "x2", where, f.lin[1]);
  rd.mat3(t, "x3", where, f.lin[2]);
}

template <class F>
void collect(Reader& rd, const std::string& where, F&& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    rd.problems.push_back(where + ": " + e.what());
  }
}

RunConfig parse(const toml::table& root, Reader& rd, std::optional<Regime> override_regime) {
  RunConfig c;
  rd.strict(root, "config", {"seed", "output", "regime", "density", "geometry", "forces", "mesh", "solver",
                             "envelope", "capacity"});
  std::int64_t seed = static_cast<std::int64_t>(c.seed);
  rd.get(root, "seed", "config", seed, true);
  c.seed = static_cast<std::uint64_t>(seed);
  rd.get(root, "output", "config", c.output);

  if (const auto* t = rd.table(root, "regime", "config", true)) {
    rd.strict(*t, "regime", {"kind", "ell", "p", "r", "h"});
    std::string kind;
    rd.get(*t, "kind", "regime", kind, true);
    if (!kind.empty()) collect(rd, "regime.kind", [&] { c.regime.regime = regime_from_string(kind); });
    if (override_regime) c.regime.regime = *override_regime;
    rd.get(*t, "p", "regime", c.regime.p, true);
    rd.get(*t, "ell", "regime", c.regime.ell, c.regime.regime == Regime::LPlus);
    std::vector<double> rs, hs;
    if (const toml::node* n = t->get("r")) rs = rd.numbers(*n, "regime.r");
    else rd.problems.push_back("regime: missing key 'r' (list of tube scales)");
    if (const toml::node* n = t->get("h")) hs = rd.numbers(*n, "regime.h");
    if (!hs.empty() && hs.size() != rs.size()) rd.problems.push_back("regime: 'h' and 'r' must have the same length");
    if (!hs.empty() && hs.size() == rs.size()) {
      for (std::size_t i = 0; i < rs.size(); ++i) c.regime.eps.push_back({rs[i], hs[i]});
    } else if (!rs.empty()) {
      collect(rd, "regime", [&] { c.regime.eps = default_eps_sequence(c.regime.regime, c.regime.ell, c.regime.p, rs); });
    }
    for (const auto& v : regime_violations(c.regime)) rd.problems.push_back("regime: " + v);
  }

  if (const auto* t = rd.table(root, "density", "config", true)) {
    rd.strict(*t, "density", {"kind", "p", "C", "delta"});
    std::string kind;
    rd.get(*t, "kind", "density", kind, true);
    if (!kind.empty()) collect(rd, "density.kind", [&] { c.density.kind = density_kind_from_string(kind); });
    if (c.density.kind == DensityKind::PWellDist) {
      rd.get(*t, "p", "density", c.density.p, true);
      rd.get(*t, "C", "density", c.density.C);
      if (t->get("delta")) {
        c.density.double_well = true;
        rd.get(*t, "delta", "density", c.density.delta);
      }
      if (c.density.p != c.regime.p)
        rd.problems.push_back("density: pwell_dist exponent must equal regime.p");
    } else {
      for (const char* k : {"p", "C", "delta"})
        if (t->get(k)) rd.problems.push_back(std::string("density: '") + k + "' is not a parameter of " + kind);
    }
    collect(rd, "density", [&] { (void)c.density.build(); });
  }

  if (const auto* t = rd.table(root, "geometry", "config", false)) {
    rd.strict(*t, "geometry", {"sa", "sb", "L"});
    rd.get(*t, "sa", "geometry", c.geom.sa);
    rd.get(*t, "sb", "geometry", c.geom.sb);
    rd.get(*t, "L", "geometry", c.geom.L);
    if (!(c.geom.sa > 0 && c.geom.sb > 0 && c.geom.L > 0)) rd.problems.push_back("geometry: sa, sb, L must be positive");
    if (!(c.geom.sa < c.geom.sb)) rd.problems.push_back("geometry: the tube must fit inside the plate (sa < sb)");
  }

  if (const auto* t = rd.table(root, "forces", "config", false)) {
    rd.strict(*t, "forces", {"fa", "ga", "fb", "gb_plus", "gb_minus", "Gb", "ghat_minus", "Ghat", "calGa",
                             "divergence"});
    const std::pair<const char*, Field3*> fields[] = {
        {"fa", &c.forces.fa},           {"ga", &c.forces.ga},       {"fb", &c.forces.fb},
        {"gb_plus", &c.forces.gb_plus}, {"gb_minus", &c.forces.gb_minus}, {"Gb", &c.forces.Gb},
        {"ghat_minus", &c.forces.ghat_minus}, {"Ghat", &c.forces.Ghat}};
    for (auto [key, f] : fields)
      if (const auto* ft = rd.table(*t, key, "forces", false)) read_field(rd, *ft, std::string("forces.") + key, *f);
    if (const auto* ft = rd.table(*t, "calGa", "forces", false)) read_matfield(rd, *ft, "forces.calGa", c.forces.calGa);
    if (const auto* dt = rd.table(*t, "divergence", "forces", false)) {
      rd.strict(*dt, "forces.divergence", {"Ha", "Hb"});
      MatField Ha, Hb;
      if (const auto* h = rd.table(*dt, "Ha", "forces.divergence", true)) read_matfield(rd, *h, "forces.divergence.Ha", Ha);
      if (const auto* h = rd.table(*dt, "Hb", "forces.divergence", true)) read_matfield(rd, *h, "forces.divergence.Hb", Hb);
      collect(rd, "forces.divergence", [&] { c.forces.H = DivergenceLoads(Ha, Hb); });
    }
    collect(rd, "forces", [&] { c.forces.validate(); });
  }

  if (const auto* t = rd.table(root, "mesh", "config", false)) {
    rd.strict(*t, "mesh", {"na", "nz", "nb", "nh", "interval", "tri_squares"});
    rd.get(*t, "na", "mesh", c.mesh.na);
    rd.get(*t, "nz", "mesh", c.mesh.nz);
    rd.get(*t, "nb", "mesh", c.mesh.nb);
    rd.get(*t, "nh", "mesh", c.mesh.nh);
    rd.get(*t, "interval", "mesh", c.mesh.interval);
    rd.get(*t, "tri_squares", "mesh", c.mesh.tri_squares);
    for (int v : {c.mesh.na, c.mesh.nz, c.mesh.nb, c.mesh.nh, c.mesh.interval, c.mesh.tri_squares})
      if (v < 1) {
        rd.problems.push_back("mesh: every resolution must be a positive integer");
        break;
      }
  }

  if (const auto* t = rd.table(root, "solver", "config", false)) {
    rd.strict(*t, "solver", {"max_outer", "tolerance", "restarts", "screen_iterations", "restart_amplitude", "slack_threshold",
                             "lift_points", "memo_quantum", "envelope_budget", "max_iterations", "threads",
                             "envelope_points", "envelope_multistart", "cell_n", "cell_multistart"});
    SolveOptions& s = c.solver;
    rd.get(*t, "max_outer", "solver", s.max_outer);
    rd.get(*t, "tolerance", "solver", s.tolerance);
    rd.get(*t, "restarts", "solver", s.restarts);
    rd.get(*t, "screen_iterations", "solver", s.screen_iterations);
    rd.get(*t, "restart_amplitude", "solver", s.restart_amplitude);
    rd.get(*t, "slack_threshold", "solver", s.slack_threshold);
    rd.get(*t, "lift_points", "solver", s.lift_points);
    rd.get(*t, "memo_quantum", "solver", s.memo_quantum);
    rd.get(*t, "envelope_budget", "solver", s.envelope_budget);
    rd.get(*t, "max_iterations", "solver", s.lbfgs.max_iterations);
    rd.get(*t, "threads", "solver", s.threads);
    rd.get(*t, "envelope_points", "solver", s.envelope.points);
    rd.get(*t, "envelope_multistart", "solver", s.envelope.multistart);
    rd.get(*t, "cell_n", "solver", s.envelope.cell_n);
    rd.get(*t, "cell_multistart", "solver", s.envelope.cell_multistart);
    collect(rd, "solver", [&] { s.validate(); });
  }
  c.solver.seed = c.seed;
  c.solver.envelope.seed = c.seed;

  if (const auto* t = rd.table(root, "envelope", "config", false)) {
    rd.strict(*t, "envelope", {"targets", "radii"});
    if (const toml::node* n = t->get("radii")) c.envelope.radii = rd.numbers(*n, "envelope.radii");
    if (const toml::node* n = t->get("targets")) {
      if (const toml::array* a = n->as_array()) {
        for (std::size_t i = 0; i < a->size(); ++i) {
          Mat3 M;
          if (rd.mat3(*a->get(i), "envelope.targets[" + std::to_string(i) + "]", M)) c.envelope.targets.push_back(M);
        }
      } else {
        rd.problems.push_back("envelope.targets: expected an array of 3x3 matrices");
      }
    }
  }

  if (const toml::node* n = root.get("capacity")) {
    const toml::array* a = n->as_array();
    if (!a) {
      rd.problems.push_back("capacity: expected an array of [p, r] pairs");
    } else {
      for (std::size_t i = 0; i < a->size(); ++i) {
        const auto v = rd.numbers(*a->get(i), "capacity[" + std::to_string(i) + "]");
        if (v.size() != 2) {
          rd.problems.push_back("capacity[" + std::to_string(i) + "]: expected [p, r]");
          continue;
        }
        if (!(v[0] > 1.0 && v[0] <= 2.0) || !(v[1] > 0.0 && v[1] < 1.0))
          rd.problems.push_back("capacity[" + std::to_string(i) + "]: need 1 < p <= 2 and 0 < r < 1");
        c.capacity.push_back({v[0], v[1]});
      }
    }
  }
  return c;
}

}  // namespace

RunConfig parse_config_text(const std::string& text, const std::string& origin, std::optional<Regime> regime) {
  toml::table root;
  try {
    root = toml::parse(text, origin);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << origin << ":" << e.source().begin.line << ":" << e.source().begin.column << ": " << e.description();
    throw ConfigErrors({os.str()});
  }
  Reader rd;
  RunConfig c = parse(root, rd, regime);
  if (!rd.problems.empty()) throw ConfigErrors(rd.problems);
  c.source = text;
  return c;
}

RunConfig parse_config(const std::string& path, std::optional<Regime> regime) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigErrors({"cannot open configuration file '" + path + "'"});
  std::ostringstream os;
  os << in.rdbuf();
  return parse_config_text(os.str(), path, regime);
}

std::string config_hash(const std::string& text) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(text.data(), text.size(), md, &len, EVP_sha256(), nullptr);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

}  // namespace msr
