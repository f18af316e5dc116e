// msr: batch front-end for the multi-structure solvers.
#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <Eigen/Core>
#include <ceres/version.h>

#include "msr/config.hpp"
#include "msr/invariants.hpp"

#ifndef MSR_VERSION
#define MSR_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace msr;

namespace {

enum Exit { kOk = 0, kConfig = 2, kNoConvergence = 3, kInvariant = 4 };

struct Run {
  RunConfig cfg;
  std::string hash;
  fs::path out;
  json manifest;
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

  void artifact(const std::string& name, std::size_t rows) {
    manifest["artifacts"].push_back({{"file", name}, {"rows", rows}, {"config_hash", hash}});
  }
  void timing(const std::string& phase, std::chrono::steady_clock::time_point since) {
    manifest["timings"][phase] = std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
  }
  void write(const std::string& name, const std::string& text, std::size_t rows) {
    std::ofstream(out / name, std::ios::binary) << text;
    artifact(name, rows);
  }
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string field_csv(const Field& psi, const std::vector<Vec3>& ref, const std::string& hash) {
  std::ostringstream os;
  os << "# config_hash=" << hash << "\nnode,x1,x2,x3,psi1,psi2,psi3\n";
  for (std::size_t n = 0; n < psi.size(); ++n)
    os << n << ',' << fmt(ref[n](0)) << ',' << fmt(ref[n](1)) << ',' << fmt(ref[n](2)) << ',' << fmt(psi[n](0)) << ','
       << fmt(psi[n](1)) << ',' << fmt(psi[n](2)) << '\n';
  return os.str();
}

std::vector<Vec3> grid_positions(const HexGrid& g) { return g.map_nodes([](const Vec3& x) { return x; }); }

int solve_eps_cmd(Run& run, int eps_index) {
  const RunConfig& c = run.cfg;
  if (eps_index < 0 || eps_index >= static_cast<int>(c.regime.eps.size()))
    throw ConfigErrors({"--eps-index " + std::to_string(eps_index) + " is outside the eps list"});
  const auto t = std::chrono::steady_clock::now();
  const EpsLevel e = c.regime.eps[eps_index];
  const auto m = build_multistructure(c.geom, c.mesh, e.r);
  const EpsSolution sol = solve_eps(c.density.build(), c.forces, m, c.regime.regime, e.h, c.solver);
  run.timing("solve_eps", t);
  json j = {{"config_hash", run.hash},   {"r", e.r},
            {"h", e.h},                  {"energy", sol.energy.total},
            {"elastic_tube", sol.energy.Fa}, {"elastic_plate", sol.energy.Fb},
            {"work_tube", sol.energy.La}, {"work_plate", sol.energy.Lb},
            {"divergence_work", sol.energy.divergence}, {"weights", {sol.energy.sa, sol.energy.sb}},
            {"converged", sol.converged}, {"slack", sol.slack},
            {"starts", sol.starts}};
  run.write("eps_solution.json", j.dump(2), 1);
  run.write("psi_a.csv", field_csv(sol.state.psi_a, grid_positions(m.a), run.hash), sol.state.psi_a.size());
  run.write("psi_b.csv", field_csv(sol.state.psi_b, grid_positions(m.b), run.hash), sol.state.psi_b.size());
  std::cout << "eps[" << eps_index << "] r=" << e.r << " h=" << e.h << " energy=" << fmt(sol.energy.total)
            << (sol.converged ? "" : " (not converged)") << '\n';
  return sol.converged ? kOk : kNoConvergence;
}

int solve_limit_cmd(Run& run) {
  const RunConfig& c = run.cfg;
  const auto t = std::chrono::steady_clock::now();
  const LimitSetup setup = default_limit_setup(c.regime, c.geom, c.mesh);
  const LimitSolution sol = solve_limit(c.density.build(), c.forces, setup, c.solver);
  run.timing("solve_limit", t);
  json j = {{"config_hash", run.hash}, {"regime", to_string(c.regime.regime)}, {"energy", sol.energy},
            {"descent_energy", sol.descent_energy}, {"sweeps", sol.sweeps}, {"converged", sol.converged},
            {"budget_limited", sol.budget_limited}, {"history", sol.history}};
  run.write("limit_solution.json", j.dump(2), 1);
  if (!sol.state.psi_a.empty()) {
    std::ostringstream os;
    os << "# config_hash=" << run.hash << "\nnode,x3,psi1,psi2,psi3\n";
    for (std::size_t k = 0; k < sol.state.psi_a.size(); ++k)
      os << k << ',' << fmt(setup.meshes.interval.node(static_cast<int>(k))) << ',' << fmt(sol.state.psi_a[k](0))
         << ',' << fmt(sol.state.psi_a[k](1)) << ',' << fmt(sol.state.psi_a[k](2)) << '\n';
    run.write("limit_string.csv", os.str(), sol.state.psi_a.size());
  }
  if (!sol.state.psi_b.empty()) {
    std::ostringstream os;
    os << "# config_hash=" << run.hash << "\nnode,x1,x2,psi1,psi2,psi3\n";
    const auto& nodes = setup.meshes.membrane.nodes;
    for (std::size_t n = 0; n < sol.state.psi_b.size(); ++n)
      os << n << ',' << fmt(nodes[n](0)) << ',' << fmt(nodes[n](1)) << ',' << fmt(sol.state.psi_b[n](0)) << ','
         << fmt(sol.state.psi_b[n](1)) << ',' << fmt(sol.state.psi_b[n](2)) << '\n';
    run.write("limit_membrane.csv", os.str(), sol.state.psi_b.size());
  }
  std::cout << "limit " << to_string(c.regime.regime) << " energy=" << fmt(sol.energy)
            << (sol.converged ? "" : " (not converged)") << '\n';
  return sol.converged ? kOk : kNoConvergence;
}

int gamma_cmd(Run& run) {
  const RunConfig& c = run.cfg;
  const auto t = std::chrono::steady_clock::now();
  const GammaReport rep = gamma_study(c.density.build(), c.forces, c.regime, c.geom, c.mesh, c.solver);
  run.timing("gamma_study", t);
  run.write("gamma_report.csv", "# config_hash=" + run.hash + "\n" + rep.to_csv(), rep.rows.size());
  json j = json::parse(rep.to_json());
  j["config_hash"] = run.hash;
  run.write("gamma_report.json", j.dump(2), rep.rows.size());
  bool ok = rep.limit_converged;
  for (const GammaRow& row : rep.rows) {
    std::cout << "r=" << row.r << " h=" << row.h << " energy=" << fmt(row.energy) << " gap=" << fmt(row.gap)
              << (row.flagged ? " [flagged]" : "") << '\n';
    ok = ok && row.converged;
  }
  std::cout << "limit energy=" << fmt(rep.limit_energy) << '\n';
  return ok ? kOk : kNoConvergence;
}

int envelope_cmd(Run& run) {
  const RunConfig& c = run.cfg;
  const EnergyDensity W = c.density.build();
  std::vector<std::pair<std::string, Mat3>> targets;
  for (double t : c.envelope.radii) {
    Mat3 F = Mat3::Zero();
    F(0, 0) = t;
    targets.push_back({"radius " + fmt(t), F});
  }
  for (std::size_t i = 0; i < c.envelope.targets.size(); ++i)
    targets.push_back({"target " + std::to_string(i), c.envelope.targets[i]});
  if (targets.empty()) throw ConfigErrors({"envelope: give [envelope] radii or targets"});
  const auto t0 = std::chrono::steady_clock::now();
  std::ostringstream os;
  os << "# config_hash=" << run.hash << "\nlabel,F11,F12,F13,F21,F22,F23,F31,F32,F33,W,convex,cross_qc,oracle\n";
  for (const auto& [label, F] : targets) {
    const double w = evaluate(W, F);
    const double cv = convex_envelope(W, F, c.solver.envelope).value;
    const double qc = cell_qcw(W, F, c.solver.envelope).value;
    std::string oracle;
    if (W.kind == DensityKind::RadialQuartic) oracle = fmt(radial_envelope_oracle(F.norm()));
    if (W.is_convex()) oracle = fmt(w);
    os << label;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) os << ',' << fmt(F(i, j));
    os << ',' << fmt(w) << ',' << fmt(cv) << ',' << fmt(qc) << ',' << oracle << '\n';
    std::cout << label << ": W=" << fmt(w) << " convex=" << fmt(cv) << " cross_qc=" << fmt(qc)
              << (oracle.empty() ? "" : " oracle=" + oracle) << '\n';
  }
  run.timing("envelope", t0);
  run.write("envelope_values.csv", os.str(), targets.size());
  return kOk;
}

int invariants_cmd(Run& run) {
  const auto t = std::chrono::steady_clock::now();
  const auto results = run_invariants(run.cfg);
  run.timing("check_invariants", t);
  std::ostringstream os;
  os << "# config_hash=" << run.hash << "\nname,status,value,tolerance,detail\n";
  bool ok = true;
  for (const auto& r : results) {
    const std::string status = r.skipped ? "SKIP" : (r.pass ? "PASS" : "FAIL");
    ok = ok && (r.skipped || r.pass);
    os << '"' << r.name << "\"," << status << ',' << fmt(r.value) << ',' << fmt(r.tolerance) << ",\"" << r.detail
       << "\"\n";
    std::cout << status << "  " << r.name << "  " << fmt(r.value) << (r.detail.empty() ? "" : "  (" + r.detail + ")")
              << '\n';
  }
  run.write("invariants.csv", os.str(), results.size());
  return ok ? kOk : kInvariant;
}

int capacity_cmd(Run& run) {
  std::vector<CapacityCase> cases = run.cfg.capacity;
  if (cases.empty()) cases = {{2.0, std::exp(-2.0)}, {1.5, 0.01}, {1.2, 0.05}};
  const auto t = std::chrono::steady_clock::now();
  std::ostringstream os;
  os << "# config_hash=" << run.hash << "\np,r,closed_form,fem,relative_error\n";
  for (const auto& cc : cases) {
    const CapacityResult c = annulus_p_capacity(cc.p, cc.r);
    const double rel = std::abs(c.fem - c.closed_form) / c.closed_form;
    os << fmt(cc.p) << ',' << fmt(cc.r) << ',' << fmt(c.closed_form) << ',' << fmt(c.fem) << ',' << fmt(rel) << '\n';
    std::cout << "p=" << cc.p << " r=" << cc.r << " closed=" << fmt(c.closed_form) << " fem=" << fmt(c.fem) << '\n';
  }
  run.timing("capacity", t);
  run.write("capacity.csv", os.str(), cases.size());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-structure dimension-reduction solvers"};
  app.require_subcommand(1);
  std::string config_path, out_dir;
  std::int64_t seed = -1;
  int threads = 0;
  app.add_option("--config", config_path, "TOML run configuration")->required()->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "output directory (default: the config's output)");
  app.add_option("--seed", seed, "override the configured seed")->check(CLI::NonNegativeNumber);
  app.add_option("--threads", threads, "concurrent eps-solves")->check(CLI::PositiveNumber);

  int eps_index = 0;
  std::string regime;
  auto* se = app.add_subcommand("solve-eps", "minimize one eps-problem");
  se->add_option("--eps-index", eps_index, "index into the eps list");
  auto* sl = app.add_subcommand("solve-limit", "minimize the limit problem");
  sl->add_option("--regime", regime, "lplus, linf or lzero (overrides the config)");
  auto* gs = app.add_subcommand("gamma-study", "eps-sequence against the limit");
  gs->add_option("--regime", regime, "lplus, linf or lzero (overrides the config)");
  auto* en = app.add_subcommand("envelope", "W and envelope estimates on a matrix list");
  auto* ci = app.add_subcommand("check-invariants", "property suite on the configuration");
  auto* ca = app.add_subcommand("capacity", "annulus p-capacity diagnostic");

  CLI11_PARSE(app, argc, argv);

  Run run;
  try {
    std::ifstream in(config_path, std::ios::binary);
    std::ostringstream text;
    text << in.rdbuf();
    std::string src = text.str();
    std::optional<Regime> override_regime;
    if (!regime.empty()) override_regime = regime_from_string(regime);
    run.cfg = parse_config_text(src, config_path, override_regime);
    if (seed >= 0) {
      run.cfg.seed = static_cast<std::uint64_t>(seed);
      run.cfg.solver.seed = run.cfg.seed;
      run.cfg.solver.envelope.seed = run.cfg.seed;
    }
    if (threads > 0) run.cfg.solver.threads = threads;
    run.hash = config_hash(src);
  } catch (const ConfigError& e) {
    std::cerr << e.what() << '\n';
    return kConfig;
  }

  run.out = out_dir.empty() ? fs::path(run.cfg.output) : fs::path(out_dir);
  fs::create_directories(run.out);
  const std::string sub = app.get_subcommands().front()->get_name();
  run.manifest = {{"subcommand", sub},
                  {"config", fs::absolute(config_path).string()},
                  {"config_hash", run.hash},
                  {"seed", run.cfg.seed},
                  {"threads", run.cfg.solver.threads},
                  {"regime", to_string(run.cfg.regime.regime)},
                  {"versions",
                   {{"msr", MSR_VERSION},
                    {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                  std::to_string(EIGEN_MINOR_VERSION)},
                    {"ceres", CERES_VERSION_STRING}}},
                  {"artifacts", json::array()},
                  {"timings", json::object()}};

  int code = 1;
  try {
    if (*se) code = solve_eps_cmd(run, eps_index);
    if (*sl) code = solve_limit_cmd(run);
    if (*gs) code = gamma_cmd(run);
    if (*en) code = envelope_cmd(run);
    if (*ci) code = invariants_cmd(run);
    if (*ca) code = capacity_cmd(run);
  } catch (const ConfigError& e) {
    std::cerr << e.what() << '\n';
    code = kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    code = 1;
  }
  run.timing("total", run.t0);
  run.manifest["exit_code"] = code;
  std::ofstream(run.out / "manifest.json") << run.manifest.dump(2) << '\n';
  return code;
}
