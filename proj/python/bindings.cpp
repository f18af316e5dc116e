#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "msr/config.hpp"
#include "msr/envelopes.hpp"
#include "msr/invariants.hpp"

namespace py = pybind11;
using namespace msr;

namespace {

EnvelopeOptions envelope_options(int points, int multistart, int cell_n, std::uint64_t seed) {
  EnvelopeOptions o;
  o.points = points;
  o.multistart = multistart;
  o.cell_n = cell_n;
  o.seed = seed;
  return o;
}

std::optional<Regime> regime_arg(const std::optional<std::string>& s) {
  if (!s) return std::nullopt;
  return regime_from_string(*s);
}

}  // namespace

PYBIND11_MODULE(_multistructure, m) {
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  py::class_<EnergyDensity>(m, "EnergyDensity")
      .def_static("radial_quartic", &EnergyDensity::radial_quartic, py::arg("growth_C") = 4.0)
      .def_static("quadratic_convex", &EnergyDensity::quadratic_convex, py::arg("growth_C") = 6.0)
      .def_static("pwell_dist", &EnergyDensity::pwell_dist, py::arg("p"), py::arg("C") = 1.0,
                  py::arg("delta") = std::optional<double>(1.3))
      .def("__call__", [](const EnergyDensity& W, const Mat3& F) { return evaluate(W, F); })
      .def("gradient", [](const EnergyDensity& W, const Mat3& F) { return gradient(W, F); });

  m.def(
      "convex_envelope",
      [](const EnergyDensity& W, const Mat3& F, int points, int multistart, std::uint64_t seed) {
        const EnvelopeResult r = convex_envelope(W, F, envelope_options(points, multistart, 4, seed));
        return py::dict(py::arg("value") = r.value, py::arg("direct") = r.direct, py::arg("stalled") = r.stalled,
                        py::arg("atoms") = r.atoms, py::arg("weights") = r.weights);
      },
      py::arg("W"), py::arg("F"), py::arg("points") = 10, py::arg("multistart") = 16, py::arg("seed") = 20240611);

  m.def(
      "cell_qcw",
      [](const EnergyDensity& W, const Mat3& F, int n, std::uint64_t seed) {
        const CellResult r = cell_qcw(W, F, envelope_options(10, 16, n, seed));
        return py::dict(py::arg("value") = r.value, py::arg("direct") = r.direct, py::arg("stalled") = r.stalled,
                        py::arg("lambda_") = r.lambda);
      },
      py::arg("W"), py::arg("F"), py::arg("n") = 4, py::arg("seed") = 20240611);

  m.def("radial_envelope_oracle", &radial_envelope_oracle, py::arg("t"));

  m.def(
      "annulus_p_capacity",
      [](double p, double r, int nodes) {
        const CapacityResult c = annulus_p_capacity(p, r, nodes);
        return py::make_tuple(c.closed_form, c.fem);
      },
      py::arg("p"), py::arg("r"), py::arg("nodes") = 400);

  m.def("config_hash", &config_hash, py::arg("text"));

  m.def(
      "run_invariants",
      [](const std::string& path) {
        py::list out;
        for (const InvariantResult& r : run_invariants(parse_config(path)))
          out.append(py::dict(py::arg("name") = r.name, py::arg("pass") = r.pass, py::arg("skipped") = r.skipped,
                              py::arg("value") = r.value, py::arg("tolerance") = r.tolerance,
                              py::arg("detail") = r.detail));
        return out;
      },
      py::arg("config_path"));

  m.def(
      "gamma_study_json",
      [](const std::string& path, const std::optional<std::string>& regime) {
        const RunConfig c = parse_config(path, regime_arg(regime));
        py::gil_scoped_release release;
        return gamma_study(c.density.build(), c.forces, c.regime, c.geom, c.mesh, c.solver).to_json();
      },
      py::arg("config_path"), py::arg("regime") = py::none());
}
