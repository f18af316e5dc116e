#include "msr/invariants.hpp"

#include <cmath>
#include <random>

namespace msr {

namespace {

InvariantResult bound(std::string name, double value, double tol, std::string detail = {}) {
  InvariantResult r;
  r.name = std::move(name);
  r.value = value;
  r.tolerance = tol;
  r.pass = std::isfinite(value) && value <= tol;
  r.detail = std::move(detail);
  return r;
}

InvariantResult skipped(std::string name, std::string why) {
  InvariantResult r;
  r.name = std::move(name);
  r.skipped = true;
  r.detail = std::move(why);
  return r;
}

Field smooth_a(const HexGrid& g, double r) {
  return g.map_nodes([r](const Vec3& x) {
    return Vec3(r * x(0) + 0.1 * x(2) * x(2), r * x(1) - 0.2 * x(0) * x(2), x(2) + 0.3 * x(0) * x(1));
  });
}

Field smooth_b(const HexGrid& g, double h) {
  return g.map_nodes([h](const Vec3& x) {
    return Vec3(x(0) + 0.1 * x(1) * x(1), x(1) - 0.2 * x(0) * x(2), h * x(2) + 0.3 * x(0) * x(0));
  });
}

}  // namespace

std::vector<InvariantResult> run_invariants(const RunConfig& c) {
  std::vector<InvariantResult> out;
  const EnergyDensity W = c.density.build();
  const RegimeConfig& rc = c.regime;

  // natural state
  const double w_id = evaluate(W, Mat3::Identity());
  if (w_id != 0.0) {
    out.push_back(skipped("natural_state_eps", "W(I) = " + std::to_string(w_id)));
    out.push_back(skipped("natural_state_limit", "W(I) = " + std::to_string(w_id)));
  } else {
    double worst = 0.0;
    for (const EpsLevel& e : rc.eps) {
      const auto m = build_multistructure(c.geom, c.mesh, e.r);
      const EpsForces ef = scale_forces(ForceSystem{}, rc.regime, e.r, e.h);
      worst = std::max(worst, std::abs(eps_energy(identity_state(m, e.h), W, ef, m).total));
    }
    out.push_back(bound("natural_state_eps", worst, 1e-12));
    worst = 0.0;
    for (Regime reg : {Regime::LPlus, Regime::LInf, Regime::LZero}) {
      RegimeConfig r2 = rc;
      r2.regime = reg;
      const LimitSetup setup = default_limit_setup(r2, c.geom, c.mesh);
      EnvelopeCache cache(c.solver.memo_quantum);
      worst = std::max(worst,
                       std::abs(limit_energy(natural_limit_state(setup), W, ForceSystem{}, setup, cache, c.solver).total));
    }
    out.push_back(bound("natural_state_limit", worst, 1e-12));
  }

  // expanded work forms against the raw quadrature
  {
    double worst = 0.0;
    for (const EpsLevel& e : rc.eps) {
      const auto m = build_multistructure(c.geom, c.mesh, e.r);
      const EpsForces ef = scale_forces(c.forces, rc.regime, e.r, e.h);
      Field pa = smooth_a(m.a, e.r);
      const Field pb = smooth_b(m.b, e.h);
      apply_junction(pa, pb, m);
      const double ra = work_a_raw(pa, ef, m), rb = work_b_raw(pb, ef, m);
      worst = std::max(worst, std::abs(ra - work_a_expanded(pa, ef, m)) / std::max(1.0, std::abs(ra)));
      worst = std::max(worst, std::abs(rb - work_b_expanded(pa, pb, ef, m)) / std::max(1.0, std::abs(rb)));
    }
    out.push_back(bound("work_identities", worst, 1e-10, "relative to max(1, |raw|)"));
  }

  // envelope chain on a few deterministic samples
  {
    std::mt19937_64 rng(c.seed);
    std::normal_distribution<double> nd(0.0, 0.4);
    std::vector<Mat3> samples;
    for (int i = 0; i < 3; ++i) {
      Mat3 F = Mat3::Identity();
      for (int q = 0; q < 9; ++q) F(q % 3, q / 3) += nd(rng);
      samples.push_back(F);
    }
    EnvelopeOptions o = c.solver.envelope;
    const ChainReport chain = verify_envelope_chain(W, samples, o);
    double worst = 0.0;
    for (const ChainRow& row : chain.rows) {
      worst = std::max(worst, row.convex - row.cell - chain.lower_slack);
      worst = std::max(worst, row.cell - row.w - chain.upper_slack);
    }
    out.push_back(bound("envelope_chain", std::max(worst, 0.0), 0.0, "convex <= cell + 2e-5, cell <= W + 1e-9"));
  }

  // radial oracle
  if (W.kind == DensityKind::RadialQuartic) {
    double worst = 0.0;
    for (double t : {0.5, 1.5, 2.5}) {
      Mat3 F = Mat3::Zero();
      F(0, 0) = t;
      worst = std::max(worst, std::abs(convex_envelope(W, F, c.solver.envelope).value - radial_envelope_oracle(t)));
    }
    out.push_back(bound("radial_envelope_oracle", worst, 1e-4));
  }

  // compatibility of the configured plate loads is reported, not required
  if (rc.regime == Regime::LPlus) {
    ForceSystem fs;
    LimitSetup setup = default_limit_setup(rc, c.geom, c.mesh);
    double worst = 0.0;
    for (double cval : {-1.0, 0.5, 2.0}) {
      fs.Ghat = Field3::constant(Vec3(0, 0, cval));
      LimitState s = natural_limit_state(setup);
      s.psi_a[0] = s.psi_b[setup.meshes.membrane.origin];
      const double t = 1e-4;
      LimitState up = s, dn = s;
      up.psi_a[0](2) += t;
      dn.psi_a[0](2) -= t;
      EnvelopeCache cache;
      const double d = (limit_energy(up, W, fs, setup, cache, c.solver).load -
                        limit_energy(dn, W, fs, setup, cache, c.solver).load) /
                       (2 * t);
      worst = std::max(worst, std::abs(-d - c.geom.abar() * cval));
    }
    out.push_back(bound("pseudo_coupling", worst, 1e-8, "d/dpsi_a(0)_3 of the energy equals abar c"));
  } else {
    out.push_back(skipped("pseudo_coupling", "only present for lplus"));
  }

  // Green identity of the divergence loads
  if (c.forces.H) {
    const DivergenceLoads& H = *c.forces.H;
    auto theta = [](const Vec3& x) { return Vec3(x(0) * x(1), std::sin(x(2)), x(0) + x(2) * x(2)); };
    auto dtheta = [](const Vec3& x) {
      Mat3 D;
      D << x(1), x(0), 0, 0, 0, std::cos(x(2)), 1, 0, 2 * x(2);
      return D;
    };
    std::vector<double> res;
    for (int n : {4, 8, 16}) {
      HexGrid g{n, n, n, Vec3(-c.geom.sb, -c.geom.sb, -1.0), Vec3(c.geom.sb, c.geom.sb, 0.0)};
      std::vector<Mat3> Hn;
      for (int k = 0; k <= n; ++k)
        for (int j = 0; j <= n; ++j)
          for (int i = 0; i <= n; ++i) Hn.push_back(H.Hb()(g.position(i, j, k)));
      res.push_back(green_residual(Hn, forces_from_H(Hn, g), g, theta, dtheta));
    }
    out.push_back(bound("green_residual_decreases", res[2] - res[0] < 0.0 || res[0] == 0.0 ? 0.0 : res[2] - res[0], 0.0));
  } else {
    out.push_back(skipped("green_residual_decreases", "no divergence loads configured"));
  }

  // capacity
  for (const CapacityCase& cc : c.capacity) {
    const CapacityResult r = annulus_p_capacity(cc.p, cc.r);
    out.push_back(bound("capacity p=" + std::to_string(cc.p) + " r=" + std::to_string(cc.r),
                        std::abs(r.fem - r.closed_form) / r.closed_form, 0.02));
  }

  // p-growth on samples
  {
    std::vector<Mat3> samples;
    std::mt19937_64 rng(c.seed + 1);
    std::normal_distribution<double> nd(0.0, 2.0);
    for (int i = 0; i < 200; ++i) {
      Mat3 F;
      for (int q = 0; q < 9; ++q) F(q % 3, q / 3) = nd(rng);
      samples.push_back(F);
    }
    const GrowthReport g = check_p_growth(W, samples);
    out.push_back(bound("p_growth", static_cast<double>(g.witnesses.size()), 0.0));
  }
  return out;
}

}  // namespace msr
