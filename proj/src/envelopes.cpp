#include "msr/envelopes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "msr/optimize.hpp"

namespace msr {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Combination {
  std::vector<Mat3> atoms;
  std::vector<double> weights;
  double value = kInf;
};

double combination_value(const Integrand& W, const Combination& c) {
  double v = 0.0;
  for (std::size_t i = 0; i < c.atoms.size(); ++i) v += c.weights[i] * W.value(c.atoms[i]);
  return v;
}

// Lower convex hull of g sampled along T + t d, read off at t = 0.
struct LineSplit {
  double t1 = 0.0, t2 = 0.0, value = kInf;
};

LineSplit line_convexify(const Integrand& W, const Mat3& P, const Mat3& d, double R, int samples = 201) {
  std::vector<double> ts(samples), gs(samples);
  for (int i = 0; i < samples; ++i) {
    ts[i] = -R + 2.0 * R * i / (samples - 1);
    gs[i] = W.value(P + ts[i] * d);
  }
  std::vector<int> hull;
  for (int i = 0; i < samples; ++i) {
    while (hull.size() >= 2) {
      const int a = hull[hull.size() - 2], b = hull.back();
      const double cross = (ts[b] - ts[a]) * (gs[i] - gs[a]) - (gs[b] - gs[a]) * (ts[i] - ts[a]);
      if (cross <= 0.0)
        hull.pop_back();
      else
        break;
    }
    hull.push_back(i);
  }
  LineSplit s;
  for (std::size_t k = 0; k + 1 < hull.size(); ++k) {
    const int a = hull[k], b = hull[k + 1];
    if (ts[a] <= 0.0 && ts[b] >= 0.0) {
      if (ts[a] == 0.0 || ts[b] == 0.0) return s;
      const double w = ts[b] / (ts[b] - ts[a]);
      s.t1 = ts[a];
      s.t2 = ts[b];
      s.value = w * gs[a] + (1.0 - w) * gs[b];
      return s;
    }
  }
  return s;
}

std::vector<Mat3> coordinate_directions() {
  std::vector<Mat3> dirs;
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < 3; ++i) {
      Mat3 E = Mat3::Zero();
      E(i, j) = 1.0;
      dirs.push_back(E);
    }
  return dirs;
}

Mat3 random_rank_one(std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Vec3 a(nd(rng), nd(rng), nd(rng)), b(nd(rng), nd(rng), nd(rng));
  const Mat3 d = a.normalized() * b.normalized().transpose();
  return d;
}

// Replace atom `k` of c by the best line split among `dirs`; returns false if nothing improves.
bool split_atom(const Integrand& W, Combination& c, std::size_t k, const std::vector<Mat3>& dirs, double R) {
  const double wk = c.weights[k];
  const double base = W.value(c.atoms[k]);
  LineSplit best;
  const Mat3* bd = nullptr;
  for (const Mat3& d : dirs) {
    const LineSplit s = line_convexify(W, c.atoms[k], d, R);
    if (s.value < best.value) {
      best = s;
      bd = &d;
    }
  }
  if (!bd || !(best.value < base - 1e-15)) return false;
  const double w1 = best.t2 / (best.t2 - best.t1);
  const Mat3 P = c.atoms[k];
  c.atoms[k] = P + best.t1 * *bd;
  c.weights[k] = wk * w1;
  c.atoms.push_back(P + best.t2 * *bd);
  c.weights.push_back(wk * (1.0 - w1));
  c.value = combination_value(W, c);
  return true;
}

// Smooth re-parametrization: weights = softmax(theta), atoms shifted so the barycenter is the target.
Combination refine(const Integrand& W, const Mat3& T, const Combination& start, double bound, int max_iter) {
  const int N = static_cast<int>(start.atoms.size());
  std::vector<double> x(10 * N);
  for (int i = 0; i < N; ++i) {
    for (int e = 0; e < 9; ++e) x[9 * i + e] = start.atoms[i](e % 3, e / 3);
    x[9 * N + i] = std::log(std::max(start.weights[i], 1e-300));
  }
  auto unpack = [&](const double* v, std::vector<Mat3>& F, std::vector<double>& lam) {
    F.resize(N);
    lam.resize(N);
    double mx = -kInf;
    for (int i = 0; i < N; ++i) mx = std::max(mx, v[9 * N + i]);
    double s = 0.0;
    for (int i = 0; i < N; ++i) s += (lam[i] = std::exp(v[9 * N + i] - mx));
    for (int i = 0; i < N; ++i) lam[i] /= s;
    for (int i = 0; i < N; ++i) F[i] = Eigen::Map<const Mat3>(v + 9 * i);
  };
  Objective f = [&](const double* v, double* g) {
    std::vector<Mat3> F;
    std::vector<double> lam;
    unpack(v, F, lam);
    Mat3 S = Mat3::Zero();
    for (int i = 0; i < N; ++i) S += lam[i] * F[i];
    double val = 0.0;
    std::vector<Mat3> grads(N);
    std::vector<double> wv(N);
    for (int i = 0; i < N; ++i) {
      const Mat3 Fh = F[i] - S + T;
      if (Fh.norm() > bound) return kInf;
      wv[i] = W.value(Fh);
      val += lam[i] * wv[i];
      if (g) grads[i] = W.grad(Fh);
    }
    if (g) {
      Mat3 gbar = Mat3::Zero();
      for (int i = 0; i < N; ++i) gbar += lam[i] * grads[i];
      std::vector<double> dl(N);
      double mean = 0.0;
      for (int i = 0; i < N; ++i) {
        const Mat3 gi = lam[i] * (grads[i] - gbar);
        for (int e = 0; e < 9; ++e) g[9 * i + e] = gi(e % 3, e / 3);
        dl[i] = wv[i] - (gbar.array() * F[i].array()).sum();
        mean += lam[i] * dl[i];
      }
      for (int i = 0; i < N; ++i) g[9 * N + i] = lam[i] * (dl[i] - mean);
    }
    return val;
  };
  LbfgsOptions lo;
  lo.max_iterations = max_iter;
  lo.function_tolerance = 1e-14;
  lo.gradient_tolerance = 1e-13;
  lbfgs_minimize(f, x, lo);
  Combination out;
  std::vector<Mat3> F;
  unpack(x.data(), F, out.weights);
  Mat3 S = Mat3::Zero();
  for (int i = 0; i < N; ++i) S += out.weights[i] * F[i];
  for (int i = 0; i < N; ++i) out.atoms.push_back(F[i] - S + T);
  out.value = combination_value(W, out);
  return out;
}

}  // namespace

EnvelopeResult convex_envelope(const Integrand& W, const Mat3& T, const EnvelopeOptions& o) {
  const int N = std::clamp(o.points, 1, 10);
  const double bound = 4.0 * (1.0 + T.norm());
  const double R = 0.5 * bound;
  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<double> ud(0.05, 1.0);

  Combination best;
  best.atoms = {T};
  best.weights = {1.0};
  best.value = W.value(T);
  EnvelopeResult res;
  res.direct = best.value;

  auto consider = [&](const Combination& c) {
    if (c.value < best.value) best = c;
  };

  if (N >= 2) {
    // two-atom stage: line splits along coordinate and random rank-one directions, then joint refinement
    std::vector<Mat3> dirs = coordinate_directions();
    for (int s = 0; s < o.multistart; ++s) dirs.push_back(random_rank_one(rng));
    if (T.norm() > 1e-12) dirs.push_back(T / T.norm());
    std::vector<Combination> seeds;
    for (const Mat3& d : dirs) {
      const LineSplit s = line_convexify(W, T, d, R);
      if (!std::isfinite(s.value)) continue;
      Combination c;
      const double w1 = s.t2 / (s.t2 - s.t1);
      c.atoms = {T + s.t1 * d, T + s.t2 * d};
      c.weights = {w1, 1.0 - w1};
      c.value = combination_value(W, c);
      seeds.push_back(c);
    }
    for (int s = 0; s < o.multistart; ++s) {
      Combination c;
      const Mat3 d = random_rank_one(rng) * (R * ud(rng));
      c.atoms = {T + d, T - d};
      c.weights = {0.5, 0.5};
      c.value = combination_value(W, c);
      seeds.push_back(c);
    }
    std::sort(seeds.begin(), seeds.end(), [](const Combination& a, const Combination& b) { return a.value < b.value; });
    const std::size_t nrefine = std::min<std::size_t>(seeds.size(), std::max(4, o.multistart / 2));
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      consider(seeds[i]);
      if (i < nrefine) consider(refine(W, T, seeds[i], bound, o.max_iterations));
    }
  }

  if (N >= 4) {
    // four-atom seeds T + s Q S_i, S_i the sign patterns diag(+-1) with an even number of minus signs
    // (they sum to zero); rank-one splits never connect points of a rotation-like set
    static const Vec3 signs[4] = {Vec3(1, 1, 1), Vec3(1, -1, -1), Vec3(-1, 1, -1), Vec3(-1, -1, 1)};
    std::normal_distribution<double> nd;
    std::vector<Combination> seeds;
    for (int s = 0; s < 4 + o.multistart; ++s) {
      Mat3 Q = Mat3::Identity();
      double scale = R * (s + 1) / 4.0;
      if (s >= 4) {
        Mat3 G;
        for (int q = 0; q < 9; ++q) G(q % 3, q / 3) = nd(rng);
        Q = project_rotation(G);
        scale = R * ud(rng);
      }
      Combination c;
      for (const Vec3& d : signs) c.atoms.push_back(T + scale * Q * d.asDiagonal());
      c.weights.assign(4, 0.25);
      c.value = combination_value(W, c);
      seeds.push_back(c);
    }
    std::sort(seeds.begin(), seeds.end(), [](const Combination& a, const Combination& b) { return a.value < b.value; });
    for (std::size_t i = 0; i < seeds.size() && i < 4; ++i) consider(refine(W, T, seeds[i], bound, o.max_iterations));
  }

  // higher stages: split the heaviest atom of the incumbent along the best line, then refine jointly
  std::vector<Mat3> dirs = coordinate_directions();
  for (int s = 0; s < 4; ++s) dirs.push_back(random_rank_one(rng));
  Combination running = best;
  for (int k = static_cast<int>(running.atoms.size()) + 1; k <= N; ++k) {
    Combination c = running;
    std::vector<std::size_t> order(c.atoms.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return c.weights[a] > c.weights[b]; });
    bool split = false;
    for (std::size_t idx : order) {
      Combination trial = c;
      if (split_atom(W, trial, idx, dirs, R)) {
        c = trial;
        split = true;
        break;
      }
    }
    if (!split) break;
    const Combination refined = refine(W, T, c, bound, o.max_iterations);
    running = refined.value < c.value ? refined : c;
    consider(running);
  }

  res.value = best.value;
  res.atoms = best.atoms;
  res.weights = best.weights;
  res.stalled = !(best.value < res.direct - o.tol);
  return res;
}

EnvelopeResult convex_envelope(const EnergyDensity& W, const Mat3& target, const EnvelopeOptions& o) {
  return convex_envelope(as_integrand(W), target, o);
}

double radial_envelope_oracle(double t) {
  if (t < 0.0) throw std::invalid_argument("radius must be nonnegative");
  const double s = std::max(0.0, t * t - 1.0);
  return s * s;
}

namespace {

EnvelopeResult reduce_over(const EnergyDensity& W, int nfree, const std::function<Mat3(const double*)>& assemble,
                           const std::function<void(const Mat3&, double*)>& project_grad,
                           const std::vector<std::vector<double>>& structured, int multistart, std::uint64_t seed) {
  Objective f = [&](const double* x, double* g) {
    const Mat3 F = assemble(x);
    if (g) project_grad(gradient(W, F), g);
    return evaluate(W, F);
  };
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 0.5);
  EnvelopeResult res;
  res.value = kInf;
  std::vector<std::vector<double>> starts = structured;
  while (static_cast<int>(starts.size()) < std::max(multistart, 1)) {
    std::vector<double> x = structured.front();
    for (double& v : x) v += nd(rng);
    starts.push_back(x);
  }
  starts.resize(std::max(multistart, 1));
  LbfgsOptions lo;
  lo.max_iterations = 500;
  lo.function_tolerance = 1e-15;
  lo.gradient_tolerance = 1e-12;
  res.direct = f(starts.front().data(), nullptr);
  for (auto x : starts) {
    x.resize(nfree);
    const LbfgsResult r = lbfgs_minimize(f, x, lo);
    if (r.value < res.value) {
      res.value = r.value;
      res.atoms = {assemble(x.data())};
      res.weights = {1.0};
    }
  }
  res.stalled = !(res.value < res.direct);
  return res;
}

}  // namespace

EnvelopeResult reduced_W0(const EnergyDensity& W, const Vec3& zeta, int multistart, std::uint64_t seed) {
  auto assemble = [&](const double* x) {
    Mat3 F;
    F.col(0) = Vec3(x[0], x[1], x[2]);
    F.col(1) = Vec3(x[3], x[4], x[5]);
    F.col(2) = zeta;
    return F;
  };
  auto pg = [](const Mat3& G, double* g) {
    for (int e = 0; e < 6; ++e) g[e] = G(e % 3, e / 3);
  };
  std::vector<std::vector<double>> structured = {{1, 0, 0, 0, 1, 0}};
  // completion by a rotation carrying e3 to the direction of zeta
  if (zeta.norm() > 1e-12) {
    const Mat3 R = Eigen::Quaterniond::FromTwoVectors(Vec3::UnitZ(), zeta.normalized()).toRotationMatrix();
    structured.push_back({R(0, 0), R(1, 0), R(2, 0), R(0, 1), R(1, 1), R(2, 1)});
  }
  return reduce_over(W, 6, assemble, pg, structured, multistart, seed);
}

EnvelopeResult reduced_W1(const EnergyDensity& W, const Mat3x2& Ma, int multistart, std::uint64_t seed) {
  auto assemble = [&](const double* x) { return join(Ma, Vec3(x[0], x[1], x[2])); };
  auto pg = [](const Mat3& G, double* g) {
    for (int e = 0; e < 3; ++e) g[e] = G(e, 2);
  };
  std::vector<std::vector<double>> structured = {{0, 0, 1}};
  const Vec3 nrm = Ma.col(0).cross(Ma.col(1));
  if (nrm.norm() > 1e-12) {
    const Vec3 c = nrm.normalized();
    structured.push_back({c(0), c(1), c(2)});
  }
  return reduce_over(W, 3, assemble, pg, structured, multistart, seed);
}

}  // namespace msr

namespace msr {

namespace {

constexpr int kKuhn[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};

// mean over the top face equals mean over the bottom face (zero mean x3-slope)
void project_slope(std::vector<double>& phi, int n) {
  const CellGrid g{n};
  for (int c = 0; c < 3; ++c) {
    double top = 0.0, bot = 0.0;
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) {
        top += phi[3 * g.node(i, j, n) + c];
        bot += phi[3 * g.node(i, j, 0) + c];
      }
    const double d = (top - bot) / (n * n);
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) {
        phi[3 * g.node(i, j, n) + c] -= 0.5 * d;
        phi[3 * g.node(i, j, 0) + c] += 0.5 * d;
      }
  }
}

}  // namespace

double cell_energy(const Integrand& W, const Mat3& T, int n, const double* phi, double lambda, double* grad) {
  const CellGrid g{n};
  const double vol = 1.0 / (6.0 * n * n * n);
  double val = 0.0;
  if (grad) std::fill(grad, grad + 3 * g.nodes() + 1, 0.0);
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i)
        for (const auto& pi : kKuhn) {
          int v[4];
          int c[3] = {i, j, k};
          v[0] = g.node(c[0], c[1], c[2]);
          for (int m = 0; m < 3; ++m) {
            ++c[pi[m]];
            v[m + 1] = g.node(c[0], c[1], c[2]);
          }
          Mat3 G;
          for (int m = 0; m < 3; ++m)
            for (int r = 0; r < 3; ++r) G(r, pi[m]) = n * (phi[3 * v[m + 1] + r] - phi[3 * v[m] + r]);
          Mat3 F = T;
          F.leftCols<2>() += G.leftCols<2>();
          F.col(2) += lambda * G.col(2);
          val += vol * W.value(F);
          if (grad) {
            const Mat3 P = W.grad(F);
            for (int m = 0; m < 3; ++m) {
              const int col = pi[m];
              const double s = vol * n * (col == 2 ? lambda : 1.0);
              for (int r = 0; r < 3; ++r) {
                grad[3 * v[m + 1] + r] += s * P(r, col);
                grad[3 * v[m] + r] -= s * P(r, col);
              }
            }
            grad[3 * g.nodes()] += vol * P.col(2).dot(G.col(2));
          }
        }
  return val;
}

std::vector<double> prolong_cell_field(const std::vector<double>& coarse, int n) {
  const CellGrid cg{n}, fg{2 * n};
  std::vector<double> fine(3 * fg.nodes());
  for (int K = 0; K <= 2 * n; ++K)
    for (int J = 0; J < 2 * n; ++J)
      for (int I = 0; I < 2 * n; ++I) {
        int base[3] = {I / 2, J / 2, K / 2};
        double f[3] = {0.5 * (I % 2), 0.5 * (J % 2), 0.5 * (K % 2)};
        if (base[2] == n) {
          base[2] = n - 1;
          f[2] = 1.0;
        }
        int ord[3] = {0, 1, 2};
        std::sort(ord, ord + 3, [&](int a, int b) { return f[a] > f[b]; });
        const double w[4] = {1.0 - f[ord[0]], f[ord[0]] - f[ord[1]], f[ord[1]] - f[ord[2]], f[ord[2]]};
        int c[3] = {base[0], base[1], base[2]};
        int v[4];
        v[0] = cg.node(c[0], c[1], c[2]);
        for (int m = 0; m < 3; ++m) {
          ++c[ord[m]];
          v[m + 1] = cg.node(c[0], c[1], c[2]);
        }
        const int dst = fg.node(I, J, K);
        for (int r = 0; r < 3; ++r) {
          double s = 0.0;
          for (int m = 0; m < 4; ++m) s += w[m] * coarse[3 * v[m] + r];
          fine[3 * dst + r] = s;
        }
      }
  return fine;
}

CellResult cell_qcw_from(const Integrand& W, const Mat3& T, int n, const std::vector<std::vector<double>>& starts,
                         const std::vector<double>& lambdas, const EnvelopeOptions& o) {
  const CellGrid g{n};
  const int nv = 3 * g.nodes();
  CellResult res;
  res.n = n;
  res.direct = W.value(T);
  res.value = res.direct;
  res.field.assign(nv, 0.0);
  res.lambda = 1.0;
  Objective f = [&](const double* x, double* grad) {
    std::vector<double> phi(x, x + nv);
    project_slope(phi, n);
    const double v = cell_energy(W, T, n, phi.data(), x[nv], grad);
    if (grad) {
      std::vector<double> gp(grad, grad + nv);
      project_slope(gp, n);
      std::copy(gp.begin(), gp.end(), grad);
    }
    return v;
  };
  LbfgsOptions lo;
  lo.max_iterations = o.max_iterations;
  lo.function_tolerance = 1e-14;
  lo.gradient_tolerance = 1e-12;
  for (std::size_t s = 0; s < starts.size(); ++s) {
    std::vector<double> x = starts[s];
    project_slope(x, n);
    x.push_back(s < lambdas.size() ? lambdas[s] : 1.0);
    const LbfgsResult r = lbfgs_minimize(f, x, lo);
    if (r.value < res.value) {
      res.value = r.value;
      res.lambda = x[nv];
      res.field.assign(x.begin(), x.begin() + nv);
      project_slope(res.field, n);
    }
  }
  res.stalled = !(res.value < res.direct - o.tol);
  return res;
}

CellResult cell_qcw(const Integrand& W, const Mat3& T, const EnvelopeOptions& o) {
  const int n = std::max(2, o.cell_n);
  const CellGrid g{n};
  std::vector<std::vector<double>> starts;
  std::vector<double> lambdas;
  if (n % 2 == 0 && n / 2 >= 2) {
    EnvelopeOptions oc = o;
    oc.cell_n = n / 2;
    const CellResult coarse = cell_qcw(W, T, oc);
    starts.push_back(prolong_cell_field(coarse.field, n / 2));
    lambdas.push_back(coarse.lambda);
  }
  starts.emplace_back(3 * g.nodes(), 0.0);
  lambdas.push_back(1.0);
  std::mt19937_64 rng(o.seed + 977 * n);
  std::normal_distribution<double> nd(0.0, 0.5);
  auto tent = [n](int i) { return std::min(i, n - i) / static_cast<double>(n); };
  for (int s = 0; static_cast<int>(starts.size()) < std::max(2, o.cell_multistart) + 1; ++s) {
    std::vector<double> phi(3 * g.nodes());
    const Vec3 a(nd(rng), nd(rng), nd(rng));
    const int mode = s % 4;
    for (int k = 0; k <= n; ++k)
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
          const int v = g.node(i, j, k);
          double t = 0.0;
          if (mode == 0) t = tent(i);
          if (mode == 1) t = tent(j);
          if (mode == 2) t = std::min(k, n - k) / static_cast<double>(n);
          for (int r = 0; r < 3; ++r) phi[3 * v + r] = mode == 3 ? 0.2 * nd(rng) / n : a(r) * t;
        }
    starts.push_back(phi);
    lambdas.push_back(1.0 + 0.25 * nd(rng));
  }
  return cell_qcw_from(W, T, n, starts, lambdas, o);
}

CellResult cell_qcw(const EnergyDensity& W, const Mat3& T, const EnvelopeOptions& o) {
  return cell_qcw(as_integrand(W), T, o);
}

ChainReport verify_envelope_chain(const EnergyDensity& W, const std::vector<Mat3>& samples, const EnvelopeOptions& o,
                                  double lower_slack, double upper_slack) {
  ChainReport rep;
  rep.lower_slack = lower_slack;
  rep.upper_slack = upper_slack;
  const Integrand I = as_integrand(W);
  for (std::size_t s = 0; s < samples.size(); ++s) {
    ChainRow row;
    row.F = samples[s];
    row.w = I.value(row.F);
    row.convex = convex_envelope(I, row.F, o).value;
    row.cell = cell_qcw(I, row.F, o).value;
    if (row.convex > row.cell + lower_slack || row.cell > row.w + upper_slack) rep.violations.push_back(s);
    rep.rows.push_back(row);
  }
  return rep;
}

Cross1DReport cross_convex_1d_check(const EnergyDensity& W, const Vec3& M1, const Mat3x2& b1, const Vec3& M2,
                                    const Mat3x2& b2, double lambda) {
  if (!(lambda > 0.0 && lambda < 1.0)) throw std::invalid_argument("lambda must lie in (0,1)");
  Cross1DReport rep;
  rep.lambda = lambda;
  const Vec3 M = lambda * M1 + (1.0 - lambda) * M2;
  const Mat3x2 b = lambda * b1 + (1.0 - lambda) * b2;
  // theta' and eta on the pieces [0, lambda] and [lambda, 1]
  const Vec3 dtheta_left = (1.0 - lambda) * M1 - (1.0 - lambda) * M2;
  const Vec3 dtheta_right = -lambda * M1 + lambda * M2;
  const Mat3x2 eta_left = (1.0 - lambda) * b1 - (1.0 - lambda) * b2;
  const Mat3x2 eta_right = -lambda * b1 + lambda * b2;
  auto theta = [&](double x) -> Vec3 {
    return x <= lambda ? Vec3(dtheta_left * x) : Vec3(dtheta_right * (x - 1.0));
  };
  rep.theta_at_0 = theta(0.0).norm();
  rep.theta_at_1 = theta(1.0).norm();
  rep.eta_mean = (lambda * eta_left + (1.0 - lambda) * eta_right).norm();
  rep.lhs = evaluate(W, join(b, M));
  rep.rhs = lambda * evaluate(W, join(b + eta_left, M + dtheta_left)) +
            (1.0 - lambda) * evaluate(W, join(b + eta_right, M + dtheta_right));
  rep.gap = rep.rhs - rep.lhs;
  return rep;
}

CommuteReport envelope_scaling_commute(const EnergyDensity& W, double r, const std::vector<Mat3>& samples,
                                       const EnvelopeOptions& o) {
  const ScaledDensityA Wr = scaled_density_a(W, r);
  const Integrand Ir = Wr.integrand(), I = as_integrand(W);
  CommuteReport rep;
  for (const Mat3& M : samples) {
    rep.scaled.push_back(convex_envelope(Ir, M, o).value);
    rep.unscaled.push_back(convex_envelope(I, Wr.map(M), o).value);
    rep.max_diff = std::max(rep.max_diff, std::abs(rep.scaled.back() - rep.unscaled.back()));
  }
  return rep;
}

}  // namespace msr
