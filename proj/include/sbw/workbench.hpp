#pragma once
// Sobolev-Burgers solutions assembled from Cauchy trajectories phi(t, lambda),
// auxiliary kernels K_{a(lambda), q(lambda)} and an atomic random measure:
// u(t, x, y; omega) = sum_j c_j(omega) phi(t, lambda_j) K_j(x, y).

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdio>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sbw/algebra.hpp"
#include "sbw/calculus.hpp"
#include "sbw/errors.hpp"
#include "sbw/kernel.hpp"
#include "sbw/parallel.hpp"
#include "sbw/randmeasure.hpp"
#include "sbw/temporal.hpp"

namespace sbw {

/// Q(d/dt)(-Delta^2 + alpha Delta + beta) u + gamma d(u^2)/dx_1 + varsigma u^2 = 0
/// with Q(t) = t^m + c_{m-1} t^{m-1} + ... + c_0, on [0, T] x box^n.
struct SobolevBurgersSpec {
  cplx alpha{1.0}, beta{0.0}, gamma{1.0}, varsigma{0.0};
  unsigned m = 1;
  std::vector<cplx> c{0.0};
  std::size_t n = 2;
  Axis box{0.0, 0.5, 11};
  double T = 0.5;

  [[nodiscard]] unsigned level() const {
    unsigned r = 2;
    while ((std::size_t{1} << r) <= n) ++r;
    return r;
  }
  [[nodiscard]] Grid grid() const {
    Grid g;
    g.space.assign(n, box);
    return g;
  }
  void validate() const {
    if (alpha == cplx{}) throw ValidationError("alpha must be nonzero");
    if (std::abs(gamma) + std::abs(varsigma) == 0.0) throw ValidationError("gamma and varsigma cannot both vanish");
    if (n < 2) throw ValidationError("the spatial dimension must be at least 2");
    if (m < 1) throw ValidationError("Q needs degree m >= 1");
    if (c.size() != m) throw ValidationError("Q needs exactly m lower coefficients c_0..c_{m-1}");
    box.validate("box");
    if (!(T > 0.0)) throw ValidationError("horizon T must be positive");
  }
};

/// Coefficients of the classical equation met by u(t, x, x) when u(t, x, y)
/// solves the doubled-variable form with psi_j = 2^{-1/2}. On G((x + y)/2),
/// sigma_x^2 + sigma_y^2 acts as -Delta/4 and pi_1(sigma_x + sigma_y) as
/// -2^{-1/2} d/dx_1, so S_0 (a = -alpha, b = beta) turns into
/// -Delta^2/16 + alpha Delta/4 + beta. Everything is multiplied by 16.
struct ClassicalCoefficients {
  cplx alpha, beta, gamma, varsigma;
};

inline ClassicalCoefficients diagonal_coefficients(const SobolevBurgersSpec& s) {
  return {4.0 * s.alpha, 16.0 * s.beta, -8.0 * std::sqrt(2.0) * s.gamma, 16.0 * s.varsigma};
}

/// kappa = (-k, 0, ..., 0) with k^2 the largest positive root of
/// -k^4/16 + alpha k^2/4 + beta = 0. Every a(lambda) = lambda_1 (-1, -alpha, beta)
/// shares this characteristic equation, so all atoms use the same kappa.
inline std::vector<double> default_kappa(const SobolevBurgersSpec& s) {
  const cplx disc = std::sqrt(16.0 * s.alpha * s.alpha + 64.0 * s.beta);
  double best = -1.0;
  for (double sign : {1.0, -1.0}) {
    const cplx root = (4.0 * s.alpha + sign * disc) / 2.0;
    if (std::abs(root.imag()) <= 1e-12 * std::max(1.0, std::abs(root)) && root.real() > 0.0) {
      best = std::max(best, root.real());
    }
  }
  if (best < 0.0) throw ValidationError("no real kappa solves the characteristic equation; set kappa explicitly");
  std::vector<double> kappa(s.n, 0.0);
  kappa[0] = -std::sqrt(best);
  return kappa;
}

struct SpectralPoint {
  std::vector<cplx> lambda;  // lambda_1 .. lambda_{m+3}
};

struct AtomParams {
  std::array<cplx, 3> a;
  cplx q1, q2, p1, p2;
};

inline AtomParams lambda_to_params(const SpectralPoint& pt, const SobolevBurgersSpec& s) {
  const auto& l = pt.lambda;
  if (l.size() != s.m + 3) throw ValidationError("lambda must have m + 3 entries");
  if (l[0] == cplx{}) throw ValidationError("lambda_1 must be nonzero");
  const cplx p1 = l[s.m + 1], p2 = l[s.m + 2];
  const double scale = std::max({1.0, std::abs(p2 * s.gamma), std::abs(p1 * s.varsigma)});
  if (std::abs(p2 * s.gamma - p1 * s.varsigma) > 1e-12 * scale) {
    throw ValidationError("constraint p2 gamma = p1 varsigma is violated");
  }
  if ((s.gamma == cplx{}) != (p1 == cplx{})) throw ValidationError("p1 must vanish exactly when gamma does");
  if ((s.varsigma == cplx{}) != (p2 == cplx{})) throw ValidationError("p2 must vanish exactly when varsigma does");
  AtomParams out;
  out.a = {-l[0], -s.alpha * l[0], s.beta * l[0]};
  out.q1 = 2.0 * l[0] * p1;
  out.q2 = 2.0 * l[0] * p2;
  out.p1 = p1;
  out.p2 = p2;
  return out;
}

/// One atom: phi on the time grid, Q(d/dt) phi, and the kernel with its
/// prepared tables (K is evaluated on demand, never stored on V^2).
struct Atom {
  SpectralPoint point;
  AtomParams params;
  Trajectory phi;
  std::vector<cplx> q_phi;
  std::shared_ptr<const KernelSolution> kernel;
  std::shared_ptr<const KernelOperator::Prepared> prepared;

  [[nodiscard]] KernelConfig config() const { return kernel->op.config(); }
};

struct AssemblyOptions {
  std::vector<double> kappa;  // empty: default_kappa
  double tau = 1e-2;
  double tol = 1e-12;
  unsigned max_iter = 200;
};

inline Atom build_atom(const SpectralPoint& pt, const SobolevBurgersSpec& s, const AssemblyOptions& opt) {
  Atom atom;
  atom.point = pt;
  atom.params = lambda_to_params(pt, s);

  CauchySpec cs;
  cs.m = s.m;
  cs.c = s.c;
  cs.lambda.assign(pt.lambda.begin(), pt.lambda.begin() + s.m + 1);
  cs.T = s.T;
  cs.tau = opt.tau;
  atom.phi = solve_cauchy(cs);
  if (atom.phi.blew_up) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "phi blows up at t = %.6g inside [0, %.6g]", atom.phi.reached, s.T);
    throw NumericalError(buf);
  }
  atom.q_phi = apply_Q(atom.phi, s.c);

  KernelConfig kc;
  kc.a = atom.params.a;
  kc.p1 = atom.params.p1;
  kc.p2 = atom.params.p2;
  kc.kappa = opt.kappa.empty() ? default_kappa(s) : opt.kappa;
  kc.tol = opt.tol;
  kc.max_iter = opt.max_iter;
  kc.level = s.level();
  auto sol = std::make_shared<KernelSolution>(solve_K(kc, s.grid()));
  if (sol->trace.diverged) throw NumericalError("Picard iteration for the kernel diverged");
  if (!sol->trace.converged) throw NumericalError("Picard iteration for the kernel did not reach the tolerance");
  atom.prepared = std::make_shared<KernelOperator::Prepared>(sol->op.prepare(sol->state));
  atom.kernel = std::move(sol);
  return atom;
}

// ---------------------------------------------------------------------------
// Solution field

class SolutionField {
public:
  SolutionField(SobolevBurgersSpec spec, std::vector<Atom> atoms, AtomicRandomMeasure measure)
      : spec_(std::move(spec)), atoms_(std::move(atoms)), measure_(std::move(measure)) {
    if (atoms_.empty()) throw ValidationError("solution needs at least one atom");
    if (measure_.cells() != atoms_.size()) throw ValidationError("measure needs one cell per atom");
    for (std::size_t j = 0; j < atoms_.size(); ++j) {
      if (measure_.partition().cell(j).lambda != atoms_[j].point.lambda) {
        throw ValidationError("measure cell " + std::to_string(j) + " is not aligned with atom " + std::to_string(j));
      }
      if (atoms_[j].phi.size() != atoms_[0].phi.size()) throw ValidationError("atoms use different time grids");
    }
    level_ = atoms_[0].kernel->op.level();
    W_ = std::size_t{1} << level_;
  }

  [[nodiscard]] const SobolevBurgersSpec& spec() const { return spec_; }
  [[nodiscard]] const std::vector<Atom>& atoms() const { return atoms_; }
  [[nodiscard]] const AtomicRandomMeasure& measure() const { return measure_; }
  [[nodiscard]] const Grid& grid() const { return atoms_[0].kernel->op.grid(); }
  [[nodiscard]] const Lattice& lattice() const { return atoms_[0].kernel->op.lattice_V(); }
  [[nodiscard]] unsigned level() const { return level_; }
  [[nodiscard]] std::size_t width() const { return W_; }
  [[nodiscard]] std::size_t times() const { return atoms_[0].phi.size(); }
  [[nodiscard]] double t(std::size_t k) const { return atoms_[0].phi.t[k]; }
  [[nodiscard]] double tau() const { return atoms_[0].phi.tau; }

  /// K_j(x, y) at V nodes x, y.
  void kernel(std::size_t j, std::size_t x, std::size_t y, cplx* out) const {
    const Atom& a = atoms_[j];
    const KernelOperator& op = a.kernel->op;
    op.value(*a.prepared, x, op.to_U(y), out);
    out[0] += midpoint_F(op.config().kappa, lattice().point(x), lattice().point(y));
  }

  /// phi_j(t_k) K_j(x, y).
  [[nodiscard]] std::vector<cplx> atom_term(std::size_t j, std::size_t k, std::size_t x, std::size_t y) const {
    std::vector<cplx> v(W_);
    kernel(j, x, y, v.data());
    const cplx ph = atoms_[j].phi.phi(k);
    for (auto& e : v) e *= ph;
    return v;
  }

  /// u(t_k, x, y; omega_s) = c_J(omega_s) phi_J K_J for the firing cell J.
  [[nodiscard]] std::vector<cplx> sample(const Realization& r, std::size_t s, std::size_t k, std::size_t x,
                                         std::size_t y) const {
    const std::size_t J = r.index[s];
    auto v = atom_term(J, k, x, y);
    const cplx c = measure_.c(r, s, J);
    for (auto& e : v) e *= c;
    return v;
  }

  /// Eu = sum_j xi_j p_j phi_j K_j, exact for the atomic measure.
  [[nodiscard]] std::vector<cplx> expectation(std::size_t k, std::size_t x, std::size_t y) const {
    std::vector<cplx> out(W_, cplx{});
    for (std::size_t j = 0; j < atoms_.size(); ++j) {
      const cplx w = measure_.xi(j) * measure_.p(j);
      if (w == cplx{}) continue;
      const auto v = atom_term(j, k, x, y);
      for (std::size_t i = 0; i < W_; ++i) out[i] += w * v[i];
    }
    return out;
  }

  [[nodiscard]] std::vector<cplx> diagonal(std::size_t k, std::size_t x) const { return expectation(k, x, x); }

  /// K_j(x, x) over V.
  [[nodiscard]] GridField kernel_diagonal(std::size_t j) const {
    GridField g = GridField::hypercomplex(grid(), level_, Arity::X);
    parallel_for(g.nodes(), [&](std::size_t x) { kernel(j, x, x, g.at(x)); });
    return g;
  }

  /// u(t_k, x) = Eu(t_k, x, x) over V.
  [[nodiscard]] GridField diagonal_field(std::size_t k) const {
    GridField g = GridField::hypercomplex(grid(), level_, Arity::X);
    parallel_for(g.nodes(), [&](std::size_t x) {
      const auto v = diagonal(k, x);
      std::copy(v.begin(), v.end(), g.at(x));
    });
    return g;
  }

  /// Eu(t_k, ., .) over V^2; grows like (nodes of V)^2.
  [[nodiscard]] GridField expectation_field(std::size_t k) const {
    GridField g = GridField::hypercomplex(grid(), level_, Arity::XY);
    const std::size_t NV = lattice().size();
    parallel_for(NV, [&](std::size_t x) {
      for (std::size_t y = 0; y < NV; ++y) {
        const auto v = expectation(k, x, y);
        std::copy(v.begin(), v.end(), g.at(x * NV + y));
      }
    });
    return g;
  }

private:
  SobolevBurgersSpec spec_;
  std::vector<Atom> atoms_;
  AtomicRandomMeasure measure_;
  unsigned level_ = 2;
  std::size_t W_ = 4;
};

/// One unit-free cell per atom, sized so the cells do not overlap.
inline Partition atom_partition(const std::vector<SpectralPoint>& points) {
  if (points.empty()) throw ValidationError("need at least one atom");
  double side = 1.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (points[i].lambda.size() != points[j].lambda.size()) throw ValidationError("atoms have different lengths");
      double d = 0.0;
      for (std::size_t a = 0; a < points[i].lambda.size(); ++a) {
        const cplx e = points[i].lambda[a] - points[j].lambda[a];
        d = std::max({d, std::abs(e.real()), std::abs(e.imag())});
      }
      if (d == 0.0) throw ValidationError("atoms " + std::to_string(j) + " and " + std::to_string(i) + " coincide");
      side = std::min(side, d);
    }
  }
  std::vector<std::vector<cplx>> reps;
  for (const auto& p : points) reps.push_back(p.lambda);
  return Partition::around(reps, side);
}

/// Measure with weights p and amplitudes xi; an empty xi list applies the rule.
inline AtomicRandomMeasure make_measure(const std::vector<SpectralPoint>& points, const SobolevBurgersSpec& s,
                                        std::vector<double> p, std::vector<cplx> xi, XiRule rule,
                                        std::uint64_t seed) {
  if (xi.empty()) {
    for (const auto& pt : points) xi.push_back(xi_from_rule(pt.lambda, s.m, s.gamma, s.varsigma, rule));
  }
  return AtomicRandomMeasure(atom_partition(points), std::move(p), std::move(xi), {}, seed);
}

inline SolutionField assemble_u(const SobolevBurgersSpec& s, const std::vector<SpectralPoint>& points,
                                AtomicRandomMeasure measure, const AssemblyOptions& opt) {
  s.validate();
  std::vector<Atom> atoms;
  atoms.reserve(points.size());
  for (const auto& pt : points) atoms.push_back(build_atom(pt, s, opt));
  return SolutionField(s, std::move(atoms), std::move(measure));
}

// ---------------------------------------------------------------------------
// Moments

struct MomentReport {
  std::vector<cplx> second_moment;  // E u^2 by enumeration: sum_j p_j (xi_j v_j)^2
  std::vector<cplx> identity_rhs;   // sum_j xi_j E(c_j) v_j^2
  std::vector<cplx> mean_square;    // (E u)^2
  std::vector<MonteCarlo> mc;       // E u^2 by sampling, one per coefficient
  double identity_gap = 0.0;        // |second_moment - identity_rhs|
  double product_gap = 0.0;         // |second_moment - mean_square|
  bool mc_agrees = false;
  bool product_holds = false;
};

/// values holds v_j = phi_j K_j for every atom (cells() * 2^level entries).
inline MomentReport moment_identity(unsigned level, std::span<const cplx> values, const AtomicRandomMeasure& mu,
                                    std::size_t samples, std::size_t first = 0) {
  const std::size_t W = std::size_t{1} << level;
  const std::size_t J = mu.cells();
  if (values.size() != J * W) throw ValidationError("moment check needs one value per atom");
  auto sq = [&](const cplx* v) {
    std::vector<cplx> out(W);
    cd_mul_raw(level, v, v, out.data());
    return out;
  };
  MomentReport rep;
  rep.second_moment.assign(W, cplx{});
  rep.identity_rhs.assign(W, cplx{});
  std::vector<cplx> mean(W, cplx{});
  std::vector<cplx> u(J * W);
  for (std::size_t j = 0; j < J; ++j) {
    for (std::size_t i = 0; i < W; ++i) u[j * W + i] = mu.xi(j) * values[j * W + i];
    const auto u2 = sq(u.data() + j * W);
    const auto v2 = sq(values.data() + j * W);
    const cplx Ec = mu.xi(j) * mu.p(j);
    for (std::size_t i = 0; i < W; ++i) {
      rep.second_moment[i] += mu.p(j) * u2[i];
      rep.identity_rhs[i] += mu.xi(j) * Ec * v2[i];
      mean[i] += Ec * values[j * W + i];
    }
  }
  rep.mean_square = sq(mean.data());
  double scale = 1.0;
  for (std::size_t i = 0; i < W; ++i) {
    rep.identity_gap = std::max(rep.identity_gap, std::abs(rep.second_moment[i] - rep.identity_rhs[i]));
    rep.product_gap = std::max(rep.product_gap, std::abs(rep.second_moment[i] - rep.mean_square[i]));
    scale = std::max(scale, std::abs(rep.second_moment[i]));
  }
  rep.product_holds = rep.product_gap <= 1e-12 * scale;
  rep.mc_agrees = true;
  if (samples > 0) {
    const Realization r = mu.sample(samples, first);
    std::vector<std::vector<cplx>> per(W, std::vector<cplx>(samples));
    const std::vector<std::vector<cplx>> atom_sq = [&] {
      std::vector<std::vector<cplx>> out;
      for (std::size_t j = 0; j < J; ++j) out.push_back(sq(u.data() + j * W));
      return out;
    }();
    for (std::size_t s = 0; s < samples; ++s) {
      for (std::size_t i = 0; i < W; ++i) per[i][s] = atom_sq[r.index[s]][i];
    }
    for (std::size_t i = 0; i < W; ++i) {
      rep.mc.push_back(expectation(per[i]));
      rep.mc_agrees = rep.mc_agrees && rep.mc.back().agrees(rep.second_moment[i]);
    }
  }
  return rep;
}

inline MomentReport moment_identity(const SolutionField& u, std::size_t k, std::size_t x, std::size_t y,
                                    std::size_t samples) {
  const std::size_t W = u.width();
  std::vector<cplx> values(u.atoms().size() * W);
  for (std::size_t j = 0; j < u.atoms().size(); ++j) {
    const auto v = u.atom_term(j, k, x, y);
    std::copy(v.begin(), v.end(), values.begin() + static_cast<std::ptrdiff_t>(j * W));
  }
  return moment_identity(u.level(), values, u.measure(), samples);
}

// ---------------------------------------------------------------------------
// Residuals

struct ResidualRow {
  std::size_t count = 0;   // nodes per axis of V
  double h = 0.0;
  double tau = 0.0;
  double linear = 0.0;       // max |Q(d/dt) S_0 (phi F)| over atoms, time samples and diagonal nodes
  double expectation = 0.0;  // doubled-variable expectation equation at x = y
  double auxiliary = 0.0;    // max over atoms of the auxiliary PDE at x = y
  double diagonal = 0.0;     // classical equation for u(t, x, x; omega), in expectation
  double classical = 0.0;    // classical equation for u(t, x) = Eu(t, x, x)
  std::size_t points = 0;    // diagonal nodes per time sample
};

namespace detail {
inline double coeff_norm(const cplx* v, std::size_t W) {
  double q = 0.0;
  for (std::size_t j = 0; j < W; ++j) q += std::norm(v[j]);
  return std::sqrt(q);
}
}  // namespace detail

/// All residuals on V nodes at least `collar` cells from the boundary and on
/// every time sample. The classical rows use diagonal_coefficients.
inline ResidualRow residuals(const SolutionField& u, std::size_t collar) {
  const SobolevBurgersSpec& s = u.spec();
  const std::size_t W = u.width();
  const std::size_t NT = u.times();
  const std::size_t J = u.atoms().size();
  const unsigned level = u.level();
  const AtomicRandomMeasure& mu = u.measure();
  const Lattice& lat = u.lattice();

  ResidualRow row;
  row.count = lat.axis(0).count;
  row.h = lat.axis(0).h();
  row.tau = u.tau();

  std::vector<DiagonalTerms> dts;
  for (const auto& a : u.atoms()) dts.push_back(diagonal_terms(*a.kernel, collar));
  const std::vector<std::size_t>& nodes = dts[0].nodes;
  const std::size_t N = nodes.size();
  row.points = N;

  std::vector<std::vector<double>> points;
  for (std::size_t x : nodes) {
    auto p = lat.point(x);
    points.push_back(p);
    points.back().insert(points.back().end(), p.begin(), p.end());
  }

  std::vector<cplx> Ec(J), Ec2(J);
  for (std::size_t j = 0; j < J; ++j) {
    Ec[j] = mu.xi(j) * mu.p(j);
    Ec2[j] = mu.xi(j) * mu.xi(j) * mu.p(j);
  }

  // Linear part: S_0 F = S_{2,a(lambda)} F / lambda_1 on the analytic F.
  for (std::size_t j = 0; j < J; ++j) {
    const Atom& a = u.atoms()[j];
    const double s0f = f_residuals(a.config(), row.h, points).s2 / std::abs(a.point.lambda[0]);
    double qmax = 0.0;
    for (const auto& q : a.q_phi) qmax = std::max(qmax, std::abs(q));
    row.linear = std::max(row.linear, qmax * s0f);
  }

  // Auxiliary PDE per atom.
  for (std::size_t j = 0; j < J; ++j) {
    const auto res = aux_pointwise(u.atoms()[j].config(), level, dts[j]);
    for (std::size_t i = 0; i < N; ++i) row.auxiliary = std::max(row.auxiliary, detail::coeff_norm(&res[i * W], W));
  }

  // Doubled-variable expectation equation at x = y.
  {
    std::vector<double> worst(NT, 0.0);
    parallel_for(NT, [&](std::size_t k) {
      std::vector<cplx> r(W), nlv(W);
      for (std::size_t i = 0; i < N; ++i) {
        std::fill(r.begin(), r.end(), cplx{});
        std::fill(nlv.begin(), nlv.end(), cplx{});
        for (std::size_t j = 0; j < J; ++j) {
          const Atom& a = u.atoms()[j];
          const DiagonalTerms& d = dts[j];
          const cplx lin = Ec[j] * a.q_phi[k];
          const cplx sq = Ec2[j] * a.phi.phi(k) * a.phi.phi(k);
          for (std::size_t c = 0; c < W; ++c) {
            const std::size_t o = i * W + c;
            const cplx s0k = -d.SSK[o] - s.alpha * d.SK[o] + s.beta * d.K[o];
            r[c] += lin * s0k + s.varsigma * sq * d.K2[o];
            nlv[c] += sq * d.DK2[o];
          }
        }
        ComplexCd nl(level);
        for (std::size_t c = 0; c < W; ++c) nl.set_coeff(c, nlv[c]);
        r[0] += s.gamma * pi_project(1, nl);
        worst[k] = std::max(worst[k], detail::coeff_norm(r.data(), W));
      }
    });
    row.expectation = *std::max_element(worst.begin(), worst.end());
  }

  // Classical equation on the diagonal.
  {
    const ClassicalCoefficients cc = diagonal_coefficients(s);
    std::vector<GridField> g, Lg, N2, D2;
    for (std::size_t j = 0; j < J; ++j) {
      g.push_back(u.kernel_diagonal(j));
      const GridField lap = laplace_apply(g[j]);
      GridField L = laplace_apply(lap);
      L *= -1.0;
      GridField t1 = lap;
      t1 *= cc.alpha;
      GridField t2 = g[j];
      t2 *= cc.beta;
      L += t1;
      L += t2;
      Lg.push_back(std::move(L));
      GridField sq = g[j].zeros_like();
      for (std::size_t x = 0; x < sq.nodes(); ++x) cd_mul_raw(level, g[j].at(x), g[j].at(x), sq.at(x));
      D2.push_back(derivative(sq, 0, 1));
      N2.push_back(std::move(sq));
    }
    std::vector<std::size_t> inner;
    for (std::size_t x = 0; x < lat.size(); ++x) {
      if (lat.boundary_distance(x) >= collar) inner.push_back(x);
    }
    std::vector<double> worst_diag(NT, 0.0), worst_cl(NT, 0.0);
    for (std::size_t k = 0; k < NT; ++k) {
      GridField ut = g[0].zeros_like();
      for (std::size_t j = 0; j < J; ++j) {
        GridField term = g[j];
        term *= Ec[j] * u.atoms()[j].phi.phi(k);
        ut += term;
      }
      GridField usq = ut.zeros_like();
      for (std::size_t x = 0; x < usq.nodes(); ++x) cd_mul_raw(level, ut.at(x), ut.at(x), usq.at(x));
      const GridField dusq = derivative(usq, 0, 1);
      std::vector<cplx> lin(W), rd(W), rc(W);
      for (std::size_t x : inner) {
        std::fill(lin.begin(), lin.end(), cplx{});
        std::fill(rd.begin(), rd.end(), cplx{});
        for (std::size_t j = 0; j < J; ++j) {
          const Atom& a = u.atoms()[j];
          const cplx wl = Ec[j] * a.q_phi[k];
          const cplx wq = Ec2[j] * a.phi.phi(k) * a.phi.phi(k);
          for (std::size_t c = 0; c < W; ++c) {
            lin[c] += wl * Lg[j].at(x)[c];
            rd[c] += wq * (cc.gamma * D2[j].at(x)[c] + cc.varsigma * N2[j].at(x)[c]);
          }
        }
        for (std::size_t c = 0; c < W; ++c) {
          rc[c] = lin[c] + cc.gamma * dusq.at(x)[c] + cc.varsigma * usq.at(x)[c];
          rd[c] += lin[c];
        }
        worst_diag[k] = std::max(worst_diag[k], detail::coeff_norm(rd.data(), W));
        worst_cl[k] = std::max(worst_cl[k], detail::coeff_norm(rc.data(), W));
      }
    }
    row.diagonal = *std::max_element(worst_diag.begin(), worst_diag.end());
    row.classical = *std::max_element(worst_cl.begin(), worst_cl.end());
  }
  return row;
}

struct ResidualReport {
  std::vector<ResidualRow> rows;

  /// rows[k-1].member / rows[k].member.
  [[nodiscard]] static double ratio(const ResidualRow& coarse, const ResidualRow& fine, double ResidualRow::*member) {
    const double f = fine.*member;
    return f == 0.0 ? (coarse.*member == 0.0 ? 1.0 : INFINITY) : coarse.*member / f;
  }

  [[nodiscard]] bool decreasing(double ResidualRow::*member) const {
    for (std::size_t k = 1; k < rows.size(); ++k) {
      if (!(rows[k].*member < rows[k - 1].*member)) return false;
    }
    return true;
  }

  [[nodiscard]] double observed_order(std::size_t k, double ResidualRow::*member) const {
    return std::log2(ratio(rows[k - 1], rows[k], member));
  }

  [[nodiscard]] std::string to_csv() const {
    static constexpr std::array<double ResidualRow::*, 5> cols{&ResidualRow::linear, &ResidualRow::expectation,
                                                               &ResidualRow::auxiliary, &ResidualRow::diagonal,
                                                               &ResidualRow::classical};
    std::string out =
        "level,count,h,tau,points,linear,expectation,auxiliary,diagonal,classical,"
        "ratio_linear,ratio_expectation,ratio_auxiliary,ratio_diagonal,ratio_classical\n";
    char buf[96];
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const ResidualRow& r = rows[k];
      std::snprintf(buf, sizeof buf, "%zu,%zu,%.10e,%.10e,%zu", k, r.count, r.h, r.tau, r.points);
      out += buf;
      for (auto m : cols) {
        std::snprintf(buf, sizeof buf, ",%.10e", r.*m);
        out += buf;
      }
      for (auto m : cols) {
        if (k == 0) {
          out += ",";
        } else {
          std::snprintf(buf, sizeof buf, ",%.10e", ratio(rows[k - 1], r, m));
          out += buf;
        }
      }
      out += "\n";
    }
    return out;
  }
};

/// A complete run description: problem, atoms, measure and discretization.
struct WorkbenchCase {
  SobolevBurgersSpec spec;
  std::vector<SpectralPoint> atoms;
  std::vector<double> p;
  std::vector<cplx> xi;  // empty: xi_rule
  XiRule xi_rule = XiRule::Consistent;
  AssemblyOptions assembly;
  std::size_t collar = 4;  // cells at the coarsest level, doubled with every refinement
  std::size_t samples = 100000;
  std::uint64_t seed = 12345;

  [[nodiscard]] AtomicRandomMeasure measure() const {
    return make_measure(atoms, spec, p, xi, xi_rule, seed);
  }
  /// Level k of the refinement ladder: cells and tau halved k times.
  [[nodiscard]] WorkbenchCase refined(unsigned k) const {
    WorkbenchCase c = *this;
    const std::size_t f = std::size_t{1} << k;
    c.spec.box.count = (spec.box.count - 1) * f + 1;
    c.assembly.tau = assembly.tau / static_cast<double>(f);
    c.collar = collar * f;
    return c;
  }
  [[nodiscard]] SolutionField assemble() const { return assemble_u(spec, atoms, measure(), assembly); }
};

/// Rows for refinement levels 0..refine.
inline ResidualReport residual_suite(const WorkbenchCase& wc, unsigned refine) {
  ResidualReport rep;
  for (unsigned k = 0; k <= refine; ++k) {
    const WorkbenchCase c = wc.refined(k);
    rep.rows.push_back(residuals(c.assemble(), c.collar));
  }
  return rep;
}

}  // namespace sbw
