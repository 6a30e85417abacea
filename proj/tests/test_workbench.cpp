#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "sbw/workbench.hpp"

using namespace sbw;

namespace {

SobolevBurgersSpec burgers_spec(std::size_t count = 9) {
  SobolevBurgersSpec s;
  s.alpha = 4.0;
  s.gamma = 1.0;
  s.varsigma = 0.0;
  s.box = {0.0, 0.5, count};
  s.T = 0.5;
  return s;
}

AssemblyOptions coarse_options() {
  AssemblyOptions o;
  o.tau = 0.02;
  return o;
}

}  // namespace

TEST(LambdaToParams, MappingForUnitLambda) {
  SobolevBurgersSpec s = burgers_spec();
  s.alpha = 1.0;
  s.beta = 0.0;
  const AtomParams a = lambda_to_params({{1.0, 0.5, 0.1, 0.0}}, s);
  EXPECT_EQ(a.a[0], cplx(-1.0));
  EXPECT_EQ(a.a[1], cplx(-1.0));
  EXPECT_EQ(a.a[2], cplx(0.0));
  EXPECT_EQ(a.q1, cplx(0.2));
  EXPECT_EQ(a.q2, cplx(0.0));
}

TEST(LambdaToParams, GammaZeroBranch) {
  SobolevBurgersSpec s = burgers_spec();
  s.gamma = 0.0;
  s.varsigma = 1.0;
  const AtomParams a = lambda_to_params({{1.0, 0.5, 0.0, 0.2}}, s);
  EXPECT_EQ(a.q1, cplx(0.0));
  EXPECT_EQ(a.q2, cplx(0.4));
  EXPECT_THROW(lambda_to_params({{1.0, 0.5, 0.1, 0.2}}, s), ValidationError);
}

TEST(LambdaToParams, ConsistencyExactForRandomLambda) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> U(-2.0, 2.0);
  auto z = [&] { return cplx(U(rng), U(rng)); };
  for (int it = 0; it < 500; ++it) {
    SobolevBurgersSpec s = burgers_spec();
    s.m = 2;
    s.c = {z(), z()};
    s.alpha = z();
    s.beta = z();
    s.gamma = z();
    s.varsigma = z();
    const cplx p1 = z();
    const cplx p2 = p1 * s.varsigma / s.gamma;
    const SpectralPoint pt{{z(), z(), z(), p1, p2}};
    const AtomParams a = lambda_to_params(pt, s);
    EXPECT_EQ(a.q1 + 2.0 * a.a[0] * a.p1, cplx(0.0));
    EXPECT_EQ(a.q2 + 2.0 * a.a[0] * a.p2, cplx(0.0));
    KernelConfig kc;
    kc.a = a.a;
    kc.p1 = a.p1;
    kc.p2 = a.p2;
    EXPECT_EQ(kc.q1(), a.q1);
    EXPECT_EQ(kc.q2(), a.q2);
  }
}

TEST(LambdaToParams, RejectsBrokenConstraint) {
  SobolevBurgersSpec s = burgers_spec();
  s.varsigma = 1.0;
  EXPECT_THROW(lambda_to_params({{1.0, 0.5, 0.1, 0.3}}, s), ValidationError);
  EXPECT_THROW(lambda_to_params({{0.0, 0.5, 0.1, 0.1}}, s), ValidationError);
  EXPECT_THROW(lambda_to_params({{1.0, 0.5, 0.1}}, s), ValidationError);
}

TEST(Spec, DefaultKappaSolvesEveryAtomsCharacteristicEquation) {
  SobolevBurgersSpec s = burgers_spec();
  s.alpha = 3.0;
  s.beta = 1.5;
  const auto kappa = default_kappa(s);
  for (double l1 : {1.0, -2.0, 0.3}) {
    const AtomParams a = lambda_to_params({{l1, 0.5, 0.1, 0.0}}, s);
    EXPECT_LT(std::abs(characteristic_value(a.a, kappa)), 1e-12);
  }
  s.alpha = -1.0;
  s.beta = -1.0;  // k^4 + 4 k^2 + 16 = 0 has no real root
  EXPECT_THROW(default_kappa(s), ValidationError);
}

TEST(Spec, Validation) {
  SobolevBurgersSpec s = burgers_spec();
  s.alpha = 0.0;
  EXPECT_THROW(s.validate(), ValidationError);
  s = burgers_spec();
  s.gamma = 0.0;
  EXPECT_THROW(s.validate(), ValidationError);
  s = burgers_spec();
  s.n = 1;
  EXPECT_THROW(s.validate(), ValidationError);
  s = burgers_spec();
  s.n = 4;
  EXPECT_EQ(s.level(), 3u);
}

// The diagonal of a midpoint function G((x + y)/2) obeys the classical
// equation with diagonal_coefficients. Recheck each constant with the actual
// sigma samplers against hand-computed derivatives of
// G(s) = sin(s_1) cos(2 s_2): Delta G = -5 G, Delta^2 G = 25 G.
TEST(DiagonalConstants, RecheckedOnMidpointFunction) {
  const unsigned level = 2;
  const std::size_t n = 2;
  const double h = 1e-2;
  auto G = [](double s1, double s2) { return std::sin(s1) * std::cos(2.0 * s2); };
  const Sampler g{1, [&](std::span<const double> p, cplx* out) { out[0] = G((p[0] + p[2]) / 2, (p[1] + p[3]) / 2); }};
  const DiracSpec spec = DiracSpec::half_laplacian(level, n);
  auto sq = [&](const Sampler& f, std::size_t first) {
    return sampler_dirac(sampler_dirac(f, spec, first, h), spec, first, h);
  };
  const Sampler Sig = sampler_sum({{1.0, sq(g, 0)}, {1.0, sq(g, n)}});
  const Sampler SigSig = sampler_sum({{1.0, sq(Sig, 0)}, {1.0, sq(Sig, n)}});
  const Sampler D = sampler_sum({{1.0, sampler_dirac(g, spec, 0, h)}, {1.0, sampler_dirac(g, spec, n, h)}});

  SobolevBurgersSpec s = burgers_spec();
  s.alpha = cplx(1.3, -0.4);
  s.beta = cplx(-0.7, 0.2);
  s.gamma = cplx(0.9, 0.5);
  const ClassicalCoefficients cc = diagonal_coefficients(s);

  for (const auto& x : std::vector<std::array<double, 2>>{{0.3, -0.2}, {1.1, 0.7}, {-0.4, 0.25}}) {
    const std::vector<double> p{x[0], x[1], x[0], x[1]};
    const double Gv = G(x[0], x[1]);
    const double lap = -5.0 * Gv, bilap = 25.0 * Gv;
    const double d1 = std::cos(x[0]) * std::cos(2.0 * x[1]);

    const auto sig = Sig.at(p), sigsig = SigSig.at(p), d = D.at(p);
    EXPECT_NEAR(std::abs(sig[0] - (-0.25 * lap)), 0.0, 1e-6);
    EXPECT_NEAR(std::abs(sigsig[0] - bilap / 16.0), 0.0, 1e-6);
    // Off-axis parts cancel up to rounding amplified by h^-2 and h^-4.
    for (std::size_t j = 1; j < 4; ++j) {
      EXPECT_NEAR(std::abs(sig[j]), 0.0, 1e-9);
      EXPECT_NEAR(std::abs(sigsig[j]), 0.0, 1e-7);
    }
    ComplexCd dz(level);
    for (std::size_t j = 0; j < 4; ++j) dz.set_coeff(j, d[j]);
    const cplx pi1 = pi_project(1, dz);
    EXPECT_NEAR(std::abs(pi1 - (-d1 / std::sqrt(2.0))), 0.0, 1e-6);

    // 16 S_0 G with a = -alpha, b = beta versus the classical operator on g.
    const cplx s0 = -sigsig[0] - s.alpha * sig[0] + s.beta * Gv;
    const cplx classical = -bilap + cc.alpha * lap + cc.beta * Gv;
    EXPECT_NEAR(std::abs(16.0 * s0 - classical), 0.0, 1e-4);
    EXPECT_NEAR(std::abs(16.0 * s.gamma * pi1 - cc.gamma * d1), 0.0, 1e-4);
  }
  EXPECT_EQ(cc.varsigma, 16.0 * s.varsigma);
}

TEST(Assemble, SingleAtomUnitMeasureIsPhiTimesK) {
  const SobolevBurgersSpec s = burgers_spec();
  const std::vector<SpectralPoint> pts{{{1.0, 0.5, 0.05, 0.0}}};
  const auto mu = make_measure(pts, s, {1.0}, {1.0}, XiRule::Consistent, 1);
  const SolutionField u = assemble_u(s, pts, mu, coarse_options());
  const Realization r = mu.sample(3);
  const std::size_t W = u.width();
  for (std::size_t k : {std::size_t{0}, u.times() / 2, u.times() - 1}) {
    for (std::size_t x : {std::size_t{0}, std::size_t{40}}) {
      for (std::size_t y : {std::size_t{3}, std::size_t{77}}) {
        std::vector<cplx> K(W);
        u.kernel(0, x, y, K.data());
        const auto e = u.expectation(k, x, y);
        const auto smp = u.sample(r, 1, k, x, y);
        for (std::size_t j = 0; j < W; ++j) {
          EXPECT_EQ(e[j], u.atoms()[0].phi.phi(k) * K[j]);
          EXPECT_EQ(smp[j], e[j]);
        }
      }
    }
  }
}

TEST(Assemble, KernelMatchesTheStoredField) {
  const SobolevBurgersSpec s = burgers_spec(7);
  const std::vector<SpectralPoint> pts{{{1.0, 0.5, 0.05, 0.0}}};
  const SolutionField u = assemble_u(s, pts, make_measure(pts, s, {1.0}, {}, XiRule::Consistent, 1), coarse_options());
  const GridField K = u.atoms()[0].kernel->K();
  const std::size_t NV = u.lattice().size();
  std::vector<cplx> v(u.width());
  for (std::size_t x = 0; x < NV; ++x) {
    for (std::size_t y = 0; y < NV; ++y) {
      u.kernel(0, x, y, v.data());
      for (std::size_t j = 0; j < u.width(); ++j) EXPECT_EQ(v[j], K.at(x * NV + y)[j]);
    }
  }
}

TEST(Assemble, TwoAtomsMonteCarloAgreesWithEnumeration) {
  const SobolevBurgersSpec s = burgers_spec();
  const std::vector<SpectralPoint> pts{{{1.0, 0.5, 0.05, 0.0}}, {{2.0, 0.2, 0.03, 0.0}}};
  const auto mu = make_measure(pts, s, {0.3, 0.7}, {}, XiRule::Consistent, 99);
  const SolutionField u = assemble_u(s, pts, mu, coarse_options());
  const std::size_t k = u.times() - 1, x = 30, y = 50;
  const auto Eu = u.expectation(k, x, y);

  // Enumeration oracle: every cell with its probability.
  std::vector<cplx> enumerated(u.width(), cplx{});
  for (std::size_t j = 0; j < 2; ++j) {
    const auto v = u.atom_term(j, k, x, y);
    for (std::size_t i = 0; i < u.width(); ++i) enumerated[i] += mu.p(j) * (mu.xi(j) * v[i]);
  }
  for (std::size_t i = 0; i < u.width(); ++i) EXPECT_NEAR(std::abs(Eu[i] - enumerated[i]), 0.0, 1e-15);

  const std::size_t N = 100000;
  const Realization r = mu.sample(N);
  std::vector<cplx> vals(N);
  for (std::size_t smp = 0; smp < N; ++smp) vals[smp] = u.sample(r, smp, k, x, y)[0];
  const MonteCarlo mc = expectation(vals);
  EXPECT_GT(mc.std_error, 0.0);
  EXPECT_TRUE(mc.agrees(Eu[0])) << mc.mean << " vs " << Eu[0] << " se " << mc.std_error;
}

TEST(Assemble, ZeroMeasureGivesZeroSolutionAndResiduals) {
  const SobolevBurgersSpec s = burgers_spec(11);
  const std::vector<SpectralPoint> pts{{{1.0, 0.5, 0.05, 0.0}}, {{2.0, 0.2, 0.03, 0.0}}};
  const auto mu = make_measure(pts, s, {0.5, 0.5}, {0.0, 0.0}, XiRule::Consistent, 1);
  const SolutionField u = assemble_u(s, pts, mu, coarse_options());
  for (std::size_t x = 0; x < u.lattice().size(); x += 7) {
    for (auto v : u.expectation(3, x, (x * 5) % u.lattice().size())) EXPECT_EQ(v, cplx{});
  }
  const ResidualRow row = residuals(u, 4);
  EXPECT_EQ(row.expectation, 0.0);
  EXPECT_EQ(row.diagonal, 0.0);
  EXPECT_EQ(row.classical, 0.0);
}

TEST(Assemble, DiagonalMatchesFullField) {
  const SobolevBurgersSpec s = burgers_spec(7);
  const std::vector<SpectralPoint> pts{{{1.0, 0.5, 0.05, 0.0}}, {{2.0, 0.2, 0.03, 0.0}}};
  const SolutionField u =
      assemble_u(s, pts, make_measure(pts, s, {0.4, 0.6}, {}, XiRule::Consistent, 5), coarse_options());
  const std::size_t NV = u.lattice().size();
  for (std::size_t k : {std::size_t{0}, u.times() - 1}) {
    const GridField full = u.expectation_field(k);
    const GridField diag = u.diagonal_field(k);
    for (std::size_t x = 0; x < NV; ++x) {
      for (std::size_t j = 0; j < u.width(); ++j) EXPECT_EQ(diag.at(x)[j], full.at(x * NV + x)[j]);
    }
  }
}

TEST(Assemble, Errors) {
  const SobolevBurgersSpec s = burgers_spec();
  const std::vector<SpectralPoint> pts{{{1.0, 0.5, 0.05, 0.0}}};
  const std::vector<SpectralPoint> other{{{1.0, 0.6, 0.05, 0.0}}};
  EXPECT_THROW(assemble_u(s, pts, make_measure(other, s, {1.0}, {}, XiRule::Consistent, 1), coarse_options()),
               ValidationError);
  // phi = 10 / (1 - 10 t) has its pole at t = 0.1 < T.
  const std::vector<SpectralPoint> blow{{{1.0, 10.0, 0.05, 0.0}}};
  EXPECT_THROW(assemble_u(s, blow, make_measure(blow, s, {1.0}, {}, XiRule::Consistent, 1), coarse_options()),
               NumericalError);
  EXPECT_THROW(make_measure({pts[0], pts[0]}, s, {0.5, 0.5}, {}, XiRule::Consistent, 1), ValidationError);
}

TEST(Moments, SingleAtomProductIdentityIsExact) {
  const SobolevBurgersSpec s = burgers_spec();
  const std::vector<SpectralPoint> pts{{{1.0, 0.5, 0.05, 0.0}}};
  const SolutionField u = assemble_u(s, pts, make_measure(pts, s, {1.0}, {}, XiRule::Consistent, 3), coarse_options());
  for (std::size_t x : {std::size_t{10}, std::size_t{40}}) {
    const MomentReport rep = moment_identity(u, u.times() - 1, x, x, 1000);
    EXPECT_EQ(rep.product_gap, 0.0);
    EXPECT_TRUE(rep.product_holds);
    EXPECT_LE(rep.identity_gap, 1e-15);
    EXPECT_TRUE(rep.mc_agrees);
    EXPECT_EQ(rep.mc[0].std_error, 0.0);
  }
}

TEST(Moments, TwoEqualAtomsWithOppositeValues) {
  const std::vector<SpectralPoint> pts{{{1.0, 0.5, 0.05, 0.0}}, {{2.0, 0.5, 0.05, 0.0}}};
  const AtomicRandomMeasure mu(atom_partition(pts), {0.5, 0.5}, {1.0, 1.0}, {}, 2024);
  const std::vector<cplx> values{1.0, -1.0};
  const MomentReport rep = moment_identity(0, values, mu, 100000);
  EXPECT_EQ(rep.second_moment[0], cplx(1.0));
  EXPECT_EQ(rep.identity_rhs[0], cplx(1.0));
  EXPECT_EQ(rep.mean_square[0], cplx(0.0));
  EXPECT_EQ(rep.identity_gap, 0.0);
  EXPECT_EQ(rep.product_gap, 1.0);
  EXPECT_FALSE(rep.product_holds);
  EXPECT_TRUE(rep.mc_agrees);
  // u^2 = 1 on every sample.
  EXPECT_EQ(rep.mc[0].mean, cplx(1.0));
}

TEST(Moments, MonteCarloSecondMomentForAssembledAtoms) {
  const SobolevBurgersSpec s = burgers_spec();
  const std::vector<SpectralPoint> pts{{{1.0, 0.5, 0.05, 0.0}}, {{2.0, 0.2, 0.03, 0.0}}, {{0.5, 0.9, 0.08, 0.0}}};
  const SolutionField u =
      assemble_u(s, pts, make_measure(pts, s, {0.2, 0.5, 0.3}, {}, XiRule::Consistent, 77), coarse_options());
  const MomentReport rep = moment_identity(u, u.times() / 2, 20, 60, 100000);
  EXPECT_LE(rep.identity_gap, 1e-15 * std::max(1.0, std::abs(rep.second_moment[0])));
  EXPECT_TRUE(rep.mc_agrees);
  EXPECT_FALSE(rep.product_holds);
}

TEST(Residuals, LinearPartConvergesAtStencilOrder) {
  WorkbenchCase wc;
  wc.spec = burgers_spec(11);
  wc.atoms = {{{1.0, 0.5, 0.05, 0.0}}};
  wc.p = {1.0};
  wc.assembly.tau = 0.01;
  wc.collar = 4;
  const ResidualReport rep = residual_suite(wc, 1);
  ASSERT_EQ(rep.rows.size(), 2u);
  EXPECT_GE(rep.observed_order(1, &ResidualRow::linear), 3.5);
  // One atom with p = 1: the expectation and the sample coincide.
  EXPECT_NEAR(rep.rows[1].diagonal, rep.rows[1].classical, 1e-12 * rep.rows[1].classical);
}

TEST(Residuals, ExpectationEquationReducesToAuxiliaryResidual) {
  // With xi gamma = q1 the doubled-variable equation is E(c) phi^2 times the
  // auxiliary residual, up to Q(d/dt) phi - lambda_1 phi^2 (RK4 error).
  WorkbenchCase wc;
  wc.spec = burgers_spec(11);
  wc.atoms = {{{1.0, 0.5, 0.05, 0.0}}};
  wc.p = {1.0};
  wc.assembly.tau = 0.005;
  wc.collar = 4;
  const SolutionField u = wc.assemble();
  const ResidualRow row = residuals(u, wc.collar);
  const cplx xi = u.measure().xi(0);
  double phi2 = 0.0;
  for (std::size_t k = 0; k < u.times(); ++k) phi2 = std::max(phi2, std::norm(u.atoms()[0].phi.phi(k)));
  EXPECT_NEAR(row.expectation, std::abs(xi) * phi2 * row.auxiliary, 1e-6 * row.expectation);
}
