#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "sbw/calculus.hpp"

namespace {

using sbw::Arity;
using sbw::cplx;
using sbw::DiracSpec;
using sbw::Grid;
using sbw::GridField;
using sbw::ComplexCd;

GridField sample(const Grid& g, const std::function<double(std::span<const double>)>& f) {
  GridField out = GridField::scalar(g);
  out.fill([&](std::span<const double> p, cplx* v) { v[0] = f(p); });
  return out;
}

double sin_sin(std::span<const double> p) { return std::sin(p[0]) * std::sin(p[1]); }

}  // namespace

TEST(FdWeights, ClassicalCentralStencils) {
  const std::vector<double> nodes{-2, -1, 0, 1, 2};
  const auto d1 = sbw::fd_weights(0.0, nodes, 1);
  EXPECT_NEAR(d1[0], 1.0 / 12, 1e-14);
  EXPECT_NEAR(d1[1], -8.0 / 12, 1e-14);
  EXPECT_NEAR(d1[2], 0.0, 1e-14);
  const auto d2 = sbw::fd_weights(0.0, nodes, 2);
  EXPECT_NEAR(d2[2], -30.0 / 12, 1e-14);
  EXPECT_NEAR(d2[1], 16.0 / 12, 1e-14);
}

TEST(Dirac, LinearFunctionGivesConjugateGenerator) {
  const Grid g = Grid::cube(2, 0.0, 1.0, 9);
  const GridField f = sample(g, [](auto p) { return p[0]; });
  DiracSpec spec = DiracSpec::standard(2, 2, 0.0);
  spec.psi[1] = 1.0;
  const GridField s = sbw::dirac_apply(f, spec);
  for (std::size_t i = 0; i < s.nodes(); ++i) {
    EXPECT_NEAR(std::abs(s.at(i)[1] + 1.0), 0.0, 1e-12);
    EXPECT_NEAR(std::abs(s.at(i)[0]), 0.0, 1e-12);
    EXPECT_NEAR(std::abs(s.at(i)[2]), 0.0, 1e-12);
  }
}

TEST(Dirac, ConstantIsAnnihilated) {
  const Grid g = Grid::cube(2, 0.0, 1.0, 9);
  const GridField f = sample(g, [](auto) { return 3.5; });
  EXPECT_LT(sbw::dirac_apply(f, DiracSpec::half_laplacian(2, 2)).max_norm(), 1e-11);
}

TEST(Dirac, RejectsCoarseGridAndBadSpec) {
  const Grid g = Grid::cube(2, 0.0, 1.0, 5);
  const GridField f = sample(g, [](auto p) { return p[0]; });
  EXPECT_THROW(sbw::dirac_apply(f, DiracSpec::half_laplacian(2, 2)), sbw::ValidationError);
  DiracSpec zero = DiracSpec::standard(2, 2, 0.0);
  EXPECT_THROW(zero.validate(2), sbw::ValidationError);
}

TEST(Dirac, SquareIsMinusHalfLaplacianAtOrderFour) {
  std::vector<double> errs;
  for (std::size_t nodes : {17, 33, 65}) {
    const Grid g = Grid::cube(2, 0.0, 2.0, nodes);
    const GridField f = sample(g, sin_sin);
    const auto spec = DiracSpec::half_laplacian(2, 2);
    GridField s2 = sbw::dirac_apply(sbw::dirac_apply(f, spec), spec);
    GridField lap = sbw::laplace_apply(f).as_hypercomplex(2);
    lap *= 0.5;
    s2 += lap;
    errs.push_back(s2.max_norm(2));
  }
  EXPECT_GT(std::log2(errs[0] / errs[1]), 3.5);
  EXPECT_GT(std::log2(errs[1] / errs[2]), 3.5);
}

TEST(Dirac, UnitWeightsGiveMinusLaplacian) {
  const Grid g = Grid::cube(2, 0.0, 2.0, 33);
  const GridField f = sample(g, sin_sin);
  const auto spec = DiracSpec::standard(2, 2, 1.0);
  GridField s2 = sbw::dirac_apply(sbw::dirac_apply(f, spec), spec);
  s2 += sbw::laplace_apply(f).as_hypercomplex(2);
  EXPECT_LT(s2.max_norm(), 1e-4);
}

TEST(Laplace, Polynomials) {
  const Grid g = Grid::cube(2, -1.0, 1.0, 11);
  const GridField sq = sbw::laplace_apply(sample(g, [](auto p) { return p[0] * p[0]; }));
  for (std::size_t i = 0; i < sq.nodes(); ++i) EXPECT_NEAR(sq.at(i)[0].real(), 2.0, 1e-10);
  const GridField harm = sbw::laplace_apply(sample(g, [](auto p) { return p[0] * p[0] - p[1] * p[1]; }));
  EXPECT_LT(harm.max_norm(), 1e-10);
}

TEST(Laplace, ExponentialEigenvalue) {
  const double k1 = 0.7, k2 = -1.1;
  std::vector<double> errs;
  for (std::size_t nodes : {17, 33}) {
    const Grid g = Grid::cube(2, 0.0, 1.0, nodes);
    const GridField f = sample(g, [&](auto p) { return std::exp(k1 * p[0] + k2 * p[1]); });
    const GridField l = sbw::laplace_apply(f);
    double err = 0.0;
    for (std::size_t i = 0; i < f.nodes(); ++i) {
      err = std::max(err, std::abs(l.at(i)[0] / f.at(i)[0] - (k1 * k1 + k2 * k2)));
    }
    errs.push_back(err);
  }
  EXPECT_LT(errs[1], 1e-5);
  EXPECT_GT(std::log2(errs[0] / errs[1]), 3.5);
}

TEST(Laplace, SecondSlotOfPairField) {
  const Grid g = Grid::cube(2, 0.0, 1.0, 9);
  GridField f = GridField::scalar(g, Arity::XY);
  f.fill([](std::span<const double> p, cplx* v) { v[0] = p[0] * p[0] + 3.0 * p[3] * p[3]; });
  const GridField lx = sbw::laplace_apply(f, sbw::Slot::X);
  const GridField ly = sbw::laplace_apply(f, sbw::Slot::Y);
  for (std::size_t i = 0; i < f.nodes(); ++i) {
    EXPECT_NEAR(lx.at(i)[0].real(), 2.0, 1e-9);
    EXPECT_NEAR(ly.at(i)[0].real(), 6.0, 1e-9);
  }
}

TEST(LineIntegral, ZeroField) {
  const Grid g = Grid::cube(2, 0.0, 1.0, 9);
  const GridField f = GridField::scalar(g);
  const std::vector<std::size_t> w0{4, 4}, x{8, 1};
  const auto v = sbw::line_integral(f, w0, x, DiracSpec::half_laplacian(2, 2));
  EXPECT_EQ(v.max_abs(), 0.0);
}

TEST(LineIntegral, RightInverseOfSigmaInOneVariable) {
  Grid g;
  g.space = {sbw::Axis{0.0, 2.0, 33}};
  const GridField f = sample(g, [](auto p) { return std::cos(p[0]) + p[0] * p[0]; });
  const DiracSpec spec = DiracSpec::standard(1, 1, 1.0);
  sbw::LineIntegrator li(f, spec, {16});
  GridField integral = GridField::hypercomplex(g, 1);
  for (std::size_t i = 0; i < integral.nodes(); ++i) {
    const std::vector<std::size_t> x{i};
    const auto v = li.integrate_to(x);
    integral.at(i)[0] = v.coeff(0);
    integral.at(i)[1] = v.coeff(1);
  }
  const GridField back = sbw::dirac_apply(integral, spec);
  for (std::size_t i = 0; i < f.nodes(); ++i) {
    EXPECT_NEAR(std::abs(back.at(i)[0] - f.at(i)[0]), 0.0, 1e-5);
    EXPECT_NEAR(std::abs(back.at(i)[1]), 0.0, 1e-12);
  }
}

TEST(LineIntegral, ClosedFormAlongAxis) {
  const Grid g = Grid::cube(2, 0.0, 1.0, 33);
  const GridField f = sample(g, [](auto p) { return std::exp(p[0]) * (1.0 + p[1]); });
  const auto spec = DiracSpec::half_laplacian(2, 2);
  const std::vector<std::size_t> w0{0, 0}, x{32, 32};
  const auto v = sbw::line_integral(f, w0, x, spec);
  // first segment: int_0^1 e^s ds at x2 = 0; second: int_0^1 e (1 + s) ds at x1 = 1
  const double c = 1.0 / (spec.psi[1] * 2.0);
  EXPECT_NEAR(v.coeff(1).real(), c * (std::exp(1.0) - 1.0), 1e-7);
  EXPECT_NEAR(v.coeff(2).real(), c * std::exp(1.0) * 1.5, 1e-7);
  EXPECT_EQ(v.coeff(0), cplx{});
}

TEST(LineIntegral, ReversalAndAdditivityAreExact) {
  const Grid g = Grid::cube(2, 0.0, 1.0, 17);
  const GridField f = sample(g, sin_sin);
  const auto spec = DiracSpec::half_laplacian(2, 2);
  const std::vector<std::size_t> a{3, 5}, b{12, 5}, c{15, 5};
  const auto ab = sbw::line_integral(f, a, b, spec);
  const auto ba = sbw::line_integral(f, b, a, spec);
  EXPECT_EQ(ab + ba, ComplexCd(2));
  const auto bc = sbw::line_integral(f, b, c, spec);
  const auto ac = sbw::line_integral(f, a, c, spec);
  const auto sum = ab + bc;
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(std::abs(sum.coeff(j) - ac.coeff(j)), 0.0, 1e-15);
}

TEST(LineIntegral, ZeroWeightAxisRejected) {
  const Grid g = Grid::cube(2, 0.0, 1.0, 9);
  const GridField f = sample(g, sin_sin);
  DiracSpec spec = DiracSpec::standard(2, 2, 0.0);
  spec.psi[1] = 1.0;
  const std::vector<std::size_t> w0{0, 0}, x{3, 3};
  EXPECT_THROW(sbw::line_integral(f, w0, x, spec), sbw::ValidationError);
}

TEST(TailIntegral, Exponentials) {
  const DiracSpec spec = DiracSpec::standard(1, 1, 1.0);
  auto e1 = [](double s, cplx* v) { v[0] = std::exp(-s); };
  const auto r = sbw::tail_integral(e1, 1, 1, spec, 25.0, 1.0, 0.01);
  EXPECT_NEAR(r.value.coeff(1).real(), 1.0, 1e-9);
  EXPECT_NEAR(r.tail_bound, std::exp(-25.0), 1e-15);

  auto zero = [](double, cplx* v) { v[0] = 0.0; };
  EXPECT_EQ(sbw::tail_integral(zero, 1, 1, spec, 5.0, 1.0, 0.1).value.max_abs(), 0.0);

  auto e2 = [](double s, cplx* v) { v[0] = std::exp(-2.0 * s); };
  const double R = 3.0;
  const double err1 = 0.5 - sbw::tail_integral(e2, 1, 1, spec, R, 2.0, 1e-3).value.coeff(1).real();
  const double err2 =
      0.5 - sbw::tail_integral(e2, 1, 1, spec, R + std::log(2.0) / 2.0, 2.0, 1e-3).value.coeff(1).real();
  EXPECT_NEAR(err1 / err2, 2.0, 1e-3);
  EXPECT_THROW(sbw::tail_integral(e2, 1, 1, spec, R, 0.0, 1e-3), sbw::ValidationError);
}

TEST(Sobolev, ZeroAndConstant) {
  Grid g = Grid::cube(2, 0.0, 1.0, 8);
  g.time = sbw::Axis{0.0, 2.0, 8};
  GridField f = GridField::scalar(g, Arity::TXY);
  EXPECT_EQ(sbw::sobolev_norm(f, 1, 1, 2.0), 0.0);
  f.fill([](auto, cplx* v) { v[0] = 3.0; });
  // constant: only the (0,0,0) term survives, c (T |V|^2)^{1/s}
  EXPECT_NEAR(sbw::sobolev_norm(f, 0, 0, 2.0), 3.0 * std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(sbw::sobolev_norm(f, 1, 2, 1.0), 3.0 * 2.0, 1e-9);
}

TEST(Sobolev, SinSinClosedForm) {
  Grid g;
  g.space = {sbw::Axis{0.0, std::numbers::pi, 64}};
  g.time = sbw::Axis{0.0, std::numbers::pi, 64};
  GridField f = GridField::scalar(g, Arity::TXY);
  f.fill([](std::span<const double> p, cplx* v) { v[0] = std::sin(p[0]) * std::sin(p[1]); });
  // f, f_t, f_x, f_tx each integrate |.|^2 to (pi/2)^2 * pi over [0,pi]^3.
  const double expected = std::sqrt(4.0 * std::pow(std::numbers::pi / 2.0, 2) * std::numbers::pi);
  EXPECT_NEAR(sbw::sobolev_norm(f, 1, 1, 2.0), expected, 1e-4);
}
