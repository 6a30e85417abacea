#include <gtest/gtest.h>

#include "sbw/temporal.hpp"

using sbw::CauchySpec;
using sbw::cplx;

namespace {

CauchySpec riccati(double l1, double l2, double T, double tau) {
  CauchySpec s;
  s.m = 1;
  s.c = {0.0};
  s.lambda = {l1, l2};
  s.T = T;
  s.tau = tau;
  return s;
}

double max_riccati_error(const CauchySpec& s) {
  const auto tr = sbw::solve_cauchy(s);
  double err = 0.0;
  for (std::size_t k = 0; k < tr.size(); ++k) {
    err = std::max(err, std::abs(tr.phi(k) - sbw::riccati_oracle(s.lambda[0], s.lambda[1], tr.t[k])));
  }
  return err;
}

}  // namespace

TEST(Riccati, Oracle) {
  EXPECT_EQ(sbw::riccati_oracle(1.0, 1.0, 0.0), cplx(1.0));
  EXPECT_NEAR(std::abs(sbw::riccati_oracle(1.0, 1.0, 0.5) - 2.0), 0.0, 1e-15);
  EXPECT_NEAR(std::abs(sbw::riccati_oracle(2.0, -1.0, 1.0) + 1.0 / 3.0), 0.0, 1e-15);
  EXPECT_THROW(sbw::riccati_oracle(1.0, 1.0, 1.0), sbw::NumericalError);
}

TEST(Cauchy, RiccatiAtHalfTime) {
  const auto tr = sbw::solve_cauchy(riccati(1.0, 1.0, 0.5, 1e-3));
  EXPECT_NEAR(std::abs(tr.phi(tr.size() - 1) - 2.0), 0.0, 1e-8);
  EXPECT_FALSE(tr.blew_up);
  EXPECT_EQ(tr.t.back(), 0.5);
}

TEST(Cauchy, ZeroDataStaysZero) {
  CauchySpec s;
  s.m = 3;
  s.c = {1.0, -2.0, 0.5};
  s.lambda = {1.0, 0.0, 0.0, 0.0};
  const auto tr = sbw::solve_cauchy(s);
  for (std::size_t k = 0; k < tr.size(); ++k) EXPECT_EQ(tr.phi(k), cplx{});
}

TEST(Cauchy, FourthOrderAgainstOracle) {
  const double e1 = max_riccati_error(riccati(1.0, 1.0, 0.5, 1e-2));
  const double e2 = max_riccati_error(riccati(1.0, 1.0, 0.5, 5e-3));
  EXPECT_NEAR(std::log2(e1 / e2), 4.0, 0.3);
}

TEST(Cauchy, SecondOrderStepHalving) {
  CauchySpec s;
  s.m = 2;
  s.c = {0.5, 0.3};
  s.lambda = {0.8, 0.4, -0.2};
  s.T = 1.0;
  auto end = [&](double tau) {
    s.tau = tau;
    const auto tr = sbw::solve_cauchy(s);
    return tr.phi(tr.size() - 1);
  };
  const cplx a = end(0.04), b = end(0.02), c = end(0.01);
  EXPECT_NEAR(std::abs(a - b) / std::abs(b - c), 16.0, 1.5);
}

TEST(Cauchy, BlowUpIsFlagged) {
  const auto tr = sbw::solve_cauchy(riccati(1.0, 1.0, 2.0, 1e-4));
  EXPECT_TRUE(tr.blew_up);
  EXPECT_LT(tr.reached, 1.0 + 1e-3);
  EXPECT_GT(tr.reached, 0.99);
}

TEST(Cauchy, RealParametersStayReal) {
  CauchySpec s;
  s.m = 2;
  s.c = {1.0, 0.2};
  s.lambda = {0.5, 0.3, 0.1};
  const auto tr = sbw::solve_cauchy(s);
  for (std::size_t k = 0; k < tr.size(); ++k) EXPECT_LE(std::abs(tr.phi(k).imag()), 1e-12);
}

TEST(Cauchy, ContinuousInParameters) {
  CauchySpec s = riccati(1.0, 0.5, 1.0, 1e-3);
  const auto base = sbw::solve_cauchy(s);
  s.lambda[1] += 1e-6;
  const auto moved = sbw::solve_cauchy(s);
  double d = 0.0;
  for (std::size_t k = 0; k < base.size(); ++k) d = std::max(d, std::abs(base.phi(k) - moved.phi(k)));
  EXPECT_LT(d, 1e-5);
  EXPECT_GT(d, 0.0);
}

TEST(Cauchy, ResidualIsSmall) {
  const auto tr = sbw::solve_cauchy(riccati(1.0, 1.0, 0.5, 1e-3));
  double r = 0.0;
  for (double v : tr.residual) r = std::max(r, v);
  EXPECT_LT(r, 1e-7);
}

TEST(Cauchy, Validation) {
  CauchySpec s = riccati(0.0, 1.0, 1.0, 1e-3);
  EXPECT_THROW(sbw::solve_cauchy(s), sbw::ValidationError);
  s = riccati(1.0, 1.0, 1.0, 1e-3);
  s.c = {};
  EXPECT_THROW(sbw::solve_cauchy(s), sbw::ValidationError);
}
