#pragma once
// Nonlinear Cauchy problem Q(d/dt) phi = lambda_1 phi^2 with
// phi^(k)(0) = lambda_{k+2}, k = 0..m-1, and Q(t) = t^m + c_{m-1} t^{m-1} + ... + c_0.

#include <cmath>
#include <complex>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "sbw/calculus.hpp"
#include "sbw/errors.hpp"

namespace sbw {

struct CauchySpec {
  unsigned m = 1;
  std::vector<cplx> c;       // c_0 .. c_{m-1}
  std::vector<cplx> lambda;  // lambda_1 .. lambda_{m+1}
  double T = 1.0;
  double tau = 1e-3;
  double ceiling = 1e12;

  void validate() const {
    if (m < 1) throw ValidationError("Cauchy problem needs m >= 1");
    if (c.size() != m) throw ValidationError("Q needs exactly m lower coefficients c_0..c_{m-1}");
    if (lambda.size() != m + 1) throw ValidationError("initial data needs lambda_1..lambda_{m+1}");
    if (lambda[0] == cplx{}) throw ValidationError("lambda_1 must be nonzero");
    if (!(T > 0.0) || !(tau > 0.0)) throw ValidationError("horizon and step must be positive");
    if (!(ceiling > 0.0)) throw ValidationError("blow-up ceiling must be positive");
  }

  [[nodiscard]] std::size_t steps() const {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(T / tau)));
  }
};

struct Trajectory {
  unsigned m = 1;
  double tau = 0.0;  // effective step T / steps
  std::vector<double> t;
  std::vector<std::vector<cplx>> state;  // phi, phi', ..., phi^(m-1) per sample
  std::vector<double> residual;          // |Q(d/dt) phi - lambda_1 phi^2|
  bool blew_up = false;
  double reached = 0.0;

  [[nodiscard]] cplx phi(std::size_t k) const { return state[k][0]; }
  [[nodiscard]] std::size_t size() const { return t.size(); }

  [[nodiscard]] std::string to_csv() const {
    std::string out = "t,re_phi,im_phi,residual\n";
    char buf[160];
    for (std::size_t k = 0; k < t.size(); ++k) {
      std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g\n", t[k], phi(k).real(), phi(k).imag(),
                    residual[k]);
      out += buf;
    }
    return out;
  }
};

namespace detail {

inline std::vector<cplx> cauchy_rhs(const CauchySpec& s, const std::vector<cplx>& y) {
  std::vector<cplx> dy(s.m);
  for (unsigned k = 0; k + 1 < s.m; ++k) dy[k] = y[k + 1];
  cplx top = s.lambda[0] * y[0] * y[0];
  for (unsigned k = 0; k < s.m; ++k) top -= s.c[k] * y[k];
  dy[s.m - 1] = top;
  return dy;
}

}  // namespace detail

/// Q(d/dt) phi at every sample: the top derivative comes from an order-4
/// stencil on phi^(m-1), the lower ones from the stored state.
inline std::vector<cplx> apply_Q(const Trajectory& tr, const std::vector<cplx>& c) {
  const std::size_t S = tr.size();
  if (S < 7) throw ValidationError("time grid too coarse: Q(d/dt) needs at least 7 samples");
  if (c.size() != tr.m) throw ValidationError("Q needs exactly m lower coefficients c_0..c_{m-1}");
  const AxisStencil& st = axis_stencil(1, S);
  std::vector<cplx> out(S);
  for (std::size_t k = 0; k < S; ++k) {
    const auto& row = st.row(k);
    cplx dtop = 0.0;
    for (std::size_t q = 0; q < row.w.size(); ++q) {
      const auto src = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(k) + row.first + static_cast<std::ptrdiff_t>(q));
      dtop += row.w[q] * tr.state[src][tr.m - 1];
    }
    cplx v = dtop / tr.tau;
    for (unsigned i = 0; i < tr.m; ++i) v += c[i] * tr.state[k][i];
    out[k] = v;
  }
  return out;
}

/// Classical RK4 with fixed step tau_eff = T / round(T / tau). The residual
/// column differentiates phi^(m-1) numerically (order-4 stencils), so it
/// measures how well the stored samples satisfy the equation.
inline Trajectory solve_cauchy(const CauchySpec& spec) {
  spec.validate();
  const std::size_t N = spec.steps();
  Trajectory tr;
  tr.m = spec.m;
  tr.tau = spec.T / static_cast<double>(N);
  std::vector<cplx> y(spec.lambda.begin() + 1, spec.lambda.end());
  tr.t.push_back(0.0);
  tr.state.push_back(y);
  auto axpy = [](const std::vector<cplx>& a, const std::vector<cplx>& b, double s) {
    std::vector<cplx> r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] + s * b[i];
    return r;
  };
  const double h = tr.tau;
  for (std::size_t k = 0; k < N; ++k) {
    const auto k1 = detail::cauchy_rhs(spec, y);
    const auto k2 = detail::cauchy_rhs(spec, axpy(y, k1, h / 2));
    const auto k3 = detail::cauchy_rhs(spec, axpy(y, k2, h / 2));
    const auto k4 = detail::cauchy_rhs(spec, axpy(y, k3, h));
    for (unsigned i = 0; i < spec.m; ++i) y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    bool finite = true, over = false;
    for (const auto& v : y) {
      finite = finite && std::isfinite(v.real()) && std::isfinite(v.imag());
      over = over || std::abs(v) > spec.ceiling;
    }
    if (over || !finite) {
      if (!finite && !over) throw NumericalError("Cauchy solver produced a non-finite state");
      tr.blew_up = true;
      break;
    }
    // k + 1 == N lands exactly on T
    tr.t.push_back(k + 1 == N ? spec.T : static_cast<double>(k + 1) * h);
    tr.state.push_back(y);
  }
  tr.reached = tr.t.back();

  // Residual through a numerical derivative of phi^(m-1); NaN when the
  // trajectory is too short for the stencil.
  tr.residual.assign(tr.size(), std::numeric_limits<double>::quiet_NaN());
  if (tr.size() >= 7) {
    const auto q = apply_Q(tr, spec.c);
    for (std::size_t k = 0; k < tr.size(); ++k) tr.residual[k] = std::abs(q[k] - spec.lambda[0] * tr.phi(k) * tr.phi(k));
  }
  return tr;
}

/// phi(t) = lambda_2 / (1 - lambda_1 lambda_2 t), the m = 1, c_0 = 0 solution.
inline cplx riccati_oracle(cplx lambda1, cplx lambda2, double t) {
  const cplx den = 1.0 - lambda1 * lambda2 * t;
  if (std::abs(den) < 1e-14) throw NumericalError("Riccati oracle evaluated at its pole");
  return lambda2 / den;
}

}  // namespace sbw
