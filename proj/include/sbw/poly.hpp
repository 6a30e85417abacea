#pragma once
// Sparse multivariate polynomials with coefficients in double, CdElement or
// any type with +, -, scaling by double and a (possibly noncommutative,
// nonassociative) product. Products keep the left-to-right order of factors.

#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sbw/algebra.hpp"
#include "sbw/errors.hpp"

namespace sbw {

using Exponents = std::vector<unsigned>;

namespace detail {
inline bool is_zero_coeff(double c) { return c == 0.0; }
inline bool is_zero_coeff(const CdElement& c) { return c.norm_sq() == 0.0; }
inline double coeff_size(double c) { return std::abs(c); }
inline double coeff_size(const CdElement& c) {
  double m = 0.0;
  for (std::size_t j = 0; j < c.dim(); ++j) m = std::max(m, std::abs(c[j]));
  return m;
}
}  // namespace detail

template <class C>
class Poly {
public:
  Poly() = default;
  /// `zero` fixes the coefficient shape (e.g. the level of a CdElement).
  explicit Poly(std::size_t nvars, C zero = C{}) : nvars_(nvars), zero_(std::move(zero)) {}

  static Poly constant(std::size_t nvars, C c, C zero = C{}) {
    Poly p(nvars, std::move(zero));
    p.add_term(Exponents(nvars, 0), std::move(c));
    return p;
  }
  static Poly variable(std::size_t nvars, std::size_t j, C one, C zero = C{}) {
    if (j >= nvars) throw ValidationError("polynomial variable index out of range");
    Poly p(nvars, std::move(zero));
    Exponents e(nvars, 0);
    e[j] = 1;
    p.add_term(std::move(e), std::move(one));
    return p;
  }

  [[nodiscard]] std::size_t nvars() const { return nvars_; }
  [[nodiscard]] const C& zero() const { return zero_; }
  [[nodiscard]] const std::map<Exponents, C>& terms() const { return terms_; }
  [[nodiscard]] bool is_zero() const { return terms_.empty(); }

  [[nodiscard]] unsigned degree() const {
    unsigned d = 0;
    for (const auto& [e, c] : terms_) {
      unsigned s = 0;
      for (unsigned k : e) s += k;
      d = std::max(d, s);
    }
    return d;
  }

  [[nodiscard]] bool is_constant() const {
    return terms_.empty() || (terms_.size() == 1 && degree() == 0);
  }
  [[nodiscard]] C constant_term() const {
    auto it = terms_.find(Exponents(nvars_, 0));
    return it == terms_.end() ? zero_ : it->second;
  }

  void add_term(Exponents e, C c) {
    if (e.size() != nvars_) throw ValidationError("exponent vector has the wrong length");
    auto it = terms_.find(e);
    if (it == terms_.end()) {
      if (!detail::is_zero_coeff(c)) terms_.emplace(std::move(e), std::move(c));
      return;
    }
    it->second = it->second + c;
    if (detail::is_zero_coeff(it->second)) terms_.erase(it);
  }

  Poly& operator+=(const Poly& o) {
    check(o);
    for (const auto& [e, c] : o.terms_) add_term(e, c);
    return *this;
  }
  Poly& operator-=(const Poly& o) {
    check(o);
    for (const auto& [e, c] : o.terms_) add_term(e, c * -1.0);
    return *this;
  }
  friend Poly operator+(Poly a, const Poly& b) { return a += b; }
  friend Poly operator-(Poly a, const Poly& b) { return a -= b; }
  friend Poly operator-(const Poly& a) { return a * -1.0; }
  friend Poly operator*(const Poly& a, double s) {
    Poly out(a.nvars_, a.zero_);
    for (const auto& [e, c] : a.terms_) out.add_term(e, c * s);
    return out;
  }
  friend Poly operator*(double s, const Poly& a) { return a * s; }

  /// (sum a_e x^e)(sum b_f x^f) = sum (a_e b_f) x^{e+f}.
  friend Poly operator*(const Poly& a, const Poly& b) {
    a.check(b);
    Poly out(a.nvars_, a.zero_);
    for (const auto& [e, ca] : a.terms_) {
      for (const auto& [f, cb] : b.terms_) {
        Exponents g(e);
        for (std::size_t j = 0; j < g.size(); ++j) g[j] += f[j];
        out.add_term(std::move(g), ca * cb);
      }
    }
    return out;
  }

  /// z^k by repeated left multiplication z (z (... z)); equal to any other
  /// bracketing in a power-associative algebra.
  [[nodiscard]] Poly pow(unsigned k) const {
    Poly out = one_like();
    for (unsigned i = 0; i < k; ++i) out = (*this) * out;
    return out;
  }

  [[nodiscard]] Poly one_like() const;

  [[nodiscard]] Poly derivative(std::size_t var, unsigned order = 1) const {
    if (var >= nvars_) throw ValidationError("derivative variable out of range");
    Poly out(nvars_, zero_);
    for (const auto& [e, c] : terms_) {
      if (e[var] < order) continue;
      double f = 1.0;
      for (unsigned k = 0; k < order; ++k) f *= static_cast<double>(e[var] - k);
      Exponents g(e);
      g[var] -= order;
      out.add_term(std::move(g), c * f);
    }
    return out;
  }

  [[nodiscard]] C evaluate(std::span<const double> x) const {
    if (x.size() != nvars_) throw ValidationError("evaluation point has the wrong dimension");
    C acc = zero_;
    for (const auto& [e, c] : terms_) {
      double m = 1.0;
      for (std::size_t j = 0; j < nvars_; ++j) {
        for (unsigned k = 0; k < e[j]; ++k) m *= x[j];
      }
      acc = acc + c * m;
    }
    return acc;
  }

  /// Renames variable j to target[j] in a space of new_nvars variables.
  [[nodiscard]] Poly remap(std::size_t new_nvars, const std::vector<std::size_t>& target) const {
    if (target.size() != nvars_) throw ValidationError("remap needs one target per variable");
    Poly out(new_nvars, zero_);
    for (const auto& [e, c] : terms_) {
      Exponents g(new_nvars, 0);
      for (std::size_t j = 0; j < nvars_; ++j) {
        if (target[j] >= new_nvars) throw ValidationError("remap target out of range");
        g[target[j]] += e[j];
      }
      out.add_term(std::move(g), c);
    }
    return out;
  }

  /// Restriction to the coordinate subspace where only the variables in
  /// `keep` are nonzero; keep[j] becomes variable j of the result.
  [[nodiscard]] Poly restrict_to(const std::vector<std::size_t>& keep) const {
    Poly out(keep.size(), zero_);
    for (const auto& [e, c] : terms_) {
      unsigned kept = 0, total = 0;
      Exponents g(keep.size(), 0);
      for (std::size_t j = 0; j < keep.size(); ++j) {
        g[j] = e[keep[j]];
        kept += g[j];
      }
      for (unsigned k : e) total += k;
      if (kept == total) out.add_term(std::move(g), c);
    }
    return out;
  }

  template <class F>
  [[nodiscard]] auto map_coeffs(F&& f, decltype(f(std::declval<C>())) zero) const {
    using D = decltype(f(std::declval<C>()));
    Poly<D> out(nvars_, std::move(zero));
    for (const auto& [e, c] : terms_) out.add_term(e, f(c));
    return out;
  }

  [[nodiscard]] double max_abs_coeff() const {
    double m = 0.0;
    for (const auto& [e, c] : terms_) m = std::max(m, detail::coeff_size(c));
    return m;
  }

private:
  void check(const Poly& o) const {
    if (o.nvars_ != nvars_) throw ValidationError("polynomials live in different variable sets");
  }

  std::size_t nvars_ = 0;
  C zero_{};
  std::map<Exponents, C> terms_;
};

template <>
inline Poly<double> Poly<double>::one_like() const {
  return constant(nvars_, 1.0);
}
template <>
inline Poly<CdElement> Poly<CdElement>::one_like() const {
  return constant(nvars_, CdElement::real(zero_.level(), 1.0), zero_);
}

/// Real polynomial times algebra-valued polynomial (the real factor is central).
inline Poly<CdElement> operator*(const Poly<double>& a, const Poly<CdElement>& b) {
  if (a.nvars() != b.nvars()) throw ValidationError("polynomials live in different variable sets");
  Poly<CdElement> out(b.nvars(), b.zero());
  for (const auto& [e, ca] : a.terms()) {
    for (const auto& [f, cb] : b.terms()) {
      Exponents g(e);
      for (std::size_t j = 0; j < g.size(); ++j) g[j] += f[j];
      out.add_term(std::move(g), cb * ca);
    }
  }
  return out;
}

inline Poly<CdElement> lift_scalar_poly(const Poly<double>& p, unsigned level) {
  return p.map_coeffs([level](double c) { return CdElement::real(level, c); }, CdElement(level));
}

}  // namespace sbw
