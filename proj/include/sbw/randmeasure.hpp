#pragma once
// Finite atomic realization of an elementary orthogonal random operator
// valued measure on Lambda = C^{m+3}.
//
// Each sample draws one cell index J with P(J = j) = p_j and sets
// H(G_j)(omega) = c_j(omega) * (multiplication by v_j), c_j = xi_j 1{J = j}.
// Consequently E c_j = xi_j p_j, E c_i c_j = delta_ij xi_j^2 p_j and
// c_i c_j = 0 for i != j on every sample. Independent per-cell amplitudes
// cannot give both the delta condition and orthogonality at once: orthogonality
// forces E c_i c_j = E c_i E c_j = 0, so every cell but one would have mean zero,
// and then E c_j^2 = xi_j E c_j = 0 makes c_j vanish almost surely.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "sbw/calculus.hpp"
#include "sbw/errors.hpp"
#include "sbw/parallel.hpp"

namespace sbw {

/// Box in R^{2(m+3)} (real and imaginary parts of lambda interleaved) with a
/// representative point.
struct Cell {
  std::vector<double> lo, hi;
  std::vector<cplx> lambda;

  [[nodiscard]] double diameter() const {
    double s = 0.0;
    for (std::size_t a = 0; a < lo.size(); ++a) s += (hi[a] - lo[a]) * (hi[a] - lo[a]);
    return std::sqrt(s);
  }
  [[nodiscard]] bool inside(const std::vector<double>& blo, const std::vector<double>& bhi) const {
    for (std::size_t a = 0; a < lo.size(); ++a) {
      if (lo[a] < blo[a] || hi[a] > bhi[a]) return false;
    }
    return true;
  }
  [[nodiscard]] bool overlaps(const std::vector<double>& blo, const std::vector<double>& bhi) const {
    for (std::size_t a = 0; a < lo.size(); ++a) {
      if (hi[a] <= blo[a] || bhi[a] <= lo[a]) return false;
    }
    return true;
  }
};

class Partition {
public:
  Partition() = default;
  explicit Partition(std::vector<Cell> cells) : cells_(std::move(cells)) {
    if (cells_.empty()) throw ValidationError("partition needs at least one cell");
    const std::size_t dim = cells_[0].lo.size();
    for (const auto& c : cells_) {
      if (c.lo.size() != dim || c.hi.size() != dim) throw ValidationError("cells must share a dimension");
      if (c.lambda.size() * 2 != dim) {
        throw ValidationError("cell representative must have half as many complex entries as box axes");
      }
      for (std::size_t a = 0; a < dim; ++a) {
        if (!(c.hi[a] > c.lo[a])) throw ValidationError("cell boxes need hi > lo on every axis");
      }
    }
    for (std::size_t i = 0; i < cells_.size(); ++i) {
      for (std::size_t j = 0; j < i; ++j) {
        if (cells_[i].overlaps(cells_[j].lo, cells_[j].hi)) {
          throw ValidationError("cells " + std::to_string(j) + " and " + std::to_string(i) + " overlap");
        }
      }
    }
  }

  /// One unit cell around each representative (side `side`), useful for atom lists.
  static Partition around(const std::vector<std::vector<cplx>>& reps, double side) {
    std::vector<Cell> cells;
    for (const auto& r : reps) {
      Cell c;
      c.lambda = r;
      for (const auto& z : r) {
        for (double v : {z.real(), z.imag()}) {
          c.lo.push_back(v - side / 2);
          c.hi.push_back(v + side / 2);
        }
      }
      cells.push_back(std::move(c));
    }
    return Partition(std::move(cells));
  }

  [[nodiscard]] std::size_t size() const { return cells_.size(); }
  [[nodiscard]] const Cell& cell(std::size_t j) const { return cells_[j]; }
  [[nodiscard]] double diameter_bound() const {
    double d = 0.0;
    for (const auto& c : cells_) d = std::max(d, c.diameter());
    return d;
  }

  /// Cells inside a box; a cell that straddles the box boundary is an error.
  [[nodiscard]] std::vector<std::size_t> cells_in(const std::vector<double>& lo,
                                                  const std::vector<double>& hi) const {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < cells_.size(); ++j) {
      if (cells_[j].inside(lo, hi)) {
        out.push_back(j);
      } else if (cells_[j].overlaps(lo, hi)) {
        throw ValidationError("region is not cell-aligned: it cuts cell " + std::to_string(j));
      }
    }
    return out;
  }

private:
  std::vector<Cell> cells_;
};

/// Set of cells, the only measurable sets of the finite construction.
struct Region {
  std::vector<bool> member;

  static Region all(std::size_t n) { return {std::vector<bool>(n, true)}; }
  static Region none(std::size_t n) { return {std::vector<bool>(n, false)}; }
  static Region of(std::size_t n, std::initializer_list<std::size_t> cells) {
    Region r = none(n);
    for (auto c : cells) r.member.at(c) = true;
    return r;
  }
  static Region of(std::size_t n, const std::vector<std::size_t>& cells) {
    Region r = none(n);
    for (auto c : cells) r.member.at(c) = true;
    return r;
  }
  [[nodiscard]] bool contains(std::size_t j) const { return member[j]; }
  [[nodiscard]] Region intersect(const Region& o) const {
    Region r = *this;
    for (std::size_t j = 0; j < r.member.size(); ++j) r.member[j] = member[j] && o.member[j];
    return r;
  }
  [[nodiscard]] Region unite(const Region& o) const {
    Region r = *this;
    for (std::size_t j = 0; j < r.member.size(); ++j) r.member[j] = member[j] || o.member[j];
    return r;
  }
  [[nodiscard]] bool disjoint(const Region& o) const {
    for (std::size_t j = 0; j < member.size(); ++j) {
      if (member[j] && o.member[j]) return false;
    }
    return true;
  }
};

struct MonteCarlo {
  cplx mean;
  double std_error = 0.0;
  std::size_t samples = 0;

  /// |mean - target| within k standard errors (exact match when SE is zero).
  [[nodiscard]] bool agrees(cplx target, double k = 3.0) const {
    return std::abs(mean - target) <= k * std_error + 1e-12 * std::max(1.0, std::abs(target));
  }
};

/// Mean and standard error of per-sample values, reduced in a fixed order.
inline MonteCarlo expectation(const std::vector<cplx>& values) {
  if (values.empty()) throw ValidationError("expectation needs at least one sample");
  const std::size_t n = values.size();
  const cplx mean = pairwise_sum(values) / static_cast<double>(n);
  std::vector<double> dev(n);
  for (std::size_t i = 0; i < n; ++i) dev[i] = std::norm(values[i] - mean);
  const double var = n > 1 ? pairwise_sum(dev) / static_cast<double>(n - 1) : 0.0;
  return {mean, std::sqrt(var / static_cast<double>(n)), n};
}

/// Index draws for a batch of samples. Sample i uses its own generator
/// seeded from (seed, i), so results do not depend on the thread split.
struct Realization {
  std::vector<std::uint32_t> index;
  [[nodiscard]] std::size_t size() const { return index.size(); }
};

class AtomicRandomMeasure {
public:
  AtomicRandomMeasure(Partition partition, std::vector<double> p, std::vector<cplx> xi,
                      std::vector<cplx> multiplier, std::uint64_t seed)
      : partition_(std::move(partition)), p_(std::move(p)), xi_(std::move(xi)),
        v_(std::move(multiplier)), seed_(seed) {
    const std::size_t J = partition_.size();
    if (v_.empty()) v_.assign(J, 1.0);
    if (p_.size() != J || xi_.size() != J || v_.size() != J) {
      throw ValidationError("measure needs one weight, amplitude and multiplier per cell");
    }
    double s = 0.0;
    for (double w : p_) {
      if (!(w >= 0.0)) throw ValidationError("cell weights must be nonnegative");
      s += w;
    }
    if (std::abs(s - 1.0) > 1e-12) throw ValidationError("cell weights must sum to 1");
  }

  [[nodiscard]] std::size_t cells() const { return partition_.size(); }
  [[nodiscard]] const Partition& partition() const { return partition_; }
  [[nodiscard]] double p(std::size_t j) const { return p_[j]; }
  [[nodiscard]] cplx xi(std::size_t j) const { return xi_[j]; }
  [[nodiscard]] cplx multiplier(std::size_t j) const { return v_[j]; }
  [[nodiscard]] std::uint64_t seed() const { return seed_; }

  [[nodiscard]] Realization sample(std::size_t count, std::size_t first = 0) const {
    Realization r;
    r.index.resize(count);
    parallel_for(count, [&](std::size_t i) {
      std::seed_seq seq{static_cast<std::uint64_t>(seed_ & 0xffffffffu), static_cast<std::uint64_t>(seed_ >> 32),
                        static_cast<std::uint64_t>(first + i)};
      std::mt19937_64 rng(seq);
      std::discrete_distribution<std::uint32_t> pick(p_.begin(), p_.end());
      r.index[i] = pick(rng);
    });
    return r;
  }

  /// c_j(omega) for sample s.
  [[nodiscard]] cplx c(const Realization& r, std::size_t s, std::size_t j) const {
    return r.index[s] == j ? xi_[j] : cplx{};
  }

  /// Scalar of the multiplication operator H(M)(omega) = sum_{j in M} c_j v_j.
  [[nodiscard]] cplx H(const Realization& r, std::size_t s, const Region& M) const {
    const std::size_t J = r.index[s];
    return M.contains(J) ? xi_[J] * v_[J] : cplx{};
  }

  [[nodiscard]] std::vector<cplx> sample_H(const Realization& r, const Region& M) const {
    std::vector<cplx> out(r.size());
    for (std::size_t s = 0; s < r.size(); ++s) out[s] = H(r, s, M);
    return out;
  }

  /// Structural measure of one cell: |xi_j v_j|^2 p_j.
  [[nodiscard]] double m_hat_cell(std::size_t j) const { return std::norm(xi_[j] * v_[j]) * p_[j]; }

  /// m_hat(M1, M2) = E H(M1)^* H(M2) = sum over cells in M1 and M2.
  [[nodiscard]] double structural(const Region& M1, const Region& M2) const {
    double s = 0.0;
    for (std::size_t j = 0; j < cells(); ++j) {
      if (M1.contains(j) && M2.contains(j)) s += m_hat_cell(j);
    }
    return s;
  }

  [[nodiscard]] MonteCarlo structural_mc(const Realization& r, const Region& M1, const Region& M2) const {
    std::vector<cplx> v(r.size());
    for (std::size_t s = 0; s < r.size(); ++s) v[s] = std::conj(H(r, s, M1)) * H(r, s, M2);
    return expectation(v);
  }

  /// int H f for f constant a_k on cell k: sum_k H(G_k) a_k per sample.
  [[nodiscard]] std::vector<cplx> integrate_step(const Realization& r, const std::vector<cplx>& a) const {
    require_cellwise(a);
    std::vector<cplx> out(r.size());
    for (std::size_t s = 0; s < r.size(); ++s) {
      const std::size_t J = r.index[s];
      out[s] = xi_[J] * v_[J] * a[J];
    }
    return out;
  }

  /// E (int H f)^* (int H g) by enumerating the index outcome.
  [[nodiscard]] cplx isometry_lhs(const std::vector<cplx>& a, const std::vector<cplx>& b) const {
    require_cellwise(a);
    require_cellwise(b);
    cplx s = 0.0;
    for (std::size_t j = 0; j < cells(); ++j) s += p_[j] * std::conj(xi_[j] * v_[j] * a[j]) * (xi_[j] * v_[j] * b[j]);
    return s;
  }
  /// sum_k (m_hat(G_k) a_k, b_k).
  [[nodiscard]] cplx isometry_rhs(const std::vector<cplx>& a, const std::vector<cplx>& b) const {
    cplx s = 0.0;
    for (std::size_t j = 0; j < cells(); ++j) s += m_hat_cell(j) * std::conj(a[j]) * b[j];
    return s;
  }

  /// Weighted vector measure eta(N) = int H(dl) g(l) chi_N(l) per sample.
  [[nodiscard]] std::vector<cplx> eta(const Realization& r, const std::vector<cplx>& g, const Region& N) const {
    require_cellwise(g);
    std::vector<cplx> out(r.size());
    for (std::size_t s = 0; s < r.size(); ++s) {
      const std::size_t J = r.index[s];
      out[s] = N.contains(J) ? xi_[J] * v_[J] * g[J] : cplx{};
    }
    return out;
  }
  /// n_hat(N) = sum_{G_j in N} (m_hat(G_j) g_j, g_j).
  [[nodiscard]] double n_hat(const std::vector<cplx>& g, const Region& N) const {
    double s = 0.0;
    for (std::size_t j = 0; j < cells(); ++j) {
      if (N.contains(j)) s += m_hat_cell(j) * std::norm(g[j]);
    }
    return s;
  }
  /// int f d eta, assembled from eta over single cells.
  [[nodiscard]] std::vector<cplx> integrate_eta(const Realization& r, const std::vector<cplx>& f,
                                                const std::vector<cplx>& g) const {
    require_cellwise(f);
    std::vector<cplx> out(r.size(), cplx{});
    for (std::size_t j = 0; j < cells(); ++j) {
      const auto e = eta(r, g, Region::of(cells(), {j}));
      for (std::size_t s = 0; s < r.size(); ++s) out[s] += f[j] * e[s];
    }
    return out;
  }

  struct FubiniReport {
    std::vector<cplx> iterated;  // int_V int H(dl) h(tau) g(tau, l) dtau
    std::vector<cplx> direct;    // int H(dl) f(l), f(l) = int h g dtau
    double max_discrepancy = 0.0;
  };

  /// g[k][j] = g(tau_k, cell j); weights are quadrature weights on the tau nodes.
  [[nodiscard]] FubiniReport fubini_check(const Realization& r, const std::vector<std::vector<cplx>>& g,
                                          const std::vector<cplx>& h, const std::vector<double>& weights) const {
    if (g.size() != h.size() || h.size() != weights.size()) {
      throw ValidationError("Fubini check needs matching tau samples");
    }
    FubiniReport rep;
    std::vector<cplx> f(cells(), cplx{});
    for (std::size_t k = 0; k < g.size(); ++k) {
      require_cellwise(g[k]);
      for (std::size_t j = 0; j < cells(); ++j) f[j] += weights[k] * h[k] * g[k][j];
    }
    rep.direct = integrate_step(r, f);
    rep.iterated.assign(r.size(), cplx{});
    for (std::size_t k = 0; k < g.size(); ++k) {
      std::vector<cplx> hk(cells());
      for (std::size_t j = 0; j < cells(); ++j) hk[j] = h[k] * g[k][j];
      const auto inner = integrate_step(r, hk);
      for (std::size_t s = 0; s < r.size(); ++s) rep.iterated[s] += weights[k] * inner[s];
    }
    for (std::size_t s = 0; s < r.size(); ++s) {
      rep.max_discrepancy = std::max(rep.max_discrepancy, std::abs(rep.iterated[s] - rep.direct[s]));
    }
    return rep;
  }

  /// Analytic E(c_i c_j) and the delta-condition right side delta_ij xi_j E c_j.
  [[nodiscard]] cplx moment_cc(std::size_t i, std::size_t j) const { return i == j ? xi_[j] * xi_[j] * p_[j] : cplx{}; }
  [[nodiscard]] cplx delta_rhs(std::size_t i, std::size_t j) const { return i == j ? xi_[j] * (xi_[j] * p_[j]) : cplx{}; }

private:
  void require_cellwise(const std::vector<cplx>& a) const {
    if (a.size() != cells()) throw ValidationError("step function needs one value per cell");
  }

  Partition partition_;
  std::vector<double> p_;
  std::vector<cplx> xi_;
  std::vector<cplx> v_;
  std::uint64_t seed_;
};

/// How xi(lambda) is chosen from the PDE coefficients.
enum class XiRule {
  /// xi = gamma / (2 lambda_1 lambda_{m+2}) (or the varsigma analogue), as printed.
  AsPrinted,
  /// xi = 2 lambda_1 lambda_{m+2} / gamma, which makes xi gamma = q_1 so the
  /// expectation equation reduces to the auxiliary PDE.
  Consistent,
};

inline cplx xi_from_rule(const std::vector<cplx>& lambda, unsigned m, cplx gamma, cplx varsigma, XiRule rule) {
  if (lambda.size() != m + 3) throw ValidationError("lambda must have m + 3 entries");
  const cplx l1 = lambda[0];
  if (gamma != cplx{}) {
    const cplx d = 2.0 * l1 * lambda[m + 1];
    if (d == cplx{}) throw ValidationError("xi rule needs lambda_1 lambda_{m+2} != 0");
    return rule == XiRule::AsPrinted ? gamma / d : d / gamma;
  }
  if (varsigma != cplx{}) {
    const cplx d = 2.0 * l1 * lambda[m + 2];
    if (d == cplx{}) throw ValidationError("xi rule needs lambda_1 lambda_{m+3} != 0");
    return rule == XiRule::AsPrinted ? varsigma / d : d / varsigma;
  }
  throw ValidationError("xi rule needs gamma or varsigma nonzero");
}

}  // namespace sbw
