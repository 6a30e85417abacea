#pragma once
// Kernel of the auxiliary PDE
//   {S_{2,a} v + q1 pi_1(sigma_x + sigma_y)(v^2) + q2 v^2}|_{x=y} = 0
// built from an exponential midpoint-form F and the fixed point K = F + A K.
//
// Coordinate j of a point lives on i_j (j = 1..n). The tail integral runs
// along the axis where kappa is most negative, so K is only ever needed on the
// ray set {(w, w + t e_a) : w in V, t in [0, R]}; the Picard iteration is
// carried out there and K on V^2 is recovered as F + A K at the end.
//
// With F(z, v) = E(z) E(v), E(s) = exp(kappa . s / 2), the nested integrals
// factor. Writing S_c[f](x) for the polyline segment of f along coordinate c,
// c_g = 1 / (psi_g N) and g(c) for the generator assigned to coordinate c:
//   T(w)      = c_{g(a)} i_{g(a)} int_0^R E(w + t e_a) K(w, w + t e_a) dt
//   Ehat(y)   = sum_c c_{g(c)} i_{g(c)} S_c[E](y)
//   L(x, y)   = sum_c c_{g(c)} i_{g(c)} (Ehat(y) S_c[T](x))
//   M(x, y)   = sum_k sum_c c_{g(k)} c_{g(c)} i_{g(k)} (i_{g(c)} (S_k[Ehat](y) S_c[T](x)))
// and A K = p1 pi_1(L) + p2 M, or L p1 + M p2 in the quaternion variant.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdio>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sbw/algebra.hpp"
#include "sbw/calculus.hpp"
#include "sbw/errors.hpp"
#include "sbw/parallel.hpp"

namespace sbw {

enum class KernelVariant { ComplexScalar, Quaternion };

struct KernelConfig {
  std::array<cplx, 3> a{1.0, 0.0, 0.0};
  cplx p1{0.0}, p2{0.0};
  CdElement p1_h{2}, p2_h{2};  // quaternion variant
  std::vector<double> kappa;
  std::vector<double> w0;   // empty: the node nearest the centre of V
  double R_inf = 0.0;       // 0: 10 ln 10 / |kappa_a|
  unsigned max_iter = 200;
  double tol = 1e-12;
  unsigned level = 0;       // 0: smallest admissible
  KernelVariant variant = KernelVariant::ComplexScalar;
  bool force = false;       // iterate even when the norm estimate is >= 1

  [[nodiscard]] bool p_is_zero() const {
    if (variant == KernelVariant::Quaternion) return p1_h.norm_sq() == 0.0 && p2_h.norm_sq() == 0.0;
    return p1 == cplx{} && p2 == cplx{};
  }
  [[nodiscard]] cplx q1() const { return -2.0 * a[0] * p1; }
  [[nodiscard]] cplx q2() const { return -2.0 * a[0] * p2; }

  [[nodiscard]] unsigned resolved_level(std::size_t n) const {
    if (level != 0) return level;
    unsigned r = 2;
    while ((std::size_t{1} << r) <= n) ++r;
    return r;
  }

  void validate(std::size_t n) const {
    if (a[0] == cplx{}) throw ValidationError("a_1 must be nonzero");
    if (kappa.size() != n) throw ValidationError("kappa needs one entry per space coordinate");
    if (!w0.empty() && w0.size() != n) throw ValidationError("w0 needs one coordinate per space axis");
    if (max_iter == 0 || !(tol > 0.0)) throw ValidationError("Picard iteration needs max_iter > 0 and tol > 0");
    if (R_inf < 0.0) throw ValidationError("R_inf must be nonnegative");
    const unsigned r = resolved_level(n);
    detail::check_level(r);
    if ((std::size_t{1} << r) <= n) throw ValidationError("algebra level too small for the dimension");
    if (variant == KernelVariant::Quaternion) {
      if (r < 2 || r > 3) throw ValidationError("the quaternion variant needs level 2 or 3");
      if (p1_h.level() != 2 || p2_h.level() != 2) throw ValidationError("quaternion p must have level 2");
    }
  }
};

/// a_1 k^4/16 - a_2 k^2/4 + a_3 with k^2 = |kappa|^2: the value of S_{2,a}
/// on exp(kappa . (x + y)/2) divided by the exponential.
inline cplx characteristic_value(const std::array<cplx, 3>& a, std::span<const double> kappa) {
  double k2 = 0.0;
  for (double k : kappa) k2 += k * k;
  return a[0] * k2 * k2 / 16.0 - a[1] * k2 / 4.0 + a[2];
}

inline constexpr double kCharacteristicTolerance = 1e-10;

inline double midpoint_F(std::span<const double> kappa, std::span<const double> x, std::span<const double> y) {
  double e = 0.0;
  for (std::size_t j = 0; j < kappa.size(); ++j) e += kappa[j] * (x[j] + y[j]) / 2.0;
  return std::exp(e);
}

/// F over V^2 in midpoint form. Rejects kappa off the characteristic surface.
inline GridField build_F(const KernelConfig& cfg, const Grid& grid) {
  grid.validate();
  cfg.validate(grid.dim());
  const cplx ch = characteristic_value(cfg.a, cfg.kappa);
  if (std::abs(ch) > kCharacteristicTolerance) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "kappa violates the characteristic equation (|value| = %.3e)", std::abs(ch));
    throw ValidationError(buf);
  }
  GridField F = GridField::scalar(grid, Arity::XY);
  const std::size_t n = grid.dim();
  F.fill([&](std::span<const double> p, cplx* out) { out[0] = midpoint_F(cfg.kappa, p.first(n), p.subspan(n)); });
  return F;
}

struct PicardTrace {
  std::vector<double> diffs;   // ||K_{j+1} - K_j||
  std::vector<double> ratios;  // diffs[j] / diffs[j-1]
  double norm_estimate = 0.0;    // induced max-norm of A
  double residual = 0.0;       // ||K - F - A K|| at exit
  unsigned iterations = 0;
  bool converged = false;
  bool diverged = false;
};

/// The discretized operator A on the ray set.
class KernelOperator {
public:
  KernelOperator(KernelConfig cfg, Grid grid) : cfg_(std::move(cfg)), grid_(std::move(grid)) {
    grid_.validate();
    n_ = grid_.dim();
    cfg_.validate(n_);
    level_ = cfg_.resolved_level(n_);
    W_ = std::size_t{1} << level_;
    spec_ = DiracSpec::half_laplacian(level_, n_);
    latV_ = Lattice(grid_.space);

    w0_.resize(n_);
    for (std::size_t c = 0; c < n_; ++c) {
      const Axis& ax = grid_.space[c];
      if (cfg_.w0.empty()) {
        w0_[c] = (ax.count - 1) / 2;
      } else {
        const double pos = (cfg_.w0[c] - ax.lo) / ax.h();
        const double idx = std::round(pos);
        if (std::abs(pos - idx) > 1e-9 || idx < 0.0 || idx >= static_cast<double>(ax.count)) {
          throw ValidationError("w0 must be a grid node");
        }
        w0_[c] = static_cast<std::size_t>(idx);
      }
      if (w0_[c] == 0 || w0_[c] + 1 >= ax.count) throw ValidationError("w0 must lie in the interior of V");
    }
    for (std::size_t c = 0; c < n_; ++c) {
      const std::size_t g = *spec_.generator_for(c + 1);
      gen_.push_back(g);
      factor_.push_back(1.0 / (spec_.psi[g] * static_cast<double>(spec_.active_count())));
    }

    // Tail direction.
    axis_ = 0;
    double most = 0.0;
    for (std::size_t c = 0; c < n_; ++c) {
      if (cfg_.kappa[c] < most) {
        most = cfg_.kappa[c];
        axis_ = c;
      }
    }
    zero_ = cfg_.p_is_zero();
    if (!zero_ && !(most < 0.0)) throw ValidationError("kappa has no decaying ray direction for the tail integral");
    const double h = grid_.space[axis_].h();
    if (zero_) {
      tail_ = 0;
      R_ = 0.0;
    } else {
      const double R = cfg_.R_inf > 0.0 ? cfg_.R_inf : default_tail_radius(-most);
      tail_ = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(R / h - 1e-9)));
      R_ = static_cast<double>(tail_) * h;
      decay_ = -most;
    }
    auto axes = grid_.space;
    axes[axis_].hi = axes[axis_].lo + static_cast<double>(axes[axis_].count - 1 + tail_) * h;
    axes[axis_].count += tail_;
    latU_ = Lattice(axes);
    ray_w_ = tail_ == 0 ? std::vector<double>(1, 0.0) : line_weights(tail_ + 1, h);

    // E on U, Ehat on U and its polyline segments.
    std::vector<cplx> E(latU_.size());
    for (std::size_t i = 0; i < latU_.size(); ++i) {
      const auto p = latU_.point(i);
      E[i] = midpoint_F(cfg_.kappa, p, std::vector<double>(n_, 0.0));
    }
    PolylineTables segE(latU_, 1, E.data(), w0_);
    Ehat_.assign(latU_.size() * W_, cplx{});
    for (std::size_t i = 0; i < latU_.size(); ++i) {
      for (std::size_t c = 0; c < n_; ++c) Ehat_[i * W_ + gen_[c]] += factor_[c] * segE.segment(c, i)[0];
    }
    if (uses_p2()) segEhat_.emplace(latU_, W_, Ehat_.data(), w0_);

    if (cfg_.variant == KernelVariant::Quaternion) {
      p1r_.assign(W_, cplx{});
      p2r_.assign(W_, cplx{});
      for (std::size_t j = 0; j < 4; ++j) {
        p1r_[j] = cfg_.p1_h[j];
        p2r_[j] = cfg_.p2_h[j];
      }
    }
  }

  [[nodiscard]] const KernelConfig& config() const { return cfg_; }
  [[nodiscard]] const Grid& grid() const { return grid_; }
  [[nodiscard]] unsigned level() const { return level_; }
  [[nodiscard]] std::size_t width() const { return W_; }
  [[nodiscard]] std::size_t tail_axis() const { return axis_; }
  [[nodiscard]] std::size_t tail_nodes() const { return tail_; }
  [[nodiscard]] double tail_radius() const { return R_; }
  [[nodiscard]] const DiracSpec& dirac() const { return spec_; }
  [[nodiscard]] const std::vector<std::size_t>& base_node() const { return w0_; }
  [[nodiscard]] const Lattice& lattice_V() const { return latV_; }
  [[nodiscard]] const Lattice& lattice_U() const { return latU_; }

  [[nodiscard]] std::size_t state_size() const { return latV_.size() * (tail_ + 1) * W_; }

  /// Node of U holding the V node x shifted by k steps along the tail axis.
  [[nodiscard]] std::size_t to_U(std::size_t xV, std::size_t k = 0) const {
    std::size_t u = 0;
    for (std::size_t c = 0; c < n_; ++c) {
      std::size_t i = latV_.coord_index(xV, c);
      if (c == axis_) i += k;
      u += i * latU_.stride(c);
    }
    return u;
  }

  /// Samples K(x, y) on the ray set.
  [[nodiscard]] std::vector<cplx> sample_state(
      const std::function<void(std::span<const double>, std::span<const double>, cplx*)>& K) const {
    std::vector<cplx> s(state_size(), cplx{});
    parallel_for(latV_.size(), [&](std::size_t x) {
      const auto px = latV_.point(x);
      for (std::size_t k = 0; k <= tail_; ++k) K(px, latU_.point(to_U(x, k)), s.data() + (x * (tail_ + 1) + k) * W_);
    });
    return s;
  }

  [[nodiscard]] std::vector<cplx> F_state() const {
    return sample_state([&](std::span<const double> x, std::span<const double> y, cplx* out) {
      out[0] = midpoint_F(cfg_.kappa, x, y);
    });
  }

  /// Precomputed segment tables of T for one K.
  struct Prepared {
    std::optional<PolylineTables> segT;
  };

  [[nodiscard]] Prepared prepare(const std::vector<cplx>& K) const {
    if (K.size() != state_size()) throw ValidationError("kernel state has the wrong size");
    Prepared pr;
    if (zero_) return pr;
    std::vector<cplx> T(latV_.size() * W_, cplx{});
    parallel_for(latV_.size(), [&](std::size_t x) {
      std::vector<cplx> acc(W_, cplx{});
      for (std::size_t k = 0; k <= tail_; ++k) {
        const double e = midpoint_F(cfg_.kappa, latU_.point(to_U(x, k)), std::vector<double>(n_, 0.0));
        const cplx* kv = K.data() + (x * (tail_ + 1) + k) * W_;
        for (std::size_t j = 0; j < W_; ++j) acc[j] += ray_w_[k] * e * kv[j];
      }
      cd_basis_left_mul_acc(level_, gen_[axis_], acc.data(), factor_[axis_], T.data() + x * W_);
    });
    pr.segT.emplace(latV_, W_, T.data(), w0_);
    return pr;
  }

  /// (A K)(x, y) for x a node of V and y a node of U.
  void value(const Prepared& pr, std::size_t xV, std::size_t yU, cplx* out) const {
    if (zero_) {
      std::fill(out, out + W_, cplx{});
      return;
    }
    std::vector<const cplx*> seg(n_);
    for (std::size_t c = 0; c < n_; ++c) seg[c] = pr.segT->segment(c, xV);
    combine(seg, yU, out);
  }

  /// A K at a node y of U from the segments S_c[T](x), one per coordinate.
  void combine(const std::vector<const cplx*>& seg, std::size_t yU, cplx* out) const {
    std::fill(out, out + W_, cplx{});
    std::vector<cplx> L(W_, cplx{}), M(W_, cplx{}), prod(W_), inner(W_);
    const cplx* Eh = Ehat_.data() + yU * W_;
    for (std::size_t c = 0; c < n_; ++c) {
      const cplx* t = seg[c];
      cd_mul_raw(level_, Eh, t, prod.data());
      cd_basis_left_mul_acc(level_, gen_[c], prod.data(), factor_[c], L.data());
      if (!uses_p2()) continue;
      for (std::size_t k = 0; k < n_; ++k) {
        cd_mul_raw(level_, segEhat_->segment(k, yU), t, prod.data());
        std::fill(inner.begin(), inner.end(), cplx{});
        cd_basis_left_mul_acc(level_, gen_[c], prod.data(), 1.0, inner.data());
        cd_basis_left_mul_acc(level_, gen_[k], inner.data(), factor_[k] * factor_[c], M.data());
      }
    }
    if (cfg_.variant == KernelVariant::ComplexScalar) {
      // pi_1 of an element with complex coefficients is its i_1 coefficient.
      out[0] = cfg_.p1 * L[1];
      if (uses_p2()) {
        for (std::size_t j = 0; j < W_; ++j) out[j] += cfg_.p2 * M[j];
      }
    } else {
      cd_mul_raw(level_, L.data(), p1r_.data(), prod.data());
      for (std::size_t j = 0; j < W_; ++j) out[j] = prod[j];
      if (uses_p2()) {
        cd_mul_raw(level_, M.data(), p2r_.data(), prod.data());
        for (std::size_t j = 0; j < W_; ++j) out[j] += prod[j];
      }
    }
  }

  /// A K on the ray set.
  [[nodiscard]] std::vector<cplx> apply(const std::vector<cplx>& K) const {
    const Prepared pr = prepare(K);
    std::vector<cplx> out(state_size(), cplx{});
    if (zero_) return out;
    parallel_for(latV_.size(), [&](std::size_t x) {
      for (std::size_t k = 0; k <= tail_; ++k) value(pr, x, to_U(x, k), out.data() + (x * (tail_ + 1) + k) * W_);
    });
    return out;
  }

  /// Largest modulus of any coefficient at any node.
  [[nodiscard]] double norm(const std::vector<cplx>& s) const {
    double m = 0.0;
    for (const auto& v : s) m = std::max(m, std::abs(v));
    return m;
  }

  /// Norm of A induced by norm(): the largest absolute row sum of the
  /// discretized operator, assembled row by row from its factored form.
  [[nodiscard]] double induced_norm() const {
    if (zero_) return 0.0;
    // g(w) = sum_k |omega_k E(w + k h e_a)|, the ray weight seen by node w.
    std::vector<double> g(latV_.size(), 0.0);
    for (std::size_t w = 0; w < latV_.size(); ++w) {
      for (std::size_t k = 0; k <= tail_; ++k) {
        g[w] += std::abs(ray_w_[k]) * midpoint_F(cfg_.kappa, latU_.point(to_U(w, k)), std::vector<double>(n_, 0.0));
      }
    }
    // Rows of the cumulative quadrature: alpha_c(i, k) integrates from w0_c to node i.
    std::vector<std::vector<double>> alpha(n_);
    for (std::size_t c = 0; c < n_; ++c) {
      const std::size_t m = latV_.axis(c).count;
      const double h = latV_.axis(c).h();
      std::vector<double> cum(m * m, 0.0), unit(m, 0.0);
      std::vector<cplx> tmp(1);
      for (std::size_t k = 0; k < m; ++k) {
        std::fill(unit.begin(), unit.end(), 0.0);
        unit[k] = 1.0;
        cumulative_line(
            m, h, 1, [&](std::size_t q) { tmp[0] = unit[q]; return tmp.data(); },
            [&](std::size_t i, const cplx* v) { cum[i * m + k] = v[0].real(); });
      }
      alpha[c].resize(m * m);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t k = 0; k < m; ++k) alpha[c][i * m + k] = cum[i * m + k] - cum[w0_[c] * m + k];
      }
    }
    // Psi(y)[c][o][j]: output coefficient o at y per unit K coefficient j
    // entering through segment c (T = factor_a i_{ga} K moves j to ga ^ j).
    const std::size_t ga = gen_[axis_];
    const auto& table = detail::sign_table(level_);
    const std::size_t blk = n_ * W_ * W_;
    std::vector<cplx> Psi(latU_.size() * blk);
    std::vector<double> P(latU_.size() * n_ * W_);  // sum_j |Psi[c][o][j]|
    parallel_for(latU_.size(), [&](std::size_t y) {
      std::vector<cplx> unit(W_ * n_, cplx{}), col(W_);
      std::vector<const cplx*> seg(n_);
      for (std::size_t d = 0; d < n_; ++d) seg[d] = unit.data() + d * W_;
      cplx* psi = Psi.data() + y * blk;
      for (std::size_t c = 0; c < n_; ++c) {
        for (std::size_t j = 0; j < W_; ++j) {
          std::fill(unit.begin(), unit.end(), cplx{});
          unit[c * W_ + (ga ^ j)] = table.at(ga, j) > 0 ? factor_[axis_] : -factor_[axis_];
          combine(seg, y, col.data());
          for (std::size_t o = 0; o < W_; ++o) psi[(c * W_ + o) * W_ + j] = col[o];
        }
        for (std::size_t o = 0; o < W_; ++o) {
          double t = 0.0;
          for (std::size_t j = 0; j < W_; ++j) t += std::abs(psi[(c * W_ + o) * W_ + j]);
          P[(y * n_ + c) * W_ + o] = t;
        }
      }
    });
    std::vector<double> best(latV_.size(), 0.0);
    parallel_for(latV_.size(), [&](std::size_t x) {
      // Path nodes of x with their per-segment weights.
      std::vector<std::pair<std::size_t, std::pair<std::size_t, double>>> path;
      for (std::size_t c = 0; c < n_; ++c) {
        const std::size_t m = latV_.axis(c).count, xc = latV_.coord_index(x, c);
        if (xc == w0_[c]) continue;
        std::size_t base = 0;
        for (std::size_t d = 0; d < n_; ++d) {
          if (d < c) base += latV_.coord_index(x, d) * latV_.stride(d);
          if (d > c) base += w0_[d] * latV_.stride(d);
        }
        for (std::size_t k = 0; k < m; ++k) {
          const double a = alpha[c][xc * m + k];
          if (a != 0.0) path.push_back({base + k * latV_.stride(c), {c, a}});
        }
      }
      std::sort(path.begin(), path.end());
      // Nodes on one segment only contribute |alpha| g(w) sum_j |Psi|; nodes
      // shared by two segments keep the sum inside the modulus.
      std::vector<double> G(n_, 0.0);
      std::vector<std::pair<std::size_t, std::vector<std::pair<std::size_t, double>>>> shared;
      for (std::size_t i = 0; i < path.size();) {
        std::size_t e = i;
        while (e < path.size() && path[e].first == path[i].first) ++e;
        if (e - i == 1) {
          G[path[i].second.first] += std::abs(path[i].second.second) * g[path[i].first];
        } else {
          shared.push_back({path[i].first, {}});
          for (std::size_t q = i; q < e; ++q) shared.back().second.push_back(path[q].second);
        }
        i = e;
      }
      std::vector<cplx> acc(W_);
      for (std::size_t k = 0; k <= tail_; ++k) {
        const std::size_t y = to_U(x, k);
        const cplx* psi = Psi.data() + y * blk;
        for (std::size_t o = 0; o < W_; ++o) {
          double row = 0.0;
          for (std::size_t c = 0; c < n_; ++c) row += G[c] * P[(y * n_ + c) * W_ + o];
          for (const auto& [w, parts] : shared) {
            std::fill(acc.begin(), acc.end(), cplx{});
            for (const auto& [c, a] : parts) {
              for (std::size_t j = 0; j < W_; ++j) acc[j] += a * psi[(c * W_ + o) * W_ + j];
            }
            double t = 0.0;
            for (const auto& v : acc) t += std::abs(v);
            row += g[w] * t;
          }
          best[x] = std::max(best[x], row);
        }
      }
    });
    return *std::max_element(best.begin(), best.end());
  }

  /// F + A K (or A K alone) over V^2, hypercomplex at the operator level.
  [[nodiscard]] GridField field_on_V2(const std::vector<cplx>& K, bool add_F = true) const {
    const Prepared pr = prepare(K);
    GridField out = GridField::hypercomplex(grid_, level_, Arity::XY);
    const std::size_t NV = latV_.size();
    parallel_for(NV, [&](std::size_t x) {
      const auto px = latV_.point(x);
      for (std::size_t y = 0; y < NV; ++y) {
        cplx* dst = out.at(x * NV + y);
        value(pr, x, to_U(y), dst);
        if (add_F) dst[0] += midpoint_F(cfg_.kappa, px, latV_.point(y));
      }
    });
    return out;
  }

  /// Tail-truncation bound for the state K: sup |E K| e^{decay t} e^{-decay R} / decay.
  [[nodiscard]] double tail_bound(const std::vector<cplx>& K) const {
    if (zero_) return 0.0;
    const double h = grid_.space[axis_].h();
    double C = 0.0;
    for (std::size_t x = 0; x < latV_.size(); ++x) {
      for (std::size_t k = 0; k <= tail_; ++k) {
        const double e = midpoint_F(cfg_.kappa, latU_.point(to_U(x, k)), std::vector<double>(n_, 0.0));
        double q = 0.0;
        for (std::size_t j = 0; j < W_; ++j) q += std::norm(K[(x * (tail_ + 1) + k) * W_ + j]);
        C = std::max(C, e * std::sqrt(q) * std::exp(decay_ * static_cast<double>(k) * h));
      }
    }
    return C * std::exp(-decay_ * R_) / decay_ * factor_[axis_];
  }

  [[nodiscard]] bool zero_p() const { return zero_; }

private:
  [[nodiscard]] bool uses_p2() const {
    if (zero_) return false;
    if (cfg_.variant == KernelVariant::Quaternion) return cfg_.p2_h.norm_sq() != 0.0;
    return cfg_.p2 != cplx{};
  }

  KernelConfig cfg_;
  Grid grid_;
  std::size_t n_ = 0;
  unsigned level_ = 2;
  std::size_t W_ = 4;
  DiracSpec spec_;
  Lattice latV_, latU_;
  std::vector<std::size_t> w0_;
  std::vector<std::size_t> gen_;
  std::vector<double> factor_;
  std::size_t axis_ = 0, tail_ = 0;
  double R_ = 0.0, decay_ = 0.0;
  bool zero_ = false;
  std::vector<double> ray_w_;
  std::vector<cplx> Ehat_;
  std::optional<PolylineTables> segEhat_;
  std::vector<cplx> p1r_, p2r_;
};

/// A K over V^2 for a kernel given as a function of (x, y).
inline GridField apply_A(const KernelOperator& op,
                         const std::function<void(std::span<const double>, std::span<const double>, cplx*)>& K) {
  return op.field_on_V2(op.sample_state(K), false);
}

/// Upper bound on the norm of A (the induced max-norm of the discretized operator).
inline double estimate_A_norm(const KernelOperator& op) { return op.induced_norm(); }

/// Spectral radius of A by power iteration from F: the geometric mean of the
/// growth factors over the last `window` of `iters` steps.
inline double spectral_radius(const KernelOperator& op, unsigned iters = 60, unsigned window = 20) {
  if (op.zero_p()) return 0.0;
  auto v = op.F_state();
  double nv = op.norm(v);
  double log_sum = 0.0;
  unsigned counted = 0;
  for (unsigned it = 0; it < iters; ++it) {
    for (auto& z : v) z /= nv;
    v = op.apply(v);
    nv = op.norm(v);
    if (!(nv > 0.0)) return 0.0;
    if (!std::isfinite(nv)) throw NumericalError("power iteration overflowed");
    if (it + window >= iters) {
      log_sum += std::log(nv);
      ++counted;
    }
  }
  return std::exp(log_sum / counted);
}

struct KernelSolution {
  KernelOperator op;
  std::vector<cplx> state;  // K on the ray set
  PicardTrace trace;

  [[nodiscard]] GridField K() const { return op.field_on_V2(state); }
  [[nodiscard]] GridField F() const { return build_F(op.config(), op.grid()); }
};

/// Picard iteration K_{j+1} = F + A K_j from K_0 = F.
inline KernelSolution solve_K(const KernelConfig& cfg, const Grid& grid) {
  (void)build_F(cfg, grid);  // characteristic gate
  KernelSolution sol{KernelOperator(cfg, grid), {}, {}};
  const KernelOperator& op = sol.op;
  PicardTrace& tr = sol.trace;
  tr.norm_estimate = estimate_A_norm(op);
  if (tr.norm_estimate >= 1.0 && !cfg.force) {
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "norm estimate %.4g >= 1: Picard iteration refused (reduce |p1| + |p2| or force)", tr.norm_estimate);
    throw NumericalError(buf);
  }
  const auto F = op.F_state();
  auto K = F;
  unsigned growing = 0;
  for (unsigned it = 0; it < cfg.max_iter; ++it) {
    auto next = op.apply(K);
    for (std::size_t i = 0; i < next.size(); ++i) next[i] += F[i];
    std::vector<cplx> d(next.size());
    for (std::size_t i = 0; i < next.size(); ++i) d[i] = next[i] - K[i];
    const double diff = op.norm(d);
    if (!std::isfinite(diff)) throw NumericalError("Picard iteration produced a non-finite kernel");
    if (!tr.diffs.empty()) {
      const double ratio = tr.diffs.back() > 0.0 ? diff / tr.diffs.back() : 0.0;
      tr.ratios.push_back(ratio);
      growing = ratio >= 1.0 ? growing + 1 : 0;
    }
    tr.diffs.push_back(diff);
    K = std::move(next);
    tr.iterations = it + 1;
    if (diff < cfg.tol) {
      tr.converged = true;
      break;
    }
    if (growing >= 3) {
      tr.diverged = true;
      break;
    }
  }
  auto AK = op.apply(K);
  std::vector<cplx> res(K.size());
  for (std::size_t i = 0; i < K.size(); ++i) res[i] = K[i] - F[i] - AK[i];
  tr.residual = op.norm(res);
  sol.state = std::move(K);
  return sol;
}

// ---------------------------------------------------------------------------
// Residuals

struct FResiduals {
  double s1 = 0.0;  // max |(sigma_x^2 - sigma_y^2) F|
  double s2 = 0.0;  // max |S_{2,a} F|
};

/// Discrete S_1 F and S_2 F for the analytic F at the given points of R^{2n},
/// with centred order-4 differences of spacing h and the sigma of the kernel.
inline FResiduals f_residuals(const KernelConfig& cfg, double h, const std::vector<std::vector<double>>& points) {
  const std::size_t n = cfg.kappa.size();
  cfg.validate(n);
  const DiracSpec spec = DiracSpec::half_laplacian(cfg.resolved_level(n), n);
  const Sampler F{1, [kappa = cfg.kappa, n](std::span<const double> p, cplx* out) {
                    out[0] = midpoint_F(kappa, p.first(n), p.subspan(n));
                  }};
  auto sq = [&](const Sampler& f, std::size_t first) {
    return sampler_dirac(sampler_dirac(f, spec, first, h), spec, first, h);
  };
  const Sampler xx = sq(F, 0), yy = sq(F, n);
  const Sampler S1 = sampler_sum({{1.0, xx}, {-1.0, yy}});
  const Sampler P = sampler_sum({{1.0, xx}, {1.0, yy}});
  const Sampler PP = sampler_sum({{1.0, sq(P, 0)}, {1.0, sq(P, n)}});
  FResiduals r;
  const std::size_t W = P.width;
  for (const auto& p : points) {
    if (p.size() != 2 * n) throw ValidationError("residual points live in R^{2n}");
    const auto s1 = S1.at(p), pp = PP.at(p), pf = P.at(p);
    cplx f;
    F(p, &f);
    double n1 = 0.0, n2 = 0.0;
    for (std::size_t j = 0; j < W; ++j) {
      n1 += std::norm(s1[j]);
      const cplx v = cfg.a[0] * pp[j] + cfg.a[1] * pf[j] + (j == 0 ? cfg.a[2] * f : cplx{});
      n2 += std::norm(v);
    }
    r.s1 = std::max(r.s1, std::sqrt(n1));
    r.s2 = std::max(r.s2, std::sqrt(n2));
  }
  return r;
}

/// Diagonal samples x = y of the pieces of the auxiliary PDE, at V nodes at
/// least `collar` nodes from the boundary. Sigma = sigma_x^2 + sigma_y^2 is
/// applied as -(Delta_x + Delta_y)/2, exact for the alternative algebras
/// (level <= 3) used here. Each vector holds nodes.size() * width values.
struct DiagonalTerms {
  std::size_t width = 0;
  std::vector<std::size_t> nodes;
  std::vector<cplx> K;    // K(x, x)
  std::vector<cplx> SK;   // Sigma K
  std::vector<cplx> SSK;  // Sigma^2 K
  std::vector<cplx> K2;   // K^2
  std::vector<cplx> DK2;  // (sigma_x + sigma_y)(K^2), or (sigma_x + sigma_y)(K^2 q1) in the quaternion variant
};

inline DiagonalTerms diagonal_terms(const KernelSolution& sol, std::size_t collar) {
  const KernelOperator& op = sol.op;
  const KernelConfig& cfg = op.config();
  const std::size_t n = op.grid().dim();
  const unsigned level = op.level();
  const std::size_t W = op.width();
  const Lattice& latV = op.lattice_V();
  const auto pr = std::make_shared<KernelOperator::Prepared>(op.prepare(sol.state));
  std::vector<double> h(n);
  for (std::size_t c = 0; c < n; ++c) h[c] = op.grid().space[c].h();
  for (std::size_t c = 1; c < n; ++c) {
    if (std::abs(h[c] - h[0]) > 1e-12 * h[0]) throw ValidationError("diagonal residuals need equal spacing on all axes");
  }
  if (level > 3) throw ValidationError("diagonal residuals use sigma^2 = -Laplacian/2, which needs level <= 3");

  auto node_of = [&](std::span<const double> p, bool in_U) {
    std::size_t node = 0;
    for (std::size_t c = 0; c < n; ++c) {
      const Axis& ax = op.grid().space[c];
      const long i = std::lround((p[c] - ax.lo) / ax.h());
      if (i < 0 || static_cast<std::size_t>(i) >= ax.count) throw ValidationError("residual stencil left V");
      node += static_cast<std::size_t>(i) * (in_U ? op.lattice_U().stride(c) : latV.stride(c));
    }
    return node;
  };
  const Sampler K{W, [&, pr](std::span<const double> p, cplx* out) {
                    op.value(*pr, node_of(p.first(n), false), node_of(p.subspan(n), true), out);
                    out[0] += midpoint_F(cfg.kappa, p.first(n), p.subspan(n));
                  }};
  std::vector<cplx> q1(W, cplx{});
  q1[0] = 1.0;
  if (cfg.variant == KernelVariant::Quaternion) {
    q1[0] = 0.0;
    for (std::size_t j = 0; j < 4; ++j) q1[j] = -2.0 * cfg.a[0] * cfg.p1_h[j];
  }
  const Sampler K2q{W, [K, q1, level, W](std::span<const double> p, cplx* out) {
                      const auto v = K.at(p);
                      std::vector<cplx> sq(W);
                      cd_mul_raw(level, v.data(), v.data(), sq.data());
                      cd_mul_raw(level, sq.data(), q1.data(), out);
                    }};
  const double hh = h[0];
  auto half_lap = [&](const Sampler& f) {
    return sampler_sum({{-0.5, sampler_laplace(f, 0, n, hh)}, {-0.5, sampler_laplace(f, n, n, hh)}});
  };
  const Sampler P = half_lap(K);
  const Sampler PP = half_lap(P);
  const DiracSpec& spec = op.dirac();
  const Sampler D = sampler_sum({{1.0, sampler_dirac(K2q, spec, 0, hh)}, {1.0, sampler_dirac(K2q, spec, n, hh)}});

  DiagonalTerms out;
  out.width = W;
  for (std::size_t x = 0; x < latV.size(); ++x) {
    if (latV.boundary_distance(x) >= collar) out.nodes.push_back(x);
  }
  if (out.nodes.empty()) throw ValidationError("grid too coarse for the residual collar");
  const std::size_t N = out.nodes.size();
  for (auto* v : {&out.K, &out.SK, &out.SSK, &out.K2, &out.DK2}) v->assign(N * W, cplx{});
  parallel_for(N, [&](std::size_t i) {
    const auto px = latV.point(out.nodes[i]);
    std::vector<double> p(px);
    p.insert(p.end(), px.begin(), px.end());
    const auto kv = K.at(p), pf = P.at(p), pp = PP.at(p), d = D.at(p);
    std::copy(kv.begin(), kv.end(), out.K.begin() + static_cast<std::ptrdiff_t>(i * W));
    std::copy(pf.begin(), pf.end(), out.SK.begin() + static_cast<std::ptrdiff_t>(i * W));
    std::copy(pp.begin(), pp.end(), out.SSK.begin() + static_cast<std::ptrdiff_t>(i * W));
    std::copy(d.begin(), d.end(), out.DK2.begin() + static_cast<std::ptrdiff_t>(i * W));
    cd_mul_raw(level, kv.data(), kv.data(), out.K2.data() + i * W);
  });
  return out;
}

/// Left side of the auxiliary PDE at the diagonal nodes of `dt`, nodes.size() * width values.
inline std::vector<cplx> aux_pointwise(const KernelConfig& cfg, unsigned level, const DiagonalTerms& dt) {
  const std::size_t W = dt.width;
  const std::size_t N = dt.nodes.size();
  std::vector<cplx> out(N * W);
  parallel_for(N, [&](std::size_t i) {
    const cplx* kv = dt.K.data() + i * W;
    const cplx* pf = dt.SK.data() + i * W;
    const cplx* pp = dt.SSK.data() + i * W;
    const cplx* k2 = dt.K2.data() + i * W;
    const cplx* nl = dt.DK2.data() + i * W;
    cplx* res = out.data() + i * W;
    for (std::size_t j = 0; j < W; ++j) res[j] = cfg.a[0] * pp[j] + cfg.a[1] * pf[j] + cfg.a[2] * kv[j];
    if (cfg.variant == KernelVariant::ComplexScalar) {
      ComplexCd z(level);
      for (std::size_t j = 0; j < W; ++j) z.set_coeff(j, nl[j]);
      res[0] += cfg.q1() * pi_project(1, z);
      for (std::size_t j = 0; j < W; ++j) res[j] += cfg.q2() * k2[j];
    } else {
      std::vector<cplx> q2(W, cplx{}), t(W);
      for (std::size_t j = 0; j < 4; ++j) q2[j] = -2.0 * cfg.a[0] * cfg.p2_h[j];
      cd_mul_raw(level, k2, q2.data(), t.data());
      for (std::size_t j = 0; j < W; ++j) res[j] += nl[j] + t[j];
    }
  });
  return out;
}

struct AuxResidual {
  double residual = 0.0;       // max over diagonal nodes of |kernel equation left side|
  double diag_511 = 0.0;       // |-2 F(x,y) K(x,x)| formula vs field lookup, max difference
  std::size_t points = 0;
};

/// Left side of the auxiliary PDE on diagonal nodes x = y of V at least
/// `collar` nodes from the boundary, with K evaluated as F + A K at any pair.
inline AuxResidual aux_residual(const KernelSolution& sol, std::size_t collar = 9) {
  const KernelOperator& op = sol.op;
  const KernelConfig& cfg = op.config();
  const DiagonalTerms dt = diagonal_terms(sol, collar);
  const std::size_t W = dt.width;
  const std::size_t N = dt.nodes.size();
  const Lattice& latV = op.lattice_V();
  const auto res = aux_pointwise(cfg, op.level(), dt);
  std::vector<double> vals(N, 0.0), diag(N, 0.0);
  const GridField Kfield = sol.K();
  const std::size_t NV = latV.size();
  parallel_for(N, [&](std::size_t i) {
    double q = 0.0;
    for (std::size_t j = 0; j < W; ++j) q += std::norm(res[i * W + j]);
    vals[i] = std::sqrt(q);
    // -2 F(x,y) K(x,x) at y = x: analytic F times sampled K versus the stored fields.
    const cplx* kv = dt.K.data() + i * W;
    const auto px = latV.point(dt.nodes[i]);
    const cplx Fxy = midpoint_F(cfg.kappa, px, px);
    const cplx* stored = Kfield.at(dt.nodes[i] * NV + dt.nodes[i]);
    double d = 0.0;
    for (std::size_t j = 0; j < W; ++j) d = std::max(d, std::abs(-2.0 * Fxy * kv[j] - (-2.0 * Fxy * stored[j])));
    diag[i] = d;
  });
  AuxResidual out;
  out.residual = *std::max_element(vals.begin(), vals.end());
  out.diag_511 = *std::max_element(diag.begin(), diag.end());
  out.points = N;
  return out;
}

}  // namespace sbw
