#pragma once
// Grids, finite differences, Dirac-type operators, line integrals and
// Sobolev norms on rectangular lattices.
//
// Values are stored as `width` complex numbers per node: width 1 for complex
// scalars, 2^level for elements of A_{level,C} (coefficient j multiplies i_j).

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sbw/algebra.hpp"
#include "sbw/errors.hpp"
#include "sbw/parallel.hpp"

namespace sbw {

using cplx = std::complex<double>;

struct Axis {
  double lo = 0.0;
  double hi = 1.0;
  std::size_t count = 2;

  [[nodiscard]] double h() const { return (hi - lo) / static_cast<double>(count - 1); }
  [[nodiscard]] double node(std::size_t i) const {
    // Endpoint is exact so that refined grids share node coordinates bit-for-bit.
    return i + 1 == count ? hi : lo + static_cast<double>(i) * h();
  }
  void validate(const std::string& what) const {
    if (count < 2 || !(hi > lo)) {
      throw ValidationError(what + ": axis needs hi > lo and at least 2 nodes");
    }
  }
};

/// Box V_1 in R^n plus an optional time axis [0, T].
struct Grid {
  std::vector<Axis> space;
  std::optional<Axis> time;

  [[nodiscard]] std::size_t dim() const { return space.size(); }

  static Grid cube(std::size_t n, double lo, double hi, std::size_t count) {
    Grid g;
    g.space.assign(n, Axis{lo, hi, count});
    return g;
  }

  void validate() const {
    if (space.empty()) throw ValidationError("grid needs at least one spatial axis");
    for (const auto& a : space) a.validate("grid");
    if (time) time->validate("time axis");
  }

  /// Same box with (count - 1) * factor + 1 nodes on every axis.
  [[nodiscard]] Grid refined(std::size_t factor) const {
    Grid g = *this;
    for (auto& a : g.space) a.count = (a.count - 1) * factor + 1;
    if (g.time) g.time->count = (g.time->count - 1) * factor + 1;
    return g;
  }
};

enum class ValueKind { ComplexScalar = 0, Hypercomplex = 1 };

/// Which arguments a field depends on: f(x), f(x, y) or f(t, x, y).
enum class Arity { X = 1, XY = 2, TXY = 3 };

/// Argument slot selector for operators acting on one variable group.
enum class Slot { T, X, Y };

/// Row-major index arithmetic over a list of axes (last axis fastest).
class Lattice {
public:
  Lattice() = default;
  explicit Lattice(std::vector<Axis> axes) : axes_(std::move(axes)) {
    strides_.assign(axes_.size(), 1);
    total_ = 1;
    for (std::size_t a = axes_.size(); a-- > 0;) {
      strides_[a] = total_;
      total_ *= axes_[a].count;
    }
  }

  [[nodiscard]] std::size_t rank() const { return axes_.size(); }
  [[nodiscard]] std::size_t size() const { return total_; }
  [[nodiscard]] const Axis& axis(std::size_t a) const { return axes_[a]; }
  [[nodiscard]] const std::vector<Axis>& axes() const { return axes_; }
  [[nodiscard]] std::size_t stride(std::size_t a) const { return strides_[a]; }

  [[nodiscard]] std::size_t coord_index(std::size_t flat, std::size_t a) const {
    return (flat / strides_[a]) % axes_[a].count;
  }
  [[nodiscard]] std::vector<std::size_t> unflatten(std::size_t flat) const {
    std::vector<std::size_t> idx(rank());
    for (std::size_t a = 0; a < rank(); ++a) idx[a] = coord_index(flat, a);
    return idx;
  }
  [[nodiscard]] std::size_t flatten(std::span<const std::size_t> idx) const {
    std::size_t f = 0;
    for (std::size_t a = 0; a < rank(); ++a) f += idx[a] * strides_[a];
    return f;
  }
  [[nodiscard]] std::vector<double> point(std::size_t flat) const {
    std::vector<double> p(rank());
    for (std::size_t a = 0; a < rank(); ++a) p[a] = axes_[a].node(coord_index(flat, a));
    return p;
  }
  /// Distance in cells to the nearest face of the box.
  [[nodiscard]] std::size_t boundary_distance(std::size_t flat) const {
    std::size_t d = ~std::size_t{0};
    for (std::size_t a = 0; a < rank(); ++a) {
      const std::size_t i = coord_index(flat, a);
      d = std::min({d, i, axes_[a].count - 1 - i});
    }
    return d;
  }

private:
  std::vector<Axis> axes_;
  std::vector<std::size_t> strides_;
  std::size_t total_ = 0;
};

/// Sampled complex-scalar or A_{r,C}-valued function on a grid.
class GridField {
public:
  GridField() = default;
  GridField(Grid grid, Arity arity, ValueKind kind, unsigned level)
      : grid_(std::move(grid)), arity_(arity), kind_(kind), level_(level) {
    grid_.validate();
    if (arity_ == Arity::TXY && !grid_.time) {
      throw ValidationError("a field of (t, x, y) needs a time axis");
    }
    detail::check_level(level_);
    std::vector<Axis> axes;
    if (arity_ == Arity::TXY) axes.push_back(*grid_.time);
    const int copies = arity_ == Arity::X ? 1 : 2;
    for (int c = 0; c < copies; ++c) axes.insert(axes.end(), grid_.space.begin(), grid_.space.end());
    lattice_ = Lattice(std::move(axes));
    data_.assign(lattice_.size() * width(), cplx{});
  }

  static GridField scalar(const Grid& grid, Arity arity = Arity::X) {
    return {grid, arity, ValueKind::ComplexScalar, 0};
  }
  static GridField hypercomplex(const Grid& grid, unsigned level, Arity arity = Arity::X) {
    return {grid, arity, ValueKind::Hypercomplex, level};
  }

  [[nodiscard]] const Grid& grid() const { return grid_; }
  [[nodiscard]] Arity arity() const { return arity_; }
  [[nodiscard]] ValueKind kind() const { return kind_; }
  [[nodiscard]] unsigned level() const { return level_; }
  [[nodiscard]] std::size_t width() const {
    return kind_ == ValueKind::ComplexScalar ? 1 : (std::size_t{1} << level_);
  }
  [[nodiscard]] const Lattice& lattice() const { return lattice_; }
  [[nodiscard]] std::size_t nodes() const { return lattice_.size(); }
  [[nodiscard]] std::vector<cplx>& data() { return data_; }
  [[nodiscard]] const std::vector<cplx>& data() const { return data_; }
  [[nodiscard]] cplx* at(std::size_t node) { return data_.data() + node * width(); }
  [[nodiscard]] const cplx* at(std::size_t node) const { return data_.data() + node * width(); }

  /// First lattice axis belonging to a slot.
  [[nodiscard]] std::size_t slot_offset(Slot s) const {
    const std::size_t t = arity_ == Arity::TXY ? 1 : 0;
    switch (s) {
      case Slot::T:
        if (arity_ != Arity::TXY) throw ValidationError("field has no time argument");
        return 0;
      case Slot::X:
        return t;
      case Slot::Y:
        if (arity_ == Arity::X) throw ValidationError("field has no second spatial argument");
        return t + grid_.dim();
    }
    return 0;
  }

  [[nodiscard]] ComplexCd value(std::size_t node) const {
    ComplexCd z(kind_ == ValueKind::ComplexScalar ? 0u : level_);
    for (std::size_t j = 0; j < width(); ++j) z.set_coeff(j, at(node)[j]);
    return z;
  }

  /// Fill from f(point, out) where out has width() entries.
  template <class Fn>
  void fill(Fn&& f) {
    parallel_for(nodes(), [&](std::size_t i) {
      const auto p = lattice_.point(i);
      f(std::span<const double>(p), at(i));
    });
  }

  /// Same field promoted to A_{level,C} values (scalars land on i_0).
  [[nodiscard]] GridField as_hypercomplex(unsigned level) const {
    if (kind_ == ValueKind::Hypercomplex) {
      if (level == level_) return *this;
      if (level < level_) throw ValidationError("cannot lower the algebra level of a field");
    }
    GridField out(grid_, arity_, ValueKind::Hypercomplex, level);
    const std::size_t w = width();
    for (std::size_t i = 0; i < nodes(); ++i) {
      for (std::size_t j = 0; j < w; ++j) out.at(i)[j] = at(i)[j];
    }
    return out;
  }

  void require_same_shape(const GridField& o) const {
    if (o.nodes() != nodes() || o.width() != width() || o.arity_ != arity_) {
      throw ValidationError("grid fields have different shapes");
    }
  }

  GridField& operator+=(const GridField& o) {
    require_same_shape(o);
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += o.data_[k];
    return *this;
  }
  GridField& operator-=(const GridField& o) {
    require_same_shape(o);
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] -= o.data_[k];
    return *this;
  }
  GridField& operator*=(cplx s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  [[nodiscard]] GridField zeros_like() const {
    GridField out = *this;
    std::fill(out.data_.begin(), out.data_.end(), cplx{});
    return out;
  }

  /// Max over nodes at least `collar` cells from the boundary of the per-node coefficient max.
  [[nodiscard]] double max_norm(std::size_t collar = 0) const {
    double m = 0.0;
    for (std::size_t i = 0; i < nodes(); ++i) {
      if (collar > 0 && lattice_.boundary_distance(i) < collar) continue;
      for (std::size_t j = 0; j < width(); ++j) m = std::max(m, std::abs(at(i)[j]));
    }
    return m;
  }

private:
  Grid grid_;
  Arity arity_ = Arity::X;
  ValueKind kind_ = ValueKind::ComplexScalar;
  unsigned level_ = 0;
  Lattice lattice_;
  std::vector<cplx> data_;
};

// ---------------------------------------------------------------------------
// Finite-difference weights

/// Fornberg's recursion: weights w[k] with f^(d)(x0) ~ sum_k w[k] f(nodes[k]).
inline std::vector<double> fd_weights(double x0, std::span<const double> nodes, unsigned d) {
  const std::size_t n = nodes.size();
  if (n <= d) throw ValidationError("stencil has too few nodes for the derivative order");
  std::vector<std::vector<double>> c(n, std::vector<double>(d + 1, 0.0));
  double c1 = 1.0;
  double c4 = nodes[0] - x0;
  c[0][0] = 1.0;
  for (std::size_t i = 1; i < n; ++i) {
    const std::size_t mn = std::min<std::size_t>(i, d);
    double c2 = 1.0;
    const double c5 = c4;
    c4 = nodes[i] - x0;
    for (std::size_t j = 0; j < i; ++j) {
      const double c3 = nodes[i] - nodes[j];
      c2 *= c3;
      if (j == i - 1) {
        for (std::size_t k = mn; k >= 1; --k) {
          c[i][k] = c1 * (static_cast<double>(k) * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
        }
        c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
      }
      for (std::size_t k = mn; k >= 1; --k) {
        c[j][k] = (c4 * c[j][k] - static_cast<double>(k) * c[j][k - 1]) / c3;
      }
      c[j][0] = c4 * c[j][0] / c3;
    }
    c1 = c2;
  }
  std::vector<double> w(n);
  for (std::size_t k = 0; k < n; ++k) w[k] = c[k][d];
  return w;
}

/// Weights in units of the spacing (multiply by h^-d). Interior nodes use a
/// centred stencil of order 4. Near the ends a one-sided window is used whose
/// weights reproduce the centred stencil's leading error term, so the
/// truncation error is a smooth multiple of h^4 right up to the boundary and
/// composed operators (sigma applied twice, mixed derivatives) keep order 4.
class AxisStencil {
public:
  struct Row {
    std::ptrdiff_t first;  // offset of the first node relative to the target
    std::vector<double> w;
  };

  AxisStencil(unsigned d, std::size_t count) : d_(d), count_(count) {
    radius_ = (d + 1) / 2 + 1;
    std::vector<double> nodes;
    for (std::ptrdiff_t k = -static_cast<std::ptrdiff_t>(radius_);
         k <= static_cast<std::ptrdiff_t>(radius_); ++k) {
      nodes.push_back(static_cast<double>(k));
    }
    central_ = {-static_cast<std::ptrdiff_t>(radius_), fd_weights(0.0, nodes, d)};
    // Leading error: central stencil minus d-th derivative is E h^{p-d} f^(p).
    unsigned p = d + 1;
    double E = 0.0;
    for (;; ++p) {
      double moment = 0.0, fact = 1.0;
      for (unsigned q = 2; q <= p; ++q) fact *= q;
      for (std::size_t k = 0; k < nodes.size(); ++k) moment += central_.w[k] * std::pow(nodes[k], p);
      E = moment / fact;
      if (std::abs(E) > 1e-12) break;
    }
    const std::size_t window = p + 2;
    const std::size_t need = std::max(window, 2 * radius_ + 1);
    if (count < need) {
      throw ValidationError("grid too coarse: derivative of order " + std::to_string(d) +
                            " needs at least " + std::to_string(need) + " nodes per axis, got " +
                            std::to_string(count));
    }
    std::vector<double> win(window);
    std::iota(win.begin(), win.end(), 0.0);
    auto boundary_row = [&](double x0) {
      auto w = fd_weights(x0, win, d);
      const auto wp = fd_weights(x0, win, p);
      for (std::size_t k = 0; k < window; ++k) w[k] += E * wp[k];
      return w;
    };
    for (std::size_t i = 0; i < radius_; ++i) {
      left_.push_back({-static_cast<std::ptrdiff_t>(i), boundary_row(static_cast<double>(i))});
      right_.push_back({-static_cast<std::ptrdiff_t>(window - 1 - i),
                        boundary_row(static_cast<double>(window - 1 - i))});
    }
  }

  [[nodiscard]] const Row& row(std::size_t i) const {
    if (i < radius_) return left_[i];
    if (i + radius_ >= count_) return right_[count_ - 1 - i];
    return central_;
  }
  [[nodiscard]] const Row& central() const { return central_; }
  [[nodiscard]] std::size_t radius() const { return radius_; }
  [[nodiscard]] unsigned order() const { return d_; }

private:
  unsigned d_;
  std::size_t count_;
  std::size_t radius_ = 0;
  Row central_;
  std::vector<Row> left_, right_;
};

inline const AxisStencil& axis_stencil(unsigned d, std::size_t count) {
  static std::mutex mu;
  static std::map<std::pair<unsigned, std::size_t>, std::unique_ptr<AxisStencil>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto& slot = cache[{d, count}];
  if (!slot) slot = std::make_unique<AxisStencil>(d, count);
  return *slot;
}

/// d-th derivative of a field along lattice axis `axis`.
inline GridField derivative(const GridField& f, std::size_t axis, unsigned d) {
  if (d == 0) return f;
  const Lattice& lat = f.lattice();
  const AxisStencil& st = axis_stencil(d, lat.axis(axis).count);
  const double scale = std::pow(lat.axis(axis).h(), -static_cast<double>(d));
  const std::size_t w = f.width();
  const std::size_t stride = lat.stride(axis);
  GridField out = f.zeros_like();
  parallel_for(f.nodes(), [&](std::size_t node) {
    const std::size_t i = lat.coord_index(node, axis);
    const auto& row = st.row(i);
    cplx* o = out.at(node);
    for (std::size_t k = 0; k < row.w.size(); ++k) {
      const std::ptrdiff_t off = row.first + static_cast<std::ptrdiff_t>(k);
      const cplx* src = f.at(static_cast<std::size_t>(static_cast<std::ptrdiff_t>(node) +
                                                      off * static_cast<std::ptrdiff_t>(stride)));
      const double wk = row.w[k] * scale;
      for (std::size_t j = 0; j < w; ++j) o[j] += wk * src[j];
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Dirac-type operators

/// sigma f = sum_j i_j^* (d f / d x_{xi(j)}) psi_j. Coordinates of V are
/// numbered 1..n (x = x_1 i_1 + ... + x_n i_n), so xi(j) = k acts on spatial
/// axis k - 1.
struct DiracSpec {
  unsigned level = 2;
  std::vector<double> psi;
  std::vector<std::size_t> xi;

  /// psi_j = weight for j = 1..n, zero otherwise; xi = identity.
  static DiracSpec standard(unsigned level, std::size_t n, double weight) {
    DiracSpec s;
    s.level = level;
    const std::size_t dim = std::size_t{1} << level;
    if (n >= dim) {
      throw ValidationError("algebra level " + std::to_string(level) + " too small for n = " +
                            std::to_string(n));
    }
    s.psi.assign(dim, 0.0);
    s.xi.resize(dim);
    for (std::size_t j = 0; j < dim; ++j) s.xi[j] = j;
    for (std::size_t j = 1; j <= n; ++j) s.psi[j] = weight;
    return s;
  }
  /// The convenient choice psi_j = 2^{-1/2}, for which sigma^2 = -Laplacian / 2.
  static DiracSpec half_laplacian(unsigned level, std::size_t n) {
    return standard(level, n, 1.0 / std::sqrt(2.0));
  }

  void validate(std::size_t n) const {
    detail::check_level(level);
    const std::size_t dim = std::size_t{1} << level;
    if (psi.size() != dim || xi.size() != dim) {
      throw ValidationError("Dirac spec needs 2^level weights and index entries");
    }
    double s = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      s += psi[j] * psi[j];
      if (psi[j] != 0.0 && (xi[j] < 1 || xi[j] > n)) {
        throw ValidationError("Dirac spec: generator " + std::to_string(j) +
                              " differentiates a coordinate outside 1.." + std::to_string(n));
      }
    }
    if (!(s > 0.0)) throw ValidationError("Dirac spec: all weights vanish");
  }

  [[nodiscard]] std::size_t active_count() const {
    return static_cast<std::size_t>(std::count_if(psi.begin(), psi.end(), [](double p) { return p != 0.0; }));
  }

  /// Generator used on line-integral segments along coordinate k (1-based).
  [[nodiscard]] std::optional<std::size_t> generator_for(std::size_t k) const {
    for (std::size_t j = 0; j < psi.size(); ++j) {
      if (psi[j] != 0.0 && xi[j] == k) return j;
    }
    return std::nullopt;
  }
};

namespace detail {

// out += w * conj(i_j) * v on raw arrays of width 2^level.
inline void add_conj_basis_times(unsigned level, std::size_t j, const cplx* v, double w, cplx* out) {
  cd_basis_left_mul_acc(level, j, v, j == 0 ? w : -w, out);
}

}  // namespace detail

inline GridField dirac_apply(const GridField& f_in, const DiracSpec& spec, Slot slot = Slot::X) {
  const std::size_t n = f_in.grid().dim();
  spec.validate(n);
  if (f_in.kind() == ValueKind::Hypercomplex && f_in.level() != spec.level) {
    throw ValidationError("Dirac spec level differs from the field level");
  }
  const GridField f = f_in.as_hypercomplex(spec.level);
  const std::size_t offset = f.slot_offset(slot);
  GridField out = f.zeros_like();
  for (std::size_t j = 0; j < spec.psi.size(); ++j) {
    if (spec.psi[j] == 0.0) continue;
    const GridField d = derivative(f, offset + spec.xi[j] - 1, 1);
    parallel_for(f.nodes(), [&](std::size_t node) {
      detail::add_conj_basis_times(spec.level, j, d.at(node), spec.psi[j], out.at(node));
    });
  }
  return out;
}

inline GridField laplace_apply(const GridField& f, Slot slot = Slot::X) {
  const std::size_t offset = f.slot_offset(slot);
  GridField out = f.zeros_like();
  for (std::size_t k = 0; k < f.grid().dim(); ++k) out += derivative(f, offset + k, 2);
  return out;
}

// ---------------------------------------------------------------------------
// Pointwise samplers: finite differences of functions that can be evaluated
// anywhere (no boundary stencils needed).

struct Sampler {
  std::size_t width = 1;
  std::function<void(std::span<const double>, cplx*)> eval;

  void operator()(std::span<const double> p, cplx* out) const { eval(p, out); }
  [[nodiscard]] std::vector<cplx> at(std::span<const double> p) const {
    std::vector<cplx> v(width);
    eval(p, v.data());
    return v;
  }
};

/// Centred order-4 d-th derivative along coordinate `axis` with spacing h.
inline Sampler sampler_derivative(Sampler f, std::size_t axis, unsigned d, double h) {
  const std::size_t radius = (d + 1) / 2 + 1;
  std::vector<double> nodes;
  for (std::ptrdiff_t k = -static_cast<std::ptrdiff_t>(radius); k <= static_cast<std::ptrdiff_t>(radius); ++k) {
    nodes.push_back(static_cast<double>(k));
  }
  auto w = fd_weights(0.0, nodes, d);
  const double scale = std::pow(h, -static_cast<double>(d));
  const std::size_t width = f.width;
  return {width, [f = std::move(f), w, scale, radius, axis, h, width](std::span<const double> p, cplx* out) {
            std::vector<double> q(p.begin(), p.end());
            std::vector<cplx> tmp(width);
            for (std::size_t j = 0; j < width; ++j) out[j] = 0.0;
            for (std::size_t k = 0; k < w.size(); ++k) {
              if (w[k] == 0.0) continue;
              q[axis] = p[axis] + (static_cast<double>(k) - static_cast<double>(radius)) * h;
              f(q, tmp.data());
              for (std::size_t j = 0; j < width; ++j) out[j] += w[k] * scale * tmp[j];
            }
          }};
}

inline Sampler sampler_sum(std::vector<std::pair<cplx, Sampler>> terms) {
  const std::size_t width = terms.front().second.width;
  return {width, [terms = std::move(terms), width](std::span<const double> p, cplx* out) {
            std::vector<cplx> tmp(width);
            for (std::size_t j = 0; j < width; ++j) out[j] = 0.0;
            for (const auto& [c, s] : terms) {
              s(p, tmp.data());
              for (std::size_t j = 0; j < width; ++j) out[j] += c * tmp[j];
            }
          }};
}

/// Laplacian over the coordinates first_axis .. first_axis + n - 1.
inline Sampler sampler_laplace(const Sampler& f, std::size_t first_axis, std::size_t n, double h) {
  std::vector<std::pair<cplx, Sampler>> terms;
  for (std::size_t k = 0; k < n; ++k) terms.emplace_back(1.0, sampler_derivative(f, first_axis + k, 2, h));
  return sampler_sum(std::move(terms));
}

/// sigma applied to the variable group starting at first_axis; input of width
/// 1 or 2^level, output of width 2^level.
inline Sampler sampler_dirac(const Sampler& f, const DiracSpec& spec, std::size_t first_axis, double h) {
  const std::size_t width = std::size_t{1} << spec.level;
  if (f.width != 1 && f.width != width) throw ValidationError("sampler width does not match the Dirac level");
  std::vector<std::pair<std::size_t, Sampler>> parts;
  for (std::size_t j = 0; j < spec.psi.size(); ++j) {
    if (spec.psi[j] == 0.0) continue;
    parts.emplace_back(j, sampler_derivative(f, first_axis + spec.xi[j] - 1, 1, h));
  }
  return {width, [parts = std::move(parts), spec, width, in_w = f.width](std::span<const double> p, cplx* out) {
            std::vector<cplx> tmp(width);
            for (std::size_t j = 0; j < width; ++j) out[j] = 0.0;
            for (const auto& [g, s] : parts) {
              std::fill(tmp.begin(), tmp.end(), cplx{});
              s(p, tmp.data());
              if (in_w == 1) std::fill(tmp.begin() + 1, tmp.end(), cplx{});
              detail::add_conj_basis_times(spec.level, g, tmp.data(), spec.psi[g], out);
            }
          }};
}

// ---------------------------------------------------------------------------
// Quadrature along grid lines

/// Cumulative integral A_k = int_{x_0}^{x_k} f along one line of nodes with
/// spacing h, using cubic interpolation on each interval (order 4). Because
/// every partial integral is a difference of table entries, integrals over
/// adjacent ranges add up exactly and reversing a range flips the sign.
template <class Get, class Put>
void cumulative_line(std::size_t count, double h, std::size_t width, Get&& get, Put&& put) {
  std::vector<cplx> acc(width, cplx{});
  put(0, acc.data());
  auto f = [&](std::size_t k, std::size_t j) { return get(k)[j]; };
  for (std::size_t k = 0; k + 1 < count; ++k) {
    for (std::size_t j = 0; j < width; ++j) {
      cplx inc;
      if (count == 2) {
        inc = 0.5 * h * (f(0, j) + f(1, j));
      } else if (count == 3) {
        inc = k == 0 ? h / 12.0 * (5.0 * f(0, j) + 8.0 * f(1, j) - f(2, j))
                     : h / 12.0 * (-f(0, j) + 8.0 * f(1, j) + 5.0 * f(2, j));
      } else if (k == 0) {
        inc = h / 24.0 * (9.0 * f(0, j) + 19.0 * f(1, j) - 5.0 * f(2, j) + f(3, j));
      } else if (k + 2 == count) {
        inc = h / 24.0 * (f(k - 2, j) - 5.0 * f(k - 1, j) + 19.0 * f(k, j) + 9.0 * f(k + 1, j));
      } else {
        inc = h / 24.0 * (-f(k - 1, j) + 13.0 * f(k, j) + 13.0 * f(k + 1, j) - f(k + 2, j));
      }
      acc[j] += inc;
    }
    put(k + 1, acc.data());
  }
}

/// Quadrature weights of the same rule over a whole line (sum_k w_k f_k).
inline std::vector<double> line_weights(std::size_t count, double h) {
  std::vector<double> w(count, 0.0);
  std::vector<double> basis(count, 0.0);
  for (std::size_t m = 0; m < count; ++m) {
    std::fill(basis.begin(), basis.end(), 0.0);
    basis[m] = 1.0;
    cplx last;
    std::vector<cplx> tmp(1);
    cumulative_line(
        count, h, 1, [&](std::size_t k) { tmp[0] = basis[k]; return tmp.data(); },
        [&](std::size_t, const cplx* v) { last = v[0]; });
    w[m] = last.real();
  }
  return w;
}

/// Per-axis tables of the ascending-axis polyline integral from the node w0.
///
/// table(c) at node x holds int_{w0_c}^{x_c} f(x_1, .., x_{c-1}, s, w0_{c+1}, ..) ds,
/// the scalar (component-wise) integral over the segment of the path from w0 to
/// x that varies coordinate c. Segments are visited in increasing coordinate order.
class PolylineTables {
public:
  PolylineTables(const Lattice& lat, std::size_t width, const cplx* values,
                 std::vector<std::size_t> w0)
      : lat_(lat), width_(width), w0_(std::move(w0)) {
    if (w0_.size() != lat.rank()) throw ValidationError("base point rank does not match the grid");
    for (std::size_t a = 0; a < lat.rank(); ++a) {
      if (w0_[a] >= lat.axis(a).count) throw ValidationError("base point outside the grid");
    }
    tables_.resize(lat.rank());
    for (std::size_t c = 0; c < lat.rank(); ++c) build_axis(c, values);
  }

  [[nodiscard]] std::size_t rank() const { return lat_.rank(); }
  [[nodiscard]] const cplx* segment(std::size_t c, std::size_t node) const {
    return tables_[c].data() + node * width_;
  }
  [[nodiscard]] const std::vector<std::size_t>& base() const { return w0_; }

private:
  void build_axis(std::size_t c, const cplx* values) {
    const std::size_t count = lat_.axis(c).count;
    const double h = lat_.axis(c).h();
    const std::size_t stride = lat_.stride(c);
    // Full-line cumulative integrals, re-based at w0_c.
    std::vector<cplx> line(lat_.size() * width_);
    const std::size_t lines = lat_.size() / count;
    parallel_for(lines, [&](std::size_t li) {
      // li enumerates nodes with coordinate c equal to zero.
      const std::size_t outer = li / stride, inner = li % stride;
      const std::size_t start = outer * stride * count + inner;
      std::vector<cplx> cum(count * width_);
      cumulative_line(
          count, h, width_, [&](std::size_t k) { return values + (start + k * stride) * width_; },
          [&](std::size_t k, const cplx* v) { std::copy(v, v + width_, cum.data() + k * width_); });
      const cplx* origin = cum.data() + w0_[c] * width_;
      for (std::size_t k = 0; k < count; ++k) {
        cplx* dst = line.data() + (start + k * stride) * width_;
        for (std::size_t j = 0; j < width_; ++j) dst[j] = cum[k * width_ + j] - origin[j];
      }
    });
    // Gather from the projected node (coordinates after c reset to w0).
    auto& table = tables_[c];
    table.assign(lat_.size() * width_, cplx{});
    parallel_for(lat_.size(), [&](std::size_t node) {
      std::size_t src = node;
      for (std::size_t a = c + 1; a < lat_.rank(); ++a) {
        const std::size_t i = lat_.coord_index(node, a);
        src = src - i * lat_.stride(a) + w0_[a] * lat_.stride(a);
      }
      std::copy(line.data() + src * width_, line.data() + (src + 1) * width_, table.data() + node * width_);
    });
  }

  Lattice lat_;
  std::size_t width_;
  std::vector<std::size_t> w0_;
  std::vector<std::vector<cplx>> tables_;
};

/// Noncommutative line integral from w0 to every node of an f(x) field:
/// the segment along coordinate k contributes i_g psi_g^-1 N^-1 int f ds, with
/// g the generator assigned to coordinate k and N the number of active weights.
class LineIntegrator {
public:
  LineIntegrator(const GridField& f, const DiracSpec& spec, std::vector<std::size_t> w0)
      : spec_(spec),
        width_in_(f.width()),
        tables_(f.lattice(), f.width(), f.data().data(), std::move(w0)) {
    if (f.arity() != Arity::X) throw ValidationError("line integrals take fields of one point");
    spec.validate(f.grid().dim());
    if (f.kind() == ValueKind::Hypercomplex && f.level() != spec.level) {
      throw ValidationError("field level differs from the Dirac spec level");
    }
    for (std::size_t c = 0; c < f.grid().dim(); ++c) {
      auto g = spec.generator_for(c + 1);
      generators_.push_back(g);
      factors_.push_back(g ? 1.0 / (spec.psi[*g] * static_cast<double>(spec.active_count())) : 0.0);
    }
    lattice_ = f.lattice();
  }

  [[nodiscard]] ComplexCd integrate_to(std::span<const std::size_t> x) const {
    const std::size_t node = lattice_.flatten(x);
    const std::size_t width = std::size_t{1} << spec_.level;
    std::vector<cplx> acc(width), seg(width);
    for (std::size_t c = 0; c < lattice_.rank(); ++c) {
      if (x[c] == tables_.base()[c]) continue;
      if (!generators_[c]) {
        throw ValidationError("path runs along coordinate " + std::to_string(c + 1) +
                              ", which has zero Dirac weight");
      }
      std::fill(seg.begin(), seg.end(), cplx{});
      std::copy(tables_.segment(c, node), tables_.segment(c, node) + width_in_, seg.begin());
      cd_basis_left_mul_acc(spec_.level, *generators_[c], seg.data(), factors_[c], acc.data());
    }
    ComplexCd out(spec_.level);
    for (std::size_t j = 0; j < width; ++j) out.set_coeff(j, acc[j]);
    return out;
  }

private:
  DiracSpec spec_;
  std::size_t width_in_;
  PolylineTables tables_;
  Lattice lattice_;
  std::vector<std::optional<std::size_t>> generators_;
  std::vector<double> factors_;
};

inline ComplexCd line_integral(const GridField& f, std::span<const std::size_t> w0,
                               std::span<const std::size_t> x, const DiracSpec& spec) {
  LineIntegrator li(f, spec, {w0.begin(), w0.end()});
  return li.integrate_to(x);
}

struct TailIntegral {
  ComplexCd value;
  double tail_bound = 0.0;  // bound on the discarded part beyond R_inf
  double R_inf = 0.0;
};

/// Default truncation radius with exp(-decay * R) < 1e-10.
inline double default_tail_radius(double decay_rate) { return 10.0 * std::log(10.0) / decay_rate * 1.0000001; }

/// int_w^infinity along +axis of f, truncated at R_inf. f is sampled at
/// s_k = k h (h chosen so R_inf is a whole number of steps near `step`); the
/// discarded tail is bounded by C exp(-decay R_inf)/decay with C the largest
/// observed |f(s)| exp(decay s).
inline TailIntegral tail_integral(const std::function<void(double, cplx*)>& f, std::size_t width,
                                  std::size_t axis_coordinate, const DiracSpec& spec,
                                  double R_inf, double decay_rate, double step) {
  if (!(decay_rate > 0.0)) {
    throw ValidationError("tail integral needs a positive decay rate to certify the truncation");
  }
  if (!(R_inf > 0.0) || !(step > 0.0)) throw ValidationError("tail integral needs R_inf > 0 and step > 0");
  auto g = spec.generator_for(axis_coordinate);
  if (!g) throw ValidationError("tail direction has zero Dirac weight");
  const std::size_t steps = std::max<std::size_t>(3, static_cast<std::size_t>(std::ceil(R_inf / step)));
  const double h = R_inf / static_cast<double>(steps);
  std::vector<cplx> samples((steps + 1) * width);
  double C = 0.0;
  for (std::size_t k = 0; k <= steps; ++k) {
    const double s = static_cast<double>(k) * h;
    f(s, samples.data() + k * width);
    for (std::size_t j = 0; j < width; ++j) C = std::max(C, std::abs(samples[k * width + j]) * std::exp(decay_rate * s));
  }
  std::vector<cplx> total(width);
  cumulative_line(
      steps + 1, h, width, [&](std::size_t k) { return samples.data() + k * width; },
      [&](std::size_t k, const cplx* v) {
        if (k == steps) std::copy(v, v + width, total.begin());
      });
  const std::size_t dim = std::size_t{1} << spec.level;
  std::vector<cplx> seg(dim), acc(dim);
  std::copy(total.begin(), total.end(), seg.begin());
  const double factor = 1.0 / (spec.psi[*g] * static_cast<double>(spec.active_count()));
  cd_basis_left_mul_acc(spec.level, *g, seg.data(), factor, acc.data());
  TailIntegral out{ComplexCd(spec.level), C * std::exp(-decay_rate * R_inf) / decay_rate * std::abs(factor), R_inf};
  for (std::size_t j = 0; j < dim; ++j) out.value.set_coeff(j, acc[j]);
  return out;
}

// ---------------------------------------------------------------------------
// Sobolev norm on [0,T] x V^2

/// (sum over m0 <= m, m1 + m2 <= k, and coordinates j, l of the x and y
/// derivatives, of int |d^m0_t d^m1_{x_j} d^m2_{y_l} f|^s)^{1/s}. Index j (l)
/// only ranges over coordinates when m1 (m2) is positive.
inline double sobolev_norm(const GridField& f, unsigned m, unsigned k, double s) {
  if (f.arity() != Arity::TXY) throw ValidationError("Sobolev norm expects a field of (t, x, y)");
  if (!(s >= 1.0)) throw ValidationError("Sobolev exponent must be at least 1");
  const Lattice& lat = f.lattice();
  const std::size_t n = f.grid().dim();
  // Tensor quadrature weights.
  std::vector<std::vector<double>> axis_w(lat.rank());
  for (std::size_t a = 0; a < lat.rank(); ++a) axis_w[a] = line_weights(lat.axis(a).count, lat.axis(a).h());
  std::vector<double> weight(f.nodes());
  for (std::size_t i = 0; i < f.nodes(); ++i) {
    double w = 1.0;
    for (std::size_t a = 0; a < lat.rank(); ++a) w *= axis_w[a][lat.coord_index(i, a)];
    weight[i] = w;
  }
  const std::size_t xo = f.slot_offset(Slot::X), yo = f.slot_offset(Slot::Y);
  std::vector<double> terms;
  for (unsigned m0 = 0; m0 <= m; ++m0) {
    const GridField ft = derivative(f, 0, m0);
    for (unsigned m1 = 0; m1 <= k; ++m1) {
      for (unsigned m2 = 0; m1 + m2 <= k; ++m2) {
        const std::size_t jn = m1 > 0 ? n : 1, ln = m2 > 0 ? n : 1;
        for (std::size_t j = 0; j < jn; ++j) {
          const GridField fx = derivative(ft, xo + j, m1);
          for (std::size_t l = 0; l < ln; ++l) {
            const GridField fxy = derivative(fx, yo + l, m2);
            std::vector<double> contrib(f.nodes());
            for (std::size_t i = 0; i < f.nodes(); ++i) {
              double mag2 = 0.0;
              for (std::size_t c = 0; c < f.width(); ++c) mag2 += std::norm(fxy.at(i)[c]);
              contrib[i] = weight[i] * std::pow(std::sqrt(mag2), s);
            }
            terms.push_back(pairwise_sum(contrib));
          }
        }
      }
    }
  }
  return std::pow(pairwise_sum(terms), 1.0 / s);
}

}  // namespace sbw
