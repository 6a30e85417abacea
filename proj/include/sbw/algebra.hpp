#pragma once
/// Cayley-Dickson algebras A_r and their complexification A_{r,C}.
///
/// Elements are stored densely as 2^r real coefficients over the standard
/// basis i_0 = 1, i_1, ..., i_{2^r-1}. The product on A_{r+1} = A_r x A_r is
///
///     (a, b)(c, d) = (ac - d*b, da + bc*)
///
/// which yields i_j^2 = -1, i_j i_k = -i_k i_j for distinct imaginary units and
/// i_1 i_2 = i_3. Basis products are always +/- a basis element whose index is
/// the XOR of the operand indices; the sign table is built once per level.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "sbw/errors.hpp"

namespace sbw {

inline constexpr unsigned kMaxLevel = 6;

namespace detail {

/// Sign of i_p i_q in A_level; the product is sign * i_{p ^ q}.
class SignTable {
public:
  explicit SignTable(unsigned level) : dim_(std::size_t{1} << level), signs_(dim_ * dim_) {
    signs_[0] = 1;
    for (unsigned l = 0; l < level; ++l) {
      const std::size_t half = std::size_t{1} << l;
      const std::size_t full = half << 1;
      // Fill the full x full block from the half x half block (stored in place
      // with stride dim_), visiting quadrants that only read the top-left.
      for (std::size_t p = full; p-- > 0;) {
        for (std::size_t q = full; q-- > 0;) {
          if (p < half && q < half) continue;
          std::int8_t s = 0;
          if (p < half) {
            // (e_p, 0)(0, e_q') = (0, e_q' e_p)
            s = at(q - half, p);
          } else if (q < half) {
            // (0, e_p')(e_q, 0) = (0, e_p' e_q*)
            s = static_cast<std::int8_t>(at(p - half, q) * (q == 0 ? 1 : -1));
          } else {
            // (0, e_p')(0, e_q') = (-e_q'* e_p', 0)
            const std::size_t qq = q - half;
            s = static_cast<std::int8_t>(-(qq == 0 ? 1 : -1) * at(qq, p - half));
          }
          signs_[p * dim_ + q] = s;
        }
      }
    }
  }

  [[nodiscard]] std::int8_t at(std::size_t p, std::size_t q) const noexcept {
    return signs_[p * dim_ + q];
  }

private:
  std::size_t dim_;
  std::vector<std::int8_t> signs_;
};

inline const SignTable& sign_table(unsigned level) {
  static std::array<std::once_flag, kMaxLevel + 1> flags;
  static std::array<std::unique_ptr<SignTable>, kMaxLevel + 1> tables;
  std::call_once(flags[level], [level] { tables[level] = std::make_unique<SignTable>(level); });
  return *tables[level];
}

inline void check_level(unsigned level) {
  if (level > kMaxLevel) {
    throw ValidationError("Cayley-Dickson level " + std::to_string(level) +
                          " exceeds the supported maximum " + std::to_string(kMaxLevel));
  }
}

}  // namespace detail

/// out = a * b on raw coefficient arrays of length 2^level. Works for real or
/// complex coefficients since the complex unit is central. out must not alias.
template <class T>
void cd_mul_raw(unsigned level, const T* a, const T* b, T* out) {
  const auto& table = detail::sign_table(level);
  const std::size_t n = std::size_t{1} << level;
  for (std::size_t k = 0; k < n; ++k) out[k] = T{};
  for (std::size_t p = 0; p < n; ++p) {
    const T ap = a[p];
    if (ap == T{}) continue;
    for (std::size_t q = 0; q < n; ++q) {
      if (b[q] == T{}) continue;
      const T prod = ap * b[q];
      if (table.at(p, q) > 0) {
        out[p ^ q] += prod;
      } else {
        out[p ^ q] -= prod;
      }
    }
  }
}

/// out += scale * (i_g * b) on raw arrays.
template <class T, class S>
void cd_basis_left_mul_acc(unsigned level, std::size_t g, const T* b, S scale, T* out) {
  const auto& table = detail::sign_table(level);
  const std::size_t n = std::size_t{1} << level;
  for (std::size_t q = 0; q < n; ++q) {
    if (table.at(g, q) > 0) {
      out[g ^ q] += b[q] * scale;
    } else {
      out[g ^ q] -= b[q] * scale;
    }
  }
}

/// Element of the real Cayley-Dickson algebra A_r.
class CdElement {
public:
  CdElement() : CdElement(0) {}

  explicit CdElement(unsigned level) : level_(level) {
    detail::check_level(level);
    coeffs_.assign(std::size_t{1} << level, 0.0);
  }

  CdElement(unsigned level, std::vector<double> coeffs) : level_(level), coeffs_(std::move(coeffs)) {
    detail::check_level(level);
    if (coeffs_.size() != (std::size_t{1} << level)) {
      throw ValidationError("CdElement: expected " + std::to_string(std::size_t{1} << level) +
                            " coefficients, got " + std::to_string(coeffs_.size()));
    }
  }

  static CdElement basis(unsigned level, std::size_t j, double scale = 1.0) {
    CdElement e(level);
    if (j >= e.dim()) throw ValidationError("basis index " + std::to_string(j) + " out of range");
    e.coeffs_[j] = scale;
    return e;
  }

  static CdElement real(unsigned level, double x) { return basis(level, 0, x); }

  [[nodiscard]] unsigned level() const noexcept { return level_; }
  [[nodiscard]] std::size_t dim() const noexcept { return coeffs_.size(); }
  [[nodiscard]] double operator[](std::size_t j) const { return coeffs_[j]; }
  [[nodiscard]] double& operator[](std::size_t j) { return coeffs_[j]; }
  [[nodiscard]] std::span<const double> coeffs() const noexcept { return coeffs_; }
  [[nodiscard]] double re() const noexcept { return coeffs_[0]; }

  [[nodiscard]] CdElement im() const {
    CdElement out = *this;
    out.coeffs_[0] = 0.0;
    return out;
  }

  [[nodiscard]] CdElement conj() const {
    CdElement out = *this;
    for (std::size_t j = 1; j < out.dim(); ++j) out.coeffs_[j] = -out.coeffs_[j];
    return out;
  }

  [[nodiscard]] double norm_sq() const noexcept {
    double s = 0.0;
    for (double c : coeffs_) s += c * c;
    return s;
  }

  /// The same element viewed in A_level (level >= current); upper coefficients are zero.
  [[nodiscard]] CdElement promoted(unsigned level) const {
    if (level < level_) throw ValidationError("cannot promote to a lower level");
    CdElement out(level);
    for (std::size_t j = 0; j < dim(); ++j) out.coeffs_[j] = coeffs_[j];
    return out;
  }

  CdElement& operator+=(const CdElement& o) {
    require_same_level(o);
    for (std::size_t j = 0; j < dim(); ++j) coeffs_[j] += o.coeffs_[j];
    return *this;
  }
  CdElement& operator-=(const CdElement& o) {
    require_same_level(o);
    for (std::size_t j = 0; j < dim(); ++j) coeffs_[j] -= o.coeffs_[j];
    return *this;
  }
  CdElement& operator*=(double s) {
    for (double& c : coeffs_) c *= s;
    return *this;
  }

  friend CdElement operator+(CdElement a, const CdElement& b) { return a += b; }
  friend CdElement operator-(CdElement a, const CdElement& b) { return a -= b; }
  friend CdElement operator-(CdElement a) { return a *= -1.0; }
  friend CdElement operator*(CdElement a, double s) { return a *= s; }
  friend CdElement operator*(double s, CdElement a) { return a *= s; }

  friend CdElement operator*(const CdElement& a, const CdElement& b) {
    a.require_same_level(b);
    const auto& table = detail::sign_table(a.level_);
    CdElement out(a.level_);
    const std::size_t n = a.dim();
    for (std::size_t p = 0; p < n; ++p) {
      const double ap = a.coeffs_[p];
      if (ap == 0.0) continue;
      for (std::size_t q = 0; q < n; ++q) {
        const double bq = b.coeffs_[q];
        if (bq == 0.0) continue;
        out.coeffs_[p ^ q] += table.at(p, q) * ap * bq;
      }
    }
    return out;
  }

  friend bool operator==(const CdElement& a, const CdElement& b) {
    return a.level_ == b.level_ && a.coeffs_ == b.coeffs_;
  }

  void require_same_level(const CdElement& o) const {
    if (o.level_ != level_) {
      throw ValidationError("Cayley-Dickson level mismatch: " + std::to_string(level_) + " vs " +
                            std::to_string(o.level_));
    }
  }

private:
  unsigned level_;
  std::vector<double> coeffs_;
};

/// Element x + i y of A_{r,C}; the unit i is central.
class ComplexCd {
public:
  ComplexCd() = default;
  explicit ComplexCd(unsigned level) : re_(level), im_(level) {}
  ComplexCd(CdElement re, CdElement im) : re_(std::move(re)), im_(std::move(im)) {
    re_.require_same_level(im_);
  }
  explicit ComplexCd(const CdElement& x) : re_(x), im_(x.level()) {}

  static ComplexCd scalar(unsigned level, std::complex<double> c) {
    return {CdElement::real(level, c.real()), CdElement::real(level, c.imag())};
  }
  static ComplexCd basis(unsigned level, std::size_t j, std::complex<double> c = 1.0) {
    return {CdElement::basis(level, j, c.real()), CdElement::basis(level, j, c.imag())};
  }

  [[nodiscard]] unsigned level() const noexcept { return re_.level(); }
  [[nodiscard]] std::size_t dim() const noexcept { return re_.dim(); }
  [[nodiscard]] const CdElement& real_part() const noexcept { return re_; }
  [[nodiscard]] const CdElement& imag_part() const noexcept { return im_; }
  [[nodiscard]] CdElement& real_part() noexcept { return re_; }
  [[nodiscard]] CdElement& imag_part() noexcept { return im_; }

  /// Complex coefficient of i_j.
  [[nodiscard]] std::complex<double> coeff(std::size_t j) const { return {re_[j], im_[j]}; }
  void set_coeff(std::size_t j, std::complex<double> c) {
    re_[j] = c.real();
    im_[j] = c.imag();
  }

  /// Real part in the algebra sense: the (complex) i_0 coefficient.
  [[nodiscard]] std::complex<double> re() const { return coeff(0); }
  [[nodiscard]] ComplexCd im() const { return {re_.im(), im_.im()}; }

  /// z* = x* - i y.
  [[nodiscard]] ComplexCd conj() const { return {re_.conj(), -im_}; }

  /// |z|^2 = |x|^2 + |y|^2.
  [[nodiscard]] double norm_sq() const noexcept { return re_.norm_sq() + im_.norm_sq(); }

  [[nodiscard]] double max_abs() const noexcept {
    double m = 0.0;
    for (std::size_t j = 0; j < dim(); ++j) m = std::max(m, std::abs(coeff(j)));
    return m;
  }

  [[nodiscard]] bool is_scalar() const {
    for (std::size_t j = 1; j < dim(); ++j) {
      if (re_[j] != 0.0 || im_[j] != 0.0) return false;
    }
    return true;
  }

  ComplexCd& operator+=(const ComplexCd& o) {
    re_ += o.re_;
    im_ += o.im_;
    return *this;
  }
  ComplexCd& operator-=(const ComplexCd& o) {
    re_ -= o.re_;
    im_ -= o.im_;
    return *this;
  }
  ComplexCd& operator*=(double s) {
    re_ *= s;
    im_ *= s;
    return *this;
  }
  ComplexCd& operator*=(std::complex<double> c) {
    CdElement nr = re_ * c.real() - im_ * c.imag();
    CdElement ni = re_ * c.imag() + im_ * c.real();
    re_ = std::move(nr);
    im_ = std::move(ni);
    return *this;
  }

  friend ComplexCd operator+(ComplexCd a, const ComplexCd& b) { return a += b; }
  friend ComplexCd operator-(ComplexCd a, const ComplexCd& b) { return a -= b; }
  friend ComplexCd operator-(ComplexCd a) { return a *= -1.0; }
  friend ComplexCd operator*(ComplexCd a, double s) { return a *= s; }
  friend ComplexCd operator*(double s, ComplexCd a) { return a *= s; }
  friend ComplexCd operator*(ComplexCd a, std::complex<double> c) { return a *= c; }
  friend ComplexCd operator*(std::complex<double> c, ComplexCd a) { return a *= c; }

  friend ComplexCd operator*(const ComplexCd& a, const ComplexCd& b) {
    return {a.re_ * b.re_ - a.im_ * b.im_, a.re_ * b.im_ + a.im_ * b.re_};
  }
  friend ComplexCd operator*(const CdElement& a, const ComplexCd& b) {
    return {a * b.re_, a * b.im_};
  }
  friend ComplexCd operator*(const ComplexCd& a, const CdElement& b) {
    return {a.re_ * b, a.im_ * b};
  }

  friend bool operator==(const ComplexCd& a, const ComplexCd& b) {
    return a.re_ == b.re_ && a.im_ == b.im_;
  }

private:
  CdElement re_;
  CdElement im_;
};

inline CdElement cd_mul(const CdElement& a, const CdElement& b) { return a * b; }
inline CdElement cd_conj(const CdElement& z) { return z.conj(); }
inline double cd_norm_sq(const CdElement& z) { return z.norm_sq(); }
inline double cd_norm_sq(const ComplexCd& z) { return z.norm_sq(); }

/// Split z = Re(z) i_0 + Im(z).
inline std::pair<double, CdElement> re_im(const CdElement& z) { return {z.re(), z.im()}; }
inline std::pair<std::complex<double>, ComplexCd> re_im(const ComplexCd& z) {
  return {z.re(), z.im()};
}

/// z^k by left-to-right repeated multiplication, z^0 = i_0.
template <class T>
T cd_pow(const T& z, unsigned k) {
  T out = [&] {
    if constexpr (std::is_same_v<T, CdElement>) {
      return CdElement::real(z.level(), 1.0);
    } else {
      return ComplexCd::scalar(z.level(), 1.0);
    }
  }();
  for (unsigned i = 0; i < k; ++i) out = out * z;
  return out;
}

namespace detail {

// Both projection formulas share the bracket (2^t - 2)^{-1}{ -z + sum_k i_k (z i_k^*) }.
template <class T>
T projection_bracket(const T& z) {
  const unsigned t = z.level();
  const std::size_t n = z.dim();
  T sum = -z;
  for (std::size_t k = 1; k < n; ++k) {
    const CdElement ik = CdElement::basis(t, k);
    sum += ik * (z * ik.conj());
  }
  return sum * (1.0 / static_cast<double>(n - 2));
}

template <class T>
T promote_for_projection(const T& z) {
  if (z.level() >= 2) return z;
  if constexpr (std::is_same_v<T, CdElement>) {
    return z.promoted(2);
  } else {
    return ComplexCd(z.real_part().promoted(2), z.imag_part().promoted(2));
  }
}

}  // namespace detail

/// pi_j(z) evaluated literally through the algebra operations of formulas
/// pi_j = (-z i_j + i_j B(z))/2 for j >= 1 and pi_0 = (z + B(z))/2, where B is
/// the bracket above. Elements below level 2 are promoted first.
inline double pi_project(std::size_t j, const CdElement& z_in) {
  if (j >= z_in.dim()) {
    throw ValidationError("projection index " + std::to_string(j) + " out of range for level " +
                          std::to_string(z_in.level()));
  }
  const CdElement z = detail::promote_for_projection(z_in);
  const CdElement bracket = detail::projection_bracket(z);
  if (j == 0) return ((z + bracket) * 0.5).re();
  const CdElement ij = CdElement::basis(z.level(), j);
  return ((ij * bracket - z * ij) * 0.5).re();
}

/// C-linear extension: returns the complex coefficient of i_j.
inline std::complex<double> pi_project(std::size_t j, const ComplexCd& z_in) {
  if (j >= z_in.dim()) {
    throw ValidationError("projection index " + std::to_string(j) + " out of range for level " +
                          std::to_string(z_in.level()));
  }
  const ComplexCd z = detail::promote_for_projection(z_in);
  const ComplexCd bracket = detail::projection_bracket(z);
  if (j == 0) return ((z + bracket) * 0.5).re();
  const CdElement ij = CdElement::basis(z.level(), j);
  return ((ij * bracket - z * ij) * 0.5).re();
}

/// Index map x -> sum_j x_j i_{l_j} of R^n into A_t.
class EmbeddingMap {
public:
  EmbeddingMap(std::vector<std::size_t> indices, unsigned level)
      : indices_(std::move(indices)), level_(level) {
    detail::check_level(level);
    const std::size_t dim = std::size_t{1} << level;
    for (std::size_t a = 0; a < indices_.size(); ++a) {
      if (indices_[a] >= dim) {
        throw ValidationError("embedding index " + std::to_string(indices_[a]) +
                              " does not fit level " + std::to_string(level));
      }
      for (std::size_t b = 0; b < a; ++b) {
        if (indices_[a] == indices_[b]) throw ValidationError("embedding indices must be distinct");
      }
    }
  }

  /// l_j = j - 1 for j = 1..n (so x_1 sits on i_0).
  static EmbeddingMap identity_from_zero(std::size_t n, unsigned level) {
    std::vector<std::size_t> idx(n);
    for (std::size_t j = 0; j < n; ++j) idx[j] = j;
    return {std::move(idx), level};
  }
  /// l_j = j for j = 1..n (purely imaginary span i_1..i_n).
  static EmbeddingMap imaginary(std::size_t n, unsigned level) {
    std::vector<std::size_t> idx(n);
    for (std::size_t j = 0; j < n; ++j) idx[j] = j + 1;
    return {std::move(idx), level};
  }

  [[nodiscard]] std::size_t size() const noexcept { return indices_.size(); }
  [[nodiscard]] unsigned level() const noexcept { return level_; }
  [[nodiscard]] std::size_t operator[](std::size_t j) const { return indices_[j]; }
  [[nodiscard]] const std::vector<std::size_t>& indices() const noexcept { return indices_; }

private:
  std::vector<std::size_t> indices_;
  unsigned level_;
};

inline CdElement embed_point(std::span<const double> x, const EmbeddingMap& map) {
  if (x.size() != map.size()) {
    throw ValidationError("embed_point: dimension " + std::to_string(x.size()) +
                          " does not match map of size " + std::to_string(map.size()));
  }
  CdElement z(map.level());
  for (std::size_t j = 0; j < x.size(); ++j) z[map[j]] = x[j];
  return z;
}

/// Inverse of embed_point through the projections x_j = pi_{l_j}(z).
inline std::vector<double> extract_point(const CdElement& z, const EmbeddingMap& map) {
  if (z.level() != map.level()) throw ValidationError("extract_point: level mismatch");
  std::vector<double> x(map.size());
  for (std::size_t j = 0; j < map.size(); ++j) x[j] = z[map[j]];
  return x;
}

/// True when i_a i_b = i_c holds with a positive sign, plus the cyclic relations.
inline bool is_quaternion_triple(unsigned level, std::size_t a, std::size_t b, std::size_t c) {
  const std::size_t dim = std::size_t{1} << level;
  if (a == 0 || b == 0 || c == 0 || a >= dim || b >= dim || c >= dim) return false;
  auto e = [level](std::size_t j) { return CdElement::basis(level, j); };
  return e(a) * e(b) == e(c) && e(b) * e(c) == e(a) && e(c) * e(a) == e(b);
}

struct EuclidProducts {
  double scalar;
  std::optional<std::array<double, 3>> cross;
};

/// (x, y) = Re(z(x) z*(y)); for n = 3 with a quaternionic index triple also
/// x cross y read off Im(z(x) z(y)).
inline EuclidProducts euclid_products(std::span<const double> x, std::span<const double> y,
                                      const EmbeddingMap& map, bool want_cross) {
  const CdElement zx = embed_point(x, map);
  const CdElement zy = embed_point(y, map);
  EuclidProducts out{(zx * zy.conj()).re(), std::nullopt};
  if (want_cross) {
    if (map.size() != 3 || !is_quaternion_triple(map.level(), map[0], map[1], map[2])) {
      throw ValidationError(
          "cross product needs n = 3 and indices with i_{l1} i_{l2} = i_{l3}");
    }
    const CdElement im = (zx * zy).im();
    out.cross = std::array<double, 3>{im[map[0]], im[map[1]], im[map[2]]};
  }
  return out;
}

}  // namespace sbw
