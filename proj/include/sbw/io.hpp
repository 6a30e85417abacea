#pragma once
// Field dumps (SBWF), JSON run configs and JSON reports.
//
// SBWF byte layout, little-endian, no padding:
//   char[4]  "SBWF"
//   u32      version (1)
//   u32      arity (1: f(x), 2: f(x, y), 3: f(t, x, y))
//   u32      value kind (0: complex scalar, 1: A_{r,C})
//   u32      algebra level r (0 for scalars)
//   u32      n, the number of spatial axes
//   u32      1 if a time axis follows the spatial axes, else 0
//   n (+1) x { f64 lo, f64 hi, u64 count }   spatial axes, then the time axis
//   u64      node count, u64 coefficients per node
//   nodes x width x { f64 re, f64 im }       row-major, last lattice axis fastest
// The lattice axes are (t,) x-axes (, y-axes), matching GridField.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "sbw/calculus.hpp"
#include "sbw/errors.hpp"
#include "sbw/workbench.hpp"

namespace sbw {

static_assert(std::endian::native == std::endian::little, "SBWF dumps assume a little-endian host");

inline constexpr std::uint32_t kFieldFormatVersion = 1;

namespace detail {
template <class T>
void put(std::string& out, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.append(b, sizeof(T));
}

class Reader {
public:
  explicit Reader(const std::string& s) : s_(s) {}
  template <class T>
  T get() {
    if (pos_ + sizeof(T) > s_.size()) throw ValidationError("field dump is truncated");
    T v;
    std::memcpy(&v, s_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  [[nodiscard]] bool done() const { return pos_ == s_.size(); }

private:
  const std::string& s_;
  std::size_t pos_ = 0;
};
}  // namespace detail

inline std::string encode_field(const GridField& f) {
  std::string out = "SBWF";
  const Grid& g = f.grid();
  const bool timed = f.arity() == Arity::TXY;
  detail::put<std::uint32_t>(out, kFieldFormatVersion);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(f.arity()));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(f.kind()));
  detail::put<std::uint32_t>(out, f.kind() == ValueKind::ComplexScalar ? 0u : f.level());
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(g.dim()));
  detail::put<std::uint32_t>(out, timed ? 1u : 0u);
  auto axis = [&](const Axis& a) {
    detail::put<double>(out, a.lo);
    detail::put<double>(out, a.hi);
    detail::put<std::uint64_t>(out, a.count);
  };
  for (const auto& a : g.space) axis(a);
  if (timed) axis(*g.time);
  detail::put<std::uint64_t>(out, f.nodes());
  detail::put<std::uint64_t>(out, f.width());
  for (const cplx& v : f.data()) {
    detail::put<double>(out, v.real());
    detail::put<double>(out, v.imag());
  }
  return out;
}

inline GridField decode_field(const std::string& bytes) {
  if (bytes.size() < 4 || bytes.compare(0, 4, "SBWF") != 0) throw ValidationError("not an SBWF field dump");
  const std::string body = bytes.substr(4);
  detail::Reader r(body);
  if (r.get<std::uint32_t>() != kFieldFormatVersion) throw ValidationError("unsupported SBWF version");
  const auto arity = r.get<std::uint32_t>();
  const auto kind = r.get<std::uint32_t>();
  const auto level = r.get<std::uint32_t>();
  const auto n = r.get<std::uint32_t>();
  const auto timed = r.get<std::uint32_t>();
  if (arity < 1 || arity > 3 || kind > 1 || timed > 1 || (arity == 3) != (timed == 1)) {
    throw ValidationError("corrupt SBWF header");
  }
  auto axis = [&] {
    Axis a;
    a.lo = r.get<double>();
    a.hi = r.get<double>();
    a.count = r.get<std::uint64_t>();
    return a;
  };
  Grid g;
  for (std::uint32_t k = 0; k < n; ++k) g.space.push_back(axis());
  if (timed) g.time = axis();
  GridField f(g, static_cast<Arity>(arity), static_cast<ValueKind>(kind), level);
  if (r.get<std::uint64_t>() != f.nodes() || r.get<std::uint64_t>() != f.width()) {
    throw ValidationError("SBWF node count or width does not match its axes");
  }
  for (auto& v : f.data()) {
    const double re = r.get<double>();
    v = {re, r.get<double>()};
  }
  if (!r.done()) throw ValidationError("trailing bytes after SBWF data");
  return f;
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ValidationError("failed to write " + path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_field(const std::string& path, const GridField& f) { write_file(path, encode_field(f)); }
inline GridField read_field(const std::string& path) { return decode_field(read_file(path)); }

// ---------------------------------------------------------------------------
// Config

using json = nlohmann::json;

namespace detail {

inline void only_keys(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ValidationError(where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* s : keys) known = known || k == s;
    if (!known) throw ValidationError("unknown key '" + k + "' in " + where);
  }
}

inline cplx to_cplx(const json& j, const std::string& what) {
  if (j.is_number()) return {j.get<double>(), 0.0};
  if (j.is_array() && j.size() == 2 && j[0].is_number() && j[1].is_number()) {
    return {j[0].get<double>(), j[1].get<double>()};
  }
  throw ValidationError(what + " must be a number or a [re, im] pair");
}

inline std::vector<cplx> to_cplx_list(const json& j, const std::string& what) {
  if (!j.is_array()) throw ValidationError(what + " must be a list");
  std::vector<cplx> out;
  for (const auto& e : j) out.push_back(to_cplx(e, what));
  return out;
}

template <class T>
T number(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_number()) throw ValidationError(std::string(key) + " in " + where + " must be a number");
  if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer() || (std::is_unsigned_v<T> && v.get<double>() < 0)) {
      throw ValidationError(std::string(key) + " in " + where + " must be a nonnegative integer");
    }
  }
  return v.get<T>();
}

}  // namespace detail

inline json cplx_json(cplx z) { return z.imag() == 0.0 ? json(z.real()) : json::array({z.real(), z.imag()}); }

/// Schema (every key optional unless marked):
///   problem: { alpha, beta, gamma, varsigma (complex), m, c (list of m complex),
///              n, box: { lo, hi, count }, T }
///   atoms (required): [ { lambda (m + 3 complex, required), p (required), xi (complex) } ]
///   xi_rule: "consistent" | "as_printed"
///   discretization: { tau, collar, kappa (n reals) }
///   kernel: { tol, max_iter }
///   monte_carlo: { samples, seed }
/// Complex values are a number or [re, im]. xi is given for all atoms or none.
inline WorkbenchCase parse_case(const json& j) {
  using detail::number;
  detail::only_keys(j, "config", {"problem", "atoms", "xi_rule", "discretization", "kernel", "monte_carlo"});
  WorkbenchCase wc;
  SobolevBurgersSpec& s = wc.spec;
  if (j.contains("problem")) {
    const json& p = j.at("problem");
    detail::only_keys(p, "problem", {"alpha", "beta", "gamma", "varsigma", "m", "c", "n", "box", "T"});
    if (p.contains("alpha")) s.alpha = detail::to_cplx(p["alpha"], "alpha");
    if (p.contains("beta")) s.beta = detail::to_cplx(p["beta"], "beta");
    if (p.contains("gamma")) s.gamma = detail::to_cplx(p["gamma"], "gamma");
    if (p.contains("varsigma")) s.varsigma = detail::to_cplx(p["varsigma"], "varsigma");
    s.m = number<unsigned>(p, "m", s.m, "problem");
    s.c = p.contains("c") ? detail::to_cplx_list(p["c"], "c") : std::vector<cplx>(s.m, cplx{});
    s.n = number<std::size_t>(p, "n", s.n, "problem");
    if (p.contains("box")) {
      const json& b = p["box"];
      detail::only_keys(b, "box", {"lo", "hi", "count"});
      s.box.lo = number<double>(b, "lo", s.box.lo, "box");
      s.box.hi = number<double>(b, "hi", s.box.hi, "box");
      s.box.count = number<std::size_t>(b, "count", s.box.count, "box");
    }
    s.T = number<double>(p, "T", s.T, "problem");
  }
  s.validate();

  if (!j.contains("atoms") || !j["atoms"].is_array() || j["atoms"].empty()) {
    throw ValidationError("config needs a nonempty 'atoms' list");
  }
  bool any_xi = false, all_xi = true;
  for (const auto& a : j["atoms"]) {
    detail::only_keys(a, "atom", {"lambda", "p", "xi"});
    if (!a.contains("lambda") || !a.contains("p")) throw ValidationError("every atom needs 'lambda' and 'p'");
    wc.atoms.push_back({detail::to_cplx_list(a["lambda"], "lambda")});
    wc.p.push_back(number<double>(a, "p", 0.0, "atom"));
    if (a.contains("xi")) {
      any_xi = true;
      wc.xi.push_back(detail::to_cplx(a["xi"], "xi"));
    } else {
      all_xi = false;
    }
  }
  if (any_xi && !all_xi) throw ValidationError("give xi for every atom or for none");
  for (const auto& pt : wc.atoms) (void)lambda_to_params(pt, s);

  if (j.contains("xi_rule")) {
    const std::string r = j["xi_rule"].is_string() ? j["xi_rule"].get<std::string>() : "";
    if (r == "consistent") {
      wc.xi_rule = XiRule::Consistent;
    } else if (r == "as_printed") {
      wc.xi_rule = XiRule::AsPrinted;
    } else {
      throw ValidationError("xi_rule must be \"consistent\" or \"as_printed\"");
    }
  }
  if (j.contains("discretization")) {
    const json& d = j["discretization"];
    detail::only_keys(d, "discretization", {"tau", "collar", "kappa"});
    wc.assembly.tau = number<double>(d, "tau", wc.assembly.tau, "discretization");
    wc.collar = number<std::size_t>(d, "collar", wc.collar, "discretization");
    if (d.contains("kappa")) {
      if (!d["kappa"].is_array()) throw ValidationError("kappa must be a list of reals");
      for (const auto& k : d["kappa"]) {
        if (!k.is_number()) throw ValidationError("kappa must be a list of reals");
        wc.assembly.kappa.push_back(k.get<double>());
      }
    }
  }
  if (j.contains("kernel")) {
    const json& k = j["kernel"];
    detail::only_keys(k, "kernel", {"tol", "max_iter"});
    wc.assembly.tol = number<double>(k, "tol", wc.assembly.tol, "kernel");
    wc.assembly.max_iter = number<unsigned>(k, "max_iter", wc.assembly.max_iter, "kernel");
  }
  if (j.contains("monte_carlo")) {
    const json& m = j["monte_carlo"];
    detail::only_keys(m, "monte_carlo", {"samples", "seed"});
    wc.samples = number<std::size_t>(m, "samples", wc.samples, "monte_carlo");
    wc.seed = number<std::uint64_t>(m, "seed", wc.seed, "monte_carlo");
  }
  if (!(wc.assembly.tau > 0.0)) throw ValidationError("tau must be positive");
  return wc;
}

inline WorkbenchCase load_case(const std::string& path) {
  const std::string text = read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(path + ": " + e.what());
  }
  return parse_case(j);
}

/// Echo of a parsed case in the config schema.
inline json case_json(const WorkbenchCase& wc) {
  const SobolevBurgersSpec& s = wc.spec;
  json c = json::array();
  for (auto v : s.c) c.push_back(cplx_json(v));
  json atoms = json::array();
  for (std::size_t j = 0; j < wc.atoms.size(); ++j) {
    json l = json::array();
    for (auto v : wc.atoms[j].lambda) l.push_back(cplx_json(v));
    json a = {{"lambda", l}, {"p", wc.p[j]}};
    if (!wc.xi.empty()) a["xi"] = cplx_json(wc.xi[j]);
    atoms.push_back(a);
  }
  json disc = {{"tau", wc.assembly.tau}, {"collar", wc.collar}};
  if (!wc.assembly.kappa.empty()) disc["kappa"] = wc.assembly.kappa;
  return {{"problem",
           {{"alpha", cplx_json(s.alpha)},
            {"beta", cplx_json(s.beta)},
            {"gamma", cplx_json(s.gamma)},
            {"varsigma", cplx_json(s.varsigma)},
            {"m", s.m},
            {"c", c},
            {"n", s.n},
            {"box", {{"lo", s.box.lo}, {"hi", s.box.hi}, {"count", s.box.count}}},
            {"T", s.T}}},
          {"atoms", atoms},
          {"xi_rule", wc.xi_rule == XiRule::Consistent ? "consistent" : "as_printed"},
          {"discretization", disc},
          {"kernel", {{"tol", wc.assembly.tol}, {"max_iter", wc.assembly.max_iter}}},
          {"monte_carlo", {{"samples", wc.samples}, {"seed", wc.seed}}}};
}

// ---------------------------------------------------------------------------
// Reports

inline json trace_json(const PicardTrace& t) {
  return {{"norm_estimate", t.norm_estimate}, {"iterations", t.iterations}, {"converged", t.converged},
          {"diverged", t.diverged},           {"residual", t.residual},     {"diffs", t.diffs},
          {"ratios", t.ratios}};
}

inline json moment_json(const MomentReport& m) {
  auto list = [](const std::vector<cplx>& v) {
    json a = json::array();
    for (auto z : v) a.push_back(cplx_json(z));
    return a;
  };
  json mc = json::array();
  for (const auto& e : m.mc) {
    mc.push_back({{"mean", cplx_json(e.mean)}, {"std_error", e.std_error}, {"samples", e.samples}});
  }
  return {{"second_moment", list(m.second_moment)},
          {"identity_rhs", list(m.identity_rhs)},
          {"mean_square", list(m.mean_square)},
          {"identity_gap", m.identity_gap},
          {"product_gap", m.product_gap},
          {"product_identity_holds", m.product_holds},
          {"monte_carlo", mc},
          {"monte_carlo_agrees", m.mc_agrees}};
}

inline json residual_json(const ResidualReport& r) {
  json rows = json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"count", row.count},
                    {"h", row.h},
                    {"tau", row.tau},
                    {"points", row.points},
                    {"linear", row.linear},
                    {"expectation", row.expectation},
                    {"auxiliary", row.auxiliary},
                    {"diagonal", row.diagonal},
                    {"classical", row.classical}});
  }
  return {{"rows", rows},
          {"decreasing",
           {{"linear", r.decreasing(&ResidualRow::linear)},
            {"expectation", r.decreasing(&ResidualRow::expectation)},
            {"auxiliary", r.decreasing(&ResidualRow::auxiliary)},
            {"diagonal", r.decreasing(&ResidualRow::diagonal)},
            {"classical", r.decreasing(&ResidualRow::classical)}}}};
}

}  // namespace sbw
