#pragma once
// Real PDE systems P(A_1, ..., A_v, u) = g and their translation into a PDE
// over a Cayley-Dickson algebra, Q(Ahat_1, ..., Ahat_v, uhat) = ghat.
//
// Description language, one statement per line (';' also ends a statement,
// '#' starts a comment):
//
//   space x1, x2          coordinates, in order; `time t` declares another one
//   unknown u, v          u_1, ..., u_m
//   source g              g_1, ..., g_k
//   param a = 1.5         numeric constant
//   coeff c = x1^2 + 1    polynomial coefficient c(x)
//   op L = lap + c*dx1    linear PDO macro
//   poly Q(s) = s^2 + 1   polynomial with constant coefficients, Q(L) composes
//   [eq] lhs = rhs        one equation per source component
//
// Builtins: d<var> (partial derivative), I (identity), lap (sum of second
// derivatives over `space` coordinates). Operators compose with `*` and `^`
// and apply with call syntax, e.g. dx1(dx1(u)) or (lap^2 + I)(u).

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "sbw/algebra.hpp"
#include "sbw/calculus.hpp"
#include "sbw/errors.hpp"
#include "sbw/poly.hpp"

namespace sbw {

class ParseError : public ValidationError {
public:
  ParseError(std::size_t line, std::size_t column, const std::string& msg)
      : ValidationError("line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + msg),
        line_(line),
        column_(column) {}
  [[nodiscard]] std::size_t line() const { return line_; }
  [[nodiscard]] std::size_t column() const { return column_; }

private:
  std::size_t line_, column_;
};

// ---------------------------------------------------------------------------
// Linear PDOs sum_alpha c_alpha(x) d^alpha with polynomial coefficients

struct LinearPdo {
  std::size_t nvars = 0;
  std::map<Exponents, Poly<double>> terms;

  static LinearPdo zero(std::size_t n) { return LinearPdo{n, {}}; }
  static LinearPdo multiplication(const Poly<double>& c) {
    LinearPdo o{c.nvars(), {}};
    o.add(Exponents(c.nvars(), 0), c);
    return o;
  }
  static LinearPdo identity(std::size_t n) { return multiplication(Poly<double>::constant(n, 1.0)); }
  static LinearPdo partial(std::size_t n, std::size_t j, unsigned order = 1) {
    LinearPdo o{n, {}};
    Exponents a(n, 0);
    a.at(j) = order;
    o.add(a, Poly<double>::constant(n, 1.0));
    return o;
  }

  void add(const Exponents& a, const Poly<double>& c) {
    if (a.size() != nvars || c.nvars() != nvars) throw ValidationError("PDO term has the wrong dimension");
    auto it = terms.find(a);
    if (it == terms.end()) {
      if (!c.is_zero()) terms.emplace(a, c);
      return;
    }
    it->second += c;
    if (it->second.is_zero()) terms.erase(it);
  }

  LinearPdo& operator+=(const LinearPdo& o) {
    for (const auto& [a, c] : o.terms) add(a, c);
    return *this;
  }
  friend LinearPdo operator+(LinearPdo a, const LinearPdo& b) { return a += b; }
  friend LinearPdo operator*(const LinearPdo& a, double s) {
    LinearPdo o{a.nvars, {}};
    for (const auto& [e, c] : a.terms) o.add(e, c * s);
    return o;
  }
  friend LinearPdo operator-(const LinearPdo& a) { return a * -1.0; }
  friend LinearPdo operator-(LinearPdo a, const LinearPdo& b) { return a += -b; }

  [[nodiscard]] bool is_zero() const { return terms.empty(); }
  [[nodiscard]] unsigned order() const {
    unsigned k = 0;
    for (const auto& [a, c] : terms) {
      unsigned s = 0;
      for (unsigned e : a) s += e;
      k = std::max(k, s);
    }
    return k;
  }

  /// Exact action on a polynomial.
  [[nodiscard]] Poly<double> apply(const Poly<double>& f) const {
    Poly<double> out(nvars);
    for (const auto& [a, c] : terms) {
      Poly<double> d = f;
      for (std::size_t j = 0; j < nvars && !d.is_zero(); ++j) d = d.derivative(j, a[j]);
      out += c * d;
    }
    return out;
  }

  /// Renames variable j to target[j] in a space of new_nvars variables.
  [[nodiscard]] LinearPdo remap(std::size_t new_nvars, const std::vector<std::size_t>& target) const {
    LinearPdo o{new_nvars, {}};
    for (const auto& [a, c] : terms) {
      Exponents b(new_nvars, 0);
      for (std::size_t j = 0; j < nvars; ++j) b[target[j]] += a[j];
      o.add(b, c.remap(new_nvars, target));
    }
    return o;
  }
};

namespace detail {
inline double binomial(unsigned n, unsigned k) {
  double r = 1.0;
  for (unsigned i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return r;
}
}  // namespace detail

/// A o B by the Leibniz rule:
/// (a d^al)(b d^be) = a sum_{ga <= al} C(al, ga) (d^ga b) d^{al - ga + be}.
inline LinearPdo compose(const LinearPdo& A, const LinearPdo& B) {
  if (A.nvars != B.nvars) throw ValidationError("composing PDOs over different variables");
  const std::size_t n = A.nvars;
  LinearPdo out = LinearPdo::zero(n);
  for (const auto& [al, a] : A.terms) {
    for (const auto& [be, b] : B.terms) {
      Exponents ga(n, 0);
      while (true) {
        double c = 1.0;
        Poly<double> db = b;
        for (std::size_t j = 0; j < n; ++j) {
          c *= detail::binomial(al[j], ga[j]);
          db = db.derivative(j, ga[j]);
        }
        if (!db.is_zero()) {
          Exponents e(n);
          for (std::size_t j = 0; j < n; ++j) e[j] = al[j] - ga[j] + be[j];
          out.add(e, a * db * c);
        }
        std::size_t j = 0;
        for (; j < n; ++j) {
          if (ga[j] < al[j]) {
            ++ga[j];
            break;
          }
          ga[j] = 0;
        }
        if (j == n) break;
      }
    }
  }
  return out;
}

inline LinearPdo power(const LinearPdo& A, unsigned k) {
  LinearPdo out = LinearPdo::identity(A.nvars);
  for (unsigned i = 0; i < k; ++i) out = compose(A, out);
  return out;
}

// ---------------------------------------------------------------------------
// Expression trees

enum class ExprKind { Const, Unknown, Source, Coeff, Add, Mul, Pow, Neg, Apply };

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

/// Immutable node. In a translated tree Unknown(index) means pi_index(uhat),
/// Source(index) means pi_index(ghat), and polynomials and PDOs live in the
/// 2^r coordinates z_0, ..., z_{2^r - 1}.
struct Expr {
  ExprKind kind = ExprKind::Const;
  double value = 0.0;      // Const
  std::size_t index = 0;   // Unknown, Source (0-based)
  std::string name;        // Coeff; empty for an anonymous polynomial
  Poly<double> func;       // Coeff
  LinearPdo op;            // Apply
  unsigned exponent = 0;   // Pow
  ExprPtr a, b;            // operands (b only for Add and Mul)
};

namespace expr {
inline ExprPtr make(Expr e) { return std::make_shared<const Expr>(std::move(e)); }
inline ExprPtr constant(double v) {
  Expr e;
  e.value = v;
  return make(std::move(e));
}
inline ExprPtr unknown(std::size_t j) {
  Expr e;
  e.kind = ExprKind::Unknown;
  e.index = j;
  return make(std::move(e));
}
inline ExprPtr source(std::size_t s) {
  Expr e;
  e.kind = ExprKind::Source;
  e.index = s;
  return make(std::move(e));
}
inline ExprPtr coeff(std::string name, Poly<double> f) {
  Expr e;
  e.kind = ExprKind::Coeff;
  e.name = std::move(name);
  e.func = std::move(f);
  return make(std::move(e));
}
inline ExprPtr binary(ExprKind k, ExprPtr a, ExprPtr b) {
  Expr e;
  e.kind = k;
  e.a = std::move(a);
  e.b = std::move(b);
  return make(std::move(e));
}
inline ExprPtr add(ExprPtr a, ExprPtr b) { return binary(ExprKind::Add, std::move(a), std::move(b)); }
inline ExprPtr mul(ExprPtr a, ExprPtr b) { return binary(ExprKind::Mul, std::move(a), std::move(b)); }
inline ExprPtr neg(ExprPtr a) { return binary(ExprKind::Neg, std::move(a), nullptr); }
inline ExprPtr pow(ExprPtr a, unsigned k) {
  Expr e;
  e.kind = ExprKind::Pow;
  e.a = std::move(a);
  e.exponent = k;
  return make(std::move(e));
}
inline ExprPtr apply(LinearPdo op, ExprPtr a) {
  Expr e;
  e.kind = ExprKind::Apply;
  e.op = std::move(op);
  e.a = std::move(a);
  return make(std::move(e));
}
}  // namespace expr

struct Equation {
  ExprPtr lhs, rhs;
};

/// Parsed system: coordinates x_1..x_n, unknowns u_1..u_m, sources g_1..g_k,
/// named coefficients, and equations (equation s pairs with source g_s).
struct PdeExpression {
  std::vector<std::string> variables;
  std::vector<bool> is_time;
  std::vector<std::string> unknowns;
  std::vector<std::string> sources;
  std::vector<std::pair<std::string, Poly<double>>> coefficients;
  std::vector<Equation> equations;

  [[nodiscard]] std::size_t n() const { return variables.size(); }
  [[nodiscard]] std::size_t m() const { return unknowns.size(); }
  /// Number of source components: the declared sources or, if more, the equations.
  [[nodiscard]] std::size_t k() const { return std::max(sources.size(), equations.size()); }
};

// ---------------------------------------------------------------------------
// Lexer and parser

namespace detail {

enum class Tok { Ident, Number, Symbol, Newline, End };

struct Token {
  Tok kind = Tok::End;
  std::string text;
  double number = 0.0;
  std::size_t line = 1, col = 1;
};

inline std::vector<Token> lex(std::string_view src) {
  std::vector<Token> out;
  std::size_t line = 1, col = 1, i = 0;
  auto advance = [&](std::size_t k) {
    i += k;
    col += k;
  };
  while (i < src.size()) {
    const char c = src[i];
    if (c == '#') {
      while (i < src.size() && src[i] != '\n') advance(1);
      continue;
    }
    if (c == '\n' || c == ';') {
      out.push_back({Tok::Newline, std::string(1, c), 0.0, line, col});
      if (c == '\n') {
        ++i;
        ++line;
        col = 1;
      } else {
        advance(1);
      }
      continue;
    }
    if (c == ' ' || c == '\t' || c == '\r') {
      advance(1);
      continue;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t j = i;
      while (j < src.size() && (std::isalnum(static_cast<unsigned char>(src[j])) || src[j] == '_')) ++j;
      out.push_back({Tok::Ident, std::string(src.substr(i, j - i)), 0.0, line, col});
      advance(j - i);
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || (c == '.' && i + 1 < src.size() &&
                                                        std::isdigit(static_cast<unsigned char>(src[i + 1])))) {
      std::size_t j = i;
      auto digits = [&] {
        while (j < src.size() && std::isdigit(static_cast<unsigned char>(src[j]))) ++j;
      };
      digits();
      if (j < src.size() && src[j] == '.') {
        ++j;
        digits();
      }
      if (j < src.size() && (src[j] == 'e' || src[j] == 'E')) {
        std::size_t k = j + 1;
        if (k < src.size() && (src[k] == '+' || src[k] == '-')) ++k;
        if (k < src.size() && std::isdigit(static_cast<unsigned char>(src[k]))) {
          j = k;
          digits();
        }
      }
      const std::string text(src.substr(i, j - i));
      out.push_back({Tok::Number, text, std::strtod(text.c_str(), nullptr), line, col});
      advance(j - i);
      continue;
    }
    if (std::string_view("+-*^(),=").find(c) != std::string_view::npos) {
      out.push_back({Tok::Symbol, std::string(1, c), 0.0, line, col});
      advance(1);
      continue;
    }
    throw ParseError(line, col, std::string("unexpected character '") + c + "'");
  }
  out.push_back({Tok::End, "", 0.0, line, col});
  return out;
}

/// Surface syntax tree, before symbols are resolved.
struct SNode {
  enum Kind { Num, Id, Call, Bin, Neg } kind = Num;
  double num = 0.0;
  std::string id;
  char op = 0;
  std::shared_ptr<SNode> a, b;
  std::size_t line = 0, col = 0;
};
using SPtr = std::shared_ptr<SNode>;

struct Statement {
  std::string keyword;  // "", "space", "time", "unknown", "source", "param", "coeff", "op", "poly", "eq"
  std::vector<Token> names;
  std::string formal;  // poly formal variable
  SPtr lhs, rhs;
  std::size_t line = 0, col = 0;
};

class Parser {
public:
  explicit Parser(std::vector<Token> toks) : t_(std::move(toks)) {}

  std::vector<Statement> statements() {
    std::vector<Statement> out;
    while (true) {
      while (peek().kind == Tok::Newline) ++p_;
      if (peek().kind == Tok::End) break;
      out.push_back(statement());
      if (peek().kind != Tok::Newline && peek().kind != Tok::End) fail(peek(), "expected end of statement");
    }
    return out;
  }

private:
  const Token& peek() const { return t_[p_]; }
  const Token& next() { return t_[p_ < t_.size() - 1 ? p_++ : p_]; }
  bool is_symbol(char c) const { return peek().kind == Tok::Symbol && peek().text[0] == c; }
  [[noreturn]] static void fail(const Token& t, const std::string& msg) {
    std::string what = msg;
    if (t.kind == Tok::End) what += " (found end of input)";
    else if (t.kind == Tok::Newline) what += " (found end of line)";
    else what += " (found '" + t.text + "')";
    throw ParseError(t.line, t.col, what);
  }
  void expect(char c) {
    if (!is_symbol(c)) fail(peek(), std::string("expected '") + c + "'");
    ++p_;
  }
  Token ident(const char* what) {
    if (peek().kind != Tok::Ident) fail(peek(), std::string("expected ") + what);
    return next();
  }

  Statement statement() {
    static const std::vector<std::string> kws = {"space", "time", "unknown", "source",
                                                 "param", "coeff", "op",   "poly", "eq"};
    Statement s;
    s.line = peek().line;
    s.col = peek().col;
    const bool kw = peek().kind == Tok::Ident &&
                    std::find(kws.begin(), kws.end(), peek().text) != kws.end() &&
                    t_[p_ + 1].kind == Tok::Ident;
    if (kw) s.keyword = next().text;
    if (s.keyword == "space" || s.keyword == "time" || s.keyword == "unknown" || s.keyword == "source") {
      s.names.push_back(ident("a name"));
      while (is_symbol(',')) {
        ++p_;
        s.names.push_back(ident("a name"));
      }
      return s;
    }
    if (s.keyword == "param" || s.keyword == "coeff" || s.keyword == "op" || s.keyword == "poly") {
      s.names.push_back(ident("a name"));
      if (s.keyword == "poly") {
        expect('(');
        s.formal = ident("the polynomial variable").text;
        expect(')');
      }
      expect('=');
      s.rhs = expr();
      return s;
    }
    s.lhs = expr();
    expect('=');
    s.rhs = expr();
    return s;
  }

  SPtr node(SNode::Kind k, const Token& at) {
    auto n = std::make_shared<SNode>();
    n->kind = k;
    n->line = at.line;
    n->col = at.col;
    return n;
  }

  SPtr expr() {
    SPtr lhs = term();
    while (is_symbol('+') || is_symbol('-')) {
      const Token& op = next();
      auto n = node(SNode::Bin, op);
      n->op = op.text[0];
      n->a = lhs;
      n->b = term();
      lhs = n;
    }
    return lhs;
  }
  SPtr term() {
    SPtr lhs = unary();
    while (is_symbol('*')) {
      const Token& op = next();
      auto n = node(SNode::Bin, op);
      n->op = '*';
      n->a = lhs;
      n->b = unary();
      lhs = n;
    }
    return lhs;
  }
  SPtr unary() {
    if (is_symbol('-')) {
      auto n = node(SNode::Neg, next());
      n->a = unary();
      return n;
    }
    if (is_symbol('+')) {
      ++p_;
      return unary();
    }
    return power();
  }
  SPtr power() {
    SPtr base = postfix();
    if (is_symbol('^')) {
      auto n = node(SNode::Bin, next());
      n->op = '^';
      n->a = base;
      n->b = unary();
      return n;
    }
    return base;
  }
  SPtr postfix() {
    SPtr e = primary();
    while (is_symbol('(')) {
      auto n = node(SNode::Call, next());
      n->a = e;
      n->b = expr();
      expect(')');
      e = n;
    }
    return e;
  }
  SPtr primary() {
    const Token& t = peek();
    if (t.kind == Tok::Number) {
      auto n = node(SNode::Num, next());
      n->num = t.number;
      return n;
    }
    if (t.kind == Tok::Ident) {
      auto n = node(SNode::Id, next());
      n->id = t.text;
      return n;
    }
    if (is_symbol('(')) {
      ++p_;
      SPtr e = expr();
      expect(')');
      return e;
    }
    fail(t, "expected a number, a name or '('");
  }

  std::vector<Token> t_;
  std::size_t p_ = 0;
};

/// Elaborated value of a surface expression.
struct Value {
  enum Kind { Scalar, Func, Op, Field, UPoly, PolyRef } kind = Scalar;
  double s = 0.0;
  Poly<double> f;
  std::string name;  // Func: coefficient name; PolyRef: polynomial name
  LinearPdo op;
  ExprPtr e;
  std::vector<double> up;  // UPoly coefficients, lowest degree first
};

inline std::vector<double> upoly_add(std::vector<double> a, const std::vector<double>& b, double sb) {
  if (a.size() < b.size()) a.resize(b.size(), 0.0);
  for (std::size_t i = 0; i < b.size(); ++i) a[i] += sb * b[i];
  return a;
}
inline std::vector<double> upoly_mul(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> c(a.size() + b.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) c[i + j] += a[i] * b[j];
  return c;
}

class Elaborator {
public:
  struct Symbol {
    enum Kind { Var, Unknown, Source, Param, Coeff, Op, PolyDef } kind;
    std::size_t index = 0;
    double value = 0.0;
    Poly<double> f;
    LinearPdo op;
    std::vector<double> up;
  };

  PdeExpression run(const std::vector<Statement>& stmts) {
    // Coordinates first so every polynomial has its final number of variables.
    for (const auto& s : stmts) {
      if (s.keyword != "space" && s.keyword != "time") continue;
      for (const auto& t : s.names) {
        declare(t, Symbol{Symbol::Var, out_.variables.size(), 0.0, {}, {}, {}});
        out_.variables.push_back(t.text);
        out_.is_time.push_back(s.keyword == "time");
      }
    }
    n_ = out_.variables.size();
    if (n_ == 0) {
      throw ParseError(1, 1, "no coordinates declared (use `space x1, ...`)");
    }
    for (const auto& s : stmts) {
      if (s.keyword == "space" || s.keyword == "time") continue;
      if (s.keyword == "unknown" || s.keyword == "source") {
        auto& list = s.keyword == "unknown" ? out_.unknowns : out_.sources;
        for (const auto& t : s.names) {
          declare(t, Symbol{s.keyword == "unknown" ? Symbol::Unknown : Symbol::Source, list.size(), 0.0,
                            {}, {}, {}});
          list.push_back(t.text);
        }
      } else if (s.keyword == "param") {
        Value v = eval(*s.rhs);
        if (v.kind != Value::Scalar) fail(*s.rhs, "a param must be a number");
        declare(s.names[0], Symbol{Symbol::Param, 0, v.s, {}, {}, {}});
      } else if (s.keyword == "coeff") {
        Value v = eval(*s.rhs);
        if (v.kind != Value::Scalar && v.kind != Value::Func) {
          fail(*s.rhs, "a coeff must be a polynomial in the coordinates");
        }
        Poly<double> f = v.kind == Value::Scalar ? Poly<double>::constant(n_, v.s) : v.f;
        declare(s.names[0], Symbol{Symbol::Coeff, 0, 0.0, f, {}, {}});
        out_.coefficients.emplace_back(s.names[0].text, f);
      } else if (s.keyword == "op") {
        Value v = eval(*s.rhs);
        if (v.kind == Value::Field || v.kind == Value::UPoly || v.kind == Value::PolyRef) {
          fail(*s.rhs, "an op must be a linear differential operator");
        }
        declare(s.names[0], Symbol{Symbol::Op, 0, 0.0, {}, to_op(v), {}});
      } else if (s.keyword == "poly") {
        formal_ = s.formal;
        Value v = eval(*s.rhs);
        formal_.clear();
        if (v.kind == Value::Scalar) v = Value{Value::UPoly, 0, {}, {}, {}, {}, {v.s}};
        if (v.kind != Value::UPoly) fail(*s.rhs, "a poly must have constant coefficients");
        declare(s.names[0], Symbol{Symbol::PolyDef, 0, 0.0, {}, {}, v.up});
      } else {
        Value l = eval(*s.lhs), r = eval(*s.rhs);
        out_.equations.push_back({field_of(l, *s.lhs), field_of(r, *s.rhs)});
      }
    }
    if (out_.equations.empty()) throw ParseError(1, 1, "no equations");
    if (!out_.sources.empty() && out_.sources.size() != out_.equations.size()) {
      throw ValidationError("declared " + std::to_string(out_.sources.size()) + " source components for " +
                            std::to_string(out_.equations.size()) + " equations");
    }
    return out_;
  }

private:
  [[noreturn]] static void fail(const SNode& at, const std::string& msg) { throw ParseError(at.line, at.col, msg); }

  void declare(const Token& t, Symbol s) {
    if (symbols_.count(t.text) || t.text == "I" || t.text == "lap" || derivative_var(t.text)) {
      throw ParseError(t.line, t.col, "'" + t.text + "' is already declared or reserved");
    }
    symbols_.emplace(t.text, std::move(s));
  }

  [[nodiscard]] std::optional<std::size_t> derivative_var(const std::string& id) const {
    if (id.size() < 2 || id[0] != 'd') return std::nullopt;
    auto it = symbols_.find(id.substr(1));
    if (it == symbols_.end() || it->second.kind != Symbol::Var) return std::nullopt;
    return it->second.index;
  }

  [[nodiscard]] Poly<double> constant(double v) const { return Poly<double>::constant(n_, v); }

  [[nodiscard]] LinearPdo to_op(const Value& v) const {
    switch (v.kind) {
      case Value::Scalar: return LinearPdo::identity(n_) * v.s;
      case Value::Func: return LinearPdo::multiplication(v.f);
      case Value::Op: return v.op;
      default: throw ValidationError("internal: not an operator value");
    }
  }
  static ExprPtr to_field(const Value& v) {
    switch (v.kind) {
      case Value::Scalar: return expr::constant(v.s);
      case Value::Func:
        if (v.name.empty() && v.f.is_constant()) return expr::constant(v.f.constant_term());
        return expr::coeff(v.name, v.f);
      case Value::Field: return v.e;
      default: throw ValidationError("internal: not a field value");
    }
  }
  static ExprPtr field_of(const Value& v, const SNode& at) {
    if (v.kind == Value::Scalar || v.kind == Value::Func || v.kind == Value::Field) return to_field(v);
    fail(at, v.kind == Value::Op ? "operator is not applied to anything" : "expected a field expression");
  }
  static bool is_upoly_like(const Value& v) { return v.kind == Value::Scalar || v.kind == Value::UPoly; }
  static std::vector<double> as_upoly(const Value& v) { return v.kind == Value::Scalar ? std::vector{v.s} : v.up; }
  static Value upoly(std::vector<double> c) {
    Value v;
    v.kind = Value::UPoly;
    v.up = std::move(c);
    return v;
  }
  static Value scalar(double s) {
    Value v;
    v.s = s;
    return v;
  }
  Value func(Poly<double> f) const {
    Value v;
    v.kind = Value::Func;
    v.f = std::move(f);
    return v;
  }
  static Value op(LinearPdo o) {
    Value v;
    v.kind = Value::Op;
    v.op = std::move(o);
    return v;
  }
  static Value field(ExprPtr e) {
    Value v;
    v.kind = Value::Field;
    v.e = std::move(e);
    return v;
  }
  Poly<double> as_func(const Value& v) const { return v.kind == Value::Scalar ? constant(v.s) : v.f; }

  Value eval(const SNode& s) {
    switch (s.kind) {
      case SNode::Num: return scalar(s.num);
      case SNode::Id: return lookup(s);
      case SNode::Neg: return negate(eval(*s.a), s);
      case SNode::Call: return call(eval(*s.a), eval(*s.b), s);
      case SNode::Bin: break;
    }
    Value a = eval(*s.a);
    Value b = eval(*s.b);
    if (s.op == '+') return add(a, b, 1.0, s);
    if (s.op == '-') return add(a, b, -1.0, s);
    if (s.op == '*') return mul(a, b, s);
    return raise(a, b, s);
  }

  Value lookup(const SNode& s) {
    if (!formal_.empty() && s.id == formal_) return upoly({0.0, 1.0});
    auto it = symbols_.find(s.id);
    if (it != symbols_.end()) {
      const Symbol& sym = it->second;
      switch (sym.kind) {
        case Symbol::Var: return func(Poly<double>::variable(n_, sym.index, 1.0));
        case Symbol::Unknown: return field(expr::unknown(sym.index));
        case Symbol::Source: return field(expr::source(sym.index));
        case Symbol::Param: return scalar(sym.value);
        case Symbol::Coeff: {
          Value v = func(sym.f);
          v.name = s.id;
          return v;
        }
        case Symbol::Op: return op(sym.op);
        case Symbol::PolyDef: {
          Value v;
          v.kind = Value::PolyRef;
          v.name = s.id;
          v.up = sym.up;
          return v;
        }
      }
    }
    if (auto j = derivative_var(s.id)) return op(LinearPdo::partial(n_, *j));
    if (s.id == "I") return op(LinearPdo::identity(n_));
    if (s.id == "lap") {
      LinearPdo L = LinearPdo::zero(n_);
      for (std::size_t j = 0; j < n_; ++j) {
        if (!out_.is_time[j]) L += LinearPdo::partial(n_, j, 2);
      }
      return op(L);
    }
    fail(s, "undeclared symbol '" + s.id + "'");
  }

  Value negate(const Value& v, const SNode& at) {
    switch (v.kind) {
      case Value::Scalar: return scalar(-v.s);
      case Value::Func: return func(-v.f);
      case Value::Op: return op(-v.op);
      case Value::Field: return field(expr::neg(v.e));
      case Value::UPoly: return upoly(upoly_add({}, v.up, -1.0));
      case Value::PolyRef: break;
    }
    fail(at, "cannot negate a polynomial name; apply it first");
  }

  Value add(const Value& a, const Value& b, double sb, const SNode& at) {
    using K = Value;
    if (a.kind == K::PolyRef || b.kind == K::PolyRef) fail(at, "a polynomial name must be applied");
    if (a.kind == K::Scalar && b.kind == K::Scalar) return scalar(a.s + sb * b.s);
    if (a.kind == K::UPoly || b.kind == K::UPoly) {
      if (!is_upoly_like(a) || !is_upoly_like(b)) fail(at, "mixing a polynomial variable with other kinds");
      return upoly(upoly_add(as_upoly(a), as_upoly(b), sb));
    }
    if (a.kind == K::Field || b.kind == K::Field) {
      if (a.kind == K::Op || b.kind == K::Op) fail(at, "cannot add an operator to a field; apply it first");
      ExprPtr rb = to_field(b);
      return field(expr::add(to_field(a), sb < 0 ? expr::neg(rb) : rb));
    }
    if (a.kind == K::Op || b.kind == K::Op) return op(to_op(a) + to_op(b) * sb);
    return func(as_func(a) + as_func(b) * sb);
  }

  Value mul(const Value& a, const Value& b, const SNode& at) {
    using K = Value;
    if (a.kind == K::PolyRef || b.kind == K::PolyRef) fail(at, "a polynomial name must be applied");
    if (a.kind == K::Scalar && b.kind == K::Scalar) return scalar(a.s * b.s);
    if (a.kind == K::UPoly || b.kind == K::UPoly) {
      if (!is_upoly_like(a) || !is_upoly_like(b)) fail(at, "mixing a polynomial variable with other kinds");
      return upoly(upoly_mul(as_upoly(a), as_upoly(b)));
    }
    if (a.kind == K::Field || b.kind == K::Field) {
      if (a.kind == K::Op || b.kind == K::Op) {
        fail(at, "an operator multiplies a field; use call syntax A(u) to apply it");
      }
      return field(expr::mul(to_field(a), to_field(b)));
    }
    if (a.kind == K::Op || b.kind == K::Op) return op(compose(to_op(a), to_op(b)));
    if (a.kind == K::Scalar) return func(b.f * a.s);
    if (b.kind == K::Scalar) return func(a.f * b.s);
    return func(a.f * b.f);
  }

  Value raise(const Value& a, const Value& b, const SNode& at) {
    if (b.kind != Value::Scalar || b.s < 0 || b.s != std::floor(b.s) || b.s > 64) {
      fail(*at.b, "exponent must be a nonnegative integer constant");
    }
    const auto k = static_cast<unsigned>(b.s);
    switch (a.kind) {
      case Value::Scalar: return scalar(std::pow(a.s, k));
      case Value::Func: return func(a.f.pow(k));
      case Value::Op: return op(power(a.op, k));
      case Value::Field: return field(expr::pow(a.e, k));
      case Value::UPoly: {
        std::vector<double> r{1.0};
        for (unsigned i = 0; i < k; ++i) r = upoly_mul(r, a.up);
        return upoly(r);
      }
      case Value::PolyRef: break;
    }
    fail(at, "a polynomial name must be applied before raising it to a power");
  }

  Value call(const Value& f, const Value& x, const SNode& at) {
    if (f.kind == Value::Op) {
      if (x.kind == Value::Op) return op(compose(f.op, x.op));
      if (x.kind == Value::Scalar || x.kind == Value::Func || x.kind == Value::Field) {
        return field(expr::apply(f.op, to_field(x)));
      }
      fail(at, "operators apply to fields or operators");
    }
    if (f.kind == Value::PolyRef) {
      // Horner: Q(x) = c_0 + x (c_1 + x (c_2 + ...)).
      Value acc = scalar(f.up.back());
      for (std::size_t i = f.up.size() - 1; i-- > 0;) {
        acc = add(mul(x, acc, at), scalar(f.up[i]), 1.0, at);
      }
      if (x.kind == Value::Op && acc.kind == Value::Scalar) return op(to_op(acc));
      if (acc.kind == Value::Field) fail(at, "polynomials apply to operators or numbers, not fields");
      return acc;
    }
    fail(at, "this expression cannot be called");
  }

  std::map<std::string, Symbol> symbols_;
  PdeExpression out_;
  std::size_t n_ = 0;
  std::string formal_;
};

}  // namespace detail

inline PdeExpression parse_pde(std::string_view text) {
  detail::Parser p(detail::lex(text));
  return detail::Elaborator{}.run(p.statements());
}

// ---------------------------------------------------------------------------
// Pretty printer (output parses back to the same tree)

namespace detail {

inline std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string monomial(const Exponents& e, const std::vector<std::string>& names, const char* prefix = "") {
  std::string s;
  for (std::size_t j = 0; j < e.size(); ++j) {
    if (e[j] == 0) continue;
    if (!s.empty()) s += "*";
    s += prefix + names[j];
    if (e[j] > 1) s += "^" + std::to_string(e[j]);
  }
  return s;
}

inline std::string poly_text(const Poly<double>& p, const std::vector<std::string>& names) {
  if (p.is_zero()) return "0";
  std::string s;
  for (const auto& [e, c] : p.terms()) {
    const std::string m = monomial(e, names);
    std::string t;
    if (m.empty()) t = num(std::abs(c));
    else if (std::abs(c) == 1.0) t = m;
    else t = num(std::abs(c)) + "*" + m;
    if (s.empty()) s = c < 0 ? "-" + t : t;
    else s += (c < 0 ? " - " : " + ") + t;
  }
  return s;
}

inline std::string pdo_text(const LinearPdo& op, const std::vector<std::string>& names) {
  if (op.is_zero()) return "0*I";
  std::string s;
  for (const auto& [a, c] : op.terms) {
    std::string d = monomial(a, names, "d");
    if (d.empty()) d = "I";
    std::string t;
    if (c.is_constant()) {
      const double v = c.constant_term();
      if (v == 1.0) t = d;
      else if (v == -1.0) t = "-" + d;
      else t = num(v) + "*" + d;
    } else {
      t = "(" + poly_text(c, names) + ")*" + d;
    }
    s += (s.empty() ? "" : " + ") + t;
  }
  return s;
}

inline int precedence(const Expr& e) {
  switch (e.kind) {
    case ExprKind::Add: return 1;
    case ExprKind::Mul: return 2;
    case ExprKind::Neg: return 3;
    case ExprKind::Pow: return 4;
    default: return 5;
  }
}

inline std::string expr_text(const Expr& e, const PdeExpression& sys, int min_prec) {
  std::string s;
  switch (e.kind) {
    case ExprKind::Const: s = e.value < 0 ? "(" + num(e.value) + ")" : num(e.value); break;
    case ExprKind::Unknown: s = sys.unknowns.at(e.index); break;
    case ExprKind::Source: s = sys.sources.at(e.index); break;
    case ExprKind::Coeff: s = e.name.empty() ? "(" + poly_text(e.func, sys.variables) + ")" : e.name; break;
    case ExprKind::Add:
      if (e.b->kind == ExprKind::Neg) s = expr_text(*e.a, sys, 1) + " - " + expr_text(*e.b->a, sys, 2);
      else s = expr_text(*e.a, sys, 1) + " + " + expr_text(*e.b, sys, 2);
      break;
    case ExprKind::Mul: s = expr_text(*e.a, sys, 2) + "*" + expr_text(*e.b, sys, 3); break;
    case ExprKind::Neg: s = "-" + expr_text(*e.a, sys, 3); break;
    case ExprKind::Pow: s = expr_text(*e.a, sys, 5) + "^" + std::to_string(e.exponent); break;
    case ExprKind::Apply: {
      std::string o = pdo_text(e.op, sys.variables);
      const bool bare = std::all_of(o.begin(), o.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; });
      s = (bare ? o : "(" + o + ")") + "(" + expr_text(*e.a, sys, 0) + ")";
      break;
    }
  }
  return precedence(e) < min_prec ? "(" + s + ")" : s;
}

}  // namespace detail

inline std::string print_expr(const Expr& e, const PdeExpression& sys) { return detail::expr_text(e, sys, 0); }

inline std::string print_pde(const PdeExpression& sys) {
  std::string out;
  auto list = [&](const char* kw, const std::vector<std::string>& names) {
    if (names.empty()) return;
    out += kw;
    for (std::size_t i = 0; i < names.size(); ++i) out += (i ? ", " : " ") + names[i];
    out += "\n";
  };
  for (std::size_t j = 0; j < sys.variables.size();) {
    std::vector<std::string> run;
    const bool t = sys.is_time[j];
    for (; j < sys.variables.size() && sys.is_time[j] == t; ++j) run.push_back(sys.variables[j]);
    list(t ? "time" : "space", run);
  }
  list("unknown", sys.unknowns);
  list("source", sys.sources);
  for (const auto& [name, f] : sys.coefficients) out += "coeff " + name + " = " + detail::poly_text(f, sys.variables) + "\n";
  for (const auto& eq : sys.equations) out += print_expr(*eq.lhs, sys) + " = " + print_expr(*eq.rhs, sys) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Symbolic evaluation on polynomial inputs

/// Original tree with u_j, g_s polynomials in x.
inline Poly<double> eval_symbolic(const Expr& e, const std::vector<Poly<double>>& u,
                                  const std::vector<Poly<double>>& g, std::size_t nvars) {
  switch (e.kind) {
    case ExprKind::Const: return Poly<double>::constant(nvars, e.value);
    case ExprKind::Unknown: return u.at(e.index);
    case ExprKind::Source: return g.at(e.index);
    case ExprKind::Coeff: return e.func;
    case ExprKind::Add: return eval_symbolic(*e.a, u, g, nvars) + eval_symbolic(*e.b, u, g, nvars);
    case ExprKind::Mul: return eval_symbolic(*e.a, u, g, nvars) * eval_symbolic(*e.b, u, g, nvars);
    case ExprKind::Pow: return eval_symbolic(*e.a, u, g, nvars).pow(e.exponent);
    case ExprKind::Neg: return -eval_symbolic(*e.a, u, g, nvars);
    case ExprKind::Apply: return e.op.apply(eval_symbolic(*e.a, u, g, nvars));
  }
  return Poly<double>(nvars);
}

/// lhs - rhs of every equation; zero polynomials when u, g solve the system.
inline std::vector<Poly<double>> residuals(const PdeExpression& sys, const std::vector<Poly<double>>& u,
                                           const std::vector<Poly<double>>& g) {
  if (u.size() != sys.m()) throw ValidationError("need one polynomial per unknown");
  std::vector<Poly<double>> out;
  for (const auto& eq : sys.equations) {
    out.push_back(eval_symbolic(*eq.lhs, u, g, sys.n()) - eval_symbolic(*eq.rhs, u, g, sys.n()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Translation

/// l-indices place x_j on z_{l_j}; q-indices place u_j on i_{q_j}.
struct IndexMaps {
  std::vector<std::size_t> l, q;
  unsigned level = 2;

  [[nodiscard]] std::size_t zdim() const { return std::size_t{1} << level; }
  [[nodiscard]] EmbeddingMap embedding() const { return {l, level}; }
};

struct TranslationOptions {
  std::vector<std::size_t> l, q;  // empty: l_j = j - 1, q_j = j - 1
  unsigned level = 0;             // 0: the smallest admissible level
};

struct TranslatedPde {
  IndexMaps maps;
  std::size_t n = 0, m = 0, k = 0;
  std::vector<std::string> unknowns, sources;
  /// Equation s (0-based) is the i_s component of Q(uhat) = ghat.
  std::vector<Equation> equations;
};

namespace detail {
inline unsigned ceil_log2(std::size_t v) {
  unsigned t = 0;
  while ((std::size_t{1} << t) < v) ++t;
  return t;
}
}  // namespace detail

/// Smallest r >= max(t, t1, t2, 2) with 2^t >= n (and > max l_j), 2^t1 >= k, 2^t2 > max q_j.
inline unsigned required_level(std::size_t n, std::size_t k, const std::vector<std::size_t>& l,
                               const std::vector<std::size_t>& q) {
  std::size_t max_l = 0, max_q = 0;
  for (auto v : l) max_l = std::max(max_l, v);
  for (auto v : q) max_q = std::max(max_q, v);
  const unsigned t = std::max(detail::ceil_log2(n), detail::ceil_log2(max_l + 1));
  const unsigned t1 = detail::ceil_log2(k);
  const unsigned t2 = detail::ceil_log2(max_q + 1);
  return std::max({t, t1, t2, 2u});
}

inline IndexMaps resolve_maps(std::size_t n, std::size_t m, std::size_t k, const TranslationOptions& opt) {
  IndexMaps maps;
  maps.l = opt.l;
  maps.q = opt.q;
  if (maps.l.empty())
    for (std::size_t j = 0; j < n; ++j) maps.l.push_back(j);
  if (maps.q.empty())
    for (std::size_t j = 0; j < m; ++j) maps.q.push_back(j);
  if (maps.l.size() != n) throw ValidationError("need one l-index per coordinate");
  if (maps.q.size() != m) throw ValidationError("need one q-index per unknown");
  auto distinct = [](std::vector<std::size_t> v) {
    std::sort(v.begin(), v.end());
    return std::adjacent_find(v.begin(), v.end()) == v.end();
  };
  if (!distinct(maps.l)) throw ValidationError("l-indices must be distinct");
  if (!distinct(maps.q)) throw ValidationError("q-indices must be distinct");
  const unsigned need = required_level(n, k, maps.l, maps.q);
  if (opt.level != 0 && opt.level < need) {
    throw ValidationError("insufficient algebra level " + std::to_string(opt.level) + " (need r >= " +
                          std::to_string(need) + " for n = " + std::to_string(n) + ", k = " + std::to_string(k) +
                          " and the chosen indices)");
  }
  maps.level = opt.level == 0 ? need : opt.level;
  if (maps.level > kMaxLevel) throw ValidationError("algebra level above the supported maximum");
  return maps;
}

/// x_j -> z_{l_j} on a polynomial (the coefficient lift h^c restricted to polynomials).
inline Poly<double> lift_poly(const Poly<double>& f, const IndexMaps& maps) { return f.remap(maps.zdim(), maps.l); }

/// dx_j -> dz_{l_j}, c_alpha -> h^{c_alpha}.
inline LinearPdo translate_pdo(const LinearPdo& A, const IndexMaps& maps) {
  if (A.nvars != maps.l.size()) throw ValidationError("PDO dimension does not match the index map");
  return A.remap(maps.zdim(), maps.l);
}

namespace detail {
inline ExprPtr translate_expr(const Expr& e, const IndexMaps& maps) {
  switch (e.kind) {
    case ExprKind::Const: return expr::constant(e.value);
    case ExprKind::Unknown: return expr::unknown(maps.q.at(e.index));
    case ExprKind::Source: return expr::source(e.index);
    case ExprKind::Coeff: return expr::coeff(e.name, lift_poly(e.func, maps));
    case ExprKind::Add: return expr::add(translate_expr(*e.a, maps), translate_expr(*e.b, maps));
    case ExprKind::Mul: return expr::mul(translate_expr(*e.a, maps), translate_expr(*e.b, maps));
    case ExprKind::Pow: return expr::pow(translate_expr(*e.a, maps), e.exponent);
    case ExprKind::Neg: return expr::neg(translate_expr(*e.a, maps));
    case ExprKind::Apply: return expr::apply(translate_pdo(e.op, maps), translate_expr(*e.a, maps));
  }
  return nullptr;
}
}  // namespace detail

inline TranslatedPde translate_system(const PdeExpression& sys, const TranslationOptions& opt = {}) {
  TranslatedPde out;
  out.n = sys.n();
  out.m = sys.m();
  out.k = sys.k();
  out.maps = resolve_maps(out.n, out.m, out.k, opt);
  out.unknowns = sys.unknowns;
  out.sources = sys.sources;
  for (const auto& eq : sys.equations) {
    out.equations.push_back({detail::translate_expr(*eq.lhs, out.maps), detail::translate_expr(*eq.rhs, out.maps)});
  }
  return out;
}

/// uhat = sum_j h^{u_j} i_{q_j} for polynomial u_j in x.
inline Poly<CdElement> lift_unknowns(const std::vector<Poly<double>>& u, const IndexMaps& maps) {
  const CdElement zero(maps.level);
  Poly<CdElement> out(maps.zdim(), zero);
  for (std::size_t j = 0; j < u.size(); ++j) {
    out += lift_poly(u[j], maps) * Poly<CdElement>::constant(maps.zdim(), CdElement::basis(maps.level, maps.q.at(j)), zero);
  }
  return out;
}

/// ghat = sum_s h^{g_s} i_{s-1} (1-based s).
inline Poly<CdElement> lift_sources(const std::vector<Poly<double>>& g, const IndexMaps& maps) {
  const CdElement zero(maps.level);
  Poly<CdElement> out(maps.zdim(), zero);
  for (std::size_t s = 0; s < g.size(); ++s) {
    out += lift_poly(g[s], maps) * Poly<CdElement>::constant(maps.zdim(), CdElement::basis(maps.level, s), zero);
  }
  return out;
}

/// Translated tree over polynomial uhat, ghat; pi_q is applied coefficient-wise
/// through the algebra formula for the projections.
inline Poly<double> eval_translated(const Expr& e, const Poly<CdElement>& uhat, const Poly<CdElement>& ghat) {
  const std::size_t nz = uhat.nvars();
  auto project = [nz](const Poly<CdElement>& p, std::size_t j) {
    return p.map_coeffs([j](const CdElement& c) { return pi_project(j, c); }, 0.0);
  };
  switch (e.kind) {
    case ExprKind::Const: return Poly<double>::constant(nz, e.value);
    case ExprKind::Unknown: return project(uhat, e.index);
    case ExprKind::Source: return project(ghat, e.index);
    case ExprKind::Coeff: return e.func;
    case ExprKind::Add: return eval_translated(*e.a, uhat, ghat) + eval_translated(*e.b, uhat, ghat);
    case ExprKind::Mul: return eval_translated(*e.a, uhat, ghat) * eval_translated(*e.b, uhat, ghat);
    case ExprKind::Pow: return eval_translated(*e.a, uhat, ghat).pow(e.exponent);
    case ExprKind::Neg: return -eval_translated(*e.a, uhat, ghat);
    case ExprKind::Apply: return e.op.apply(eval_translated(*e.a, uhat, ghat));
  }
  return Poly<double>(nz);
}

/// Q(uhat) - ghat = sum_s (Lhat_s - Rhat_s) i_s.
inline Poly<CdElement> translated_residual(const TranslatedPde& tp, const Poly<CdElement>& uhat,
                                           const Poly<CdElement>& ghat) {
  const CdElement zero(tp.maps.level);
  Poly<CdElement> out(tp.maps.zdim(), zero);
  for (std::size_t s = 0; s < tp.equations.size(); ++s) {
    const Poly<double> r = eval_translated(*tp.equations[s].lhs, uhat, ghat) -
                           eval_translated(*tp.equations[s].rhs, uhat, ghat);
    out += r * Poly<CdElement>::constant(tp.maps.zdim(), CdElement::basis(tp.maps.level, s), zero);
  }
  return out;
}

/// Restriction to z = z(x), i.e. back to polynomials in x.
inline Poly<CdElement> lower_poly(const Poly<CdElement>& p, const IndexMaps& maps) { return p.restrict_to(maps.l); }
inline Poly<double> lower_poly(const Poly<double>& p, const IndexMaps& maps) { return p.restrict_to(maps.l); }

inline Poly<double> component(const Poly<CdElement>& p, std::size_t j) {
  return p.map_coeffs([j](const CdElement& c) { return c[j]; }, 0.0);
}

/// Largest coefficient of (lowered translated residual) - (original residual) over all equations.
inline double equivalence_gap(const PdeExpression& sys, const TranslatedPde& tp, const std::vector<Poly<double>>& u,
                              const std::vector<Poly<double>>& g) {
  const auto orig = residuals(sys, u, g);
  const auto low = lower_poly(translated_residual(tp, lift_unknowns(u, tp.maps), lift_sources(g, tp.maps)), tp.maps);
  double gap = 0.0;
  for (std::size_t s = 0; s < tp.maps.zdim(); ++s) {
    Poly<double> d = component(low, s);
    if (s < orig.size()) d -= orig[s];
    gap = std::max(gap, d.max_abs_coeff());
  }
  return gap;
}

// ---------------------------------------------------------------------------
// Grid evaluation (finite differences)

namespace detail {

/// Pointwise complex scalar fields; `axis_of[v]` is the lattice axis that
/// variable v of polynomials and PDOs differentiates along.
template <class Leaf>
GridField eval_grid(const Expr& e, const Grid& grid, const std::vector<std::optional<std::size_t>>& axis_of,
                    const std::function<std::vector<double>(std::span<const double>)>& coords, const Leaf& leaf) {
  auto poly_field = [&](const Poly<double>& p) {
    GridField f = GridField::scalar(grid);
    f.fill([&](std::span<const double> x, cplx* out) {
      const auto z = coords(x);
      out[0] = p.evaluate(z);
    });
    return f;
  };
  auto rec = [&](const Expr& s) { return eval_grid(s, grid, axis_of, coords, leaf); };
  switch (e.kind) {
    case ExprKind::Const: {
      GridField f = GridField::scalar(grid);
      std::fill(f.data().begin(), f.data().end(), cplx{e.value});
      return f;
    }
    case ExprKind::Unknown:
    case ExprKind::Source: return leaf(e);
    case ExprKind::Coeff: return poly_field(e.func);
    case ExprKind::Add: {
      GridField f = rec(*e.a);
      f += rec(*e.b);
      return f;
    }
    case ExprKind::Mul: {
      GridField f = rec(*e.a);
      const GridField g = rec(*e.b);
      for (std::size_t i = 0; i < f.data().size(); ++i) f.data()[i] *= g.data()[i];
      return f;
    }
    case ExprKind::Pow: {
      const GridField base = rec(*e.a);
      GridField f = base;
      for (auto& v : f.data()) v = 1.0;
      for (unsigned k = 0; k < e.exponent; ++k)
        for (std::size_t i = 0; i < f.data().size(); ++i) f.data()[i] *= base.data()[i];
      return f;
    }
    case ExprKind::Neg: {
      GridField f = rec(*e.a);
      f *= -1.0;
      return f;
    }
    case ExprKind::Apply: {
      const GridField arg = rec(*e.a);
      GridField out = arg.zeros_like();
      for (const auto& [al, c] : e.op.terms) {
        GridField d = arg;
        for (std::size_t v = 0; v < al.size(); ++v) {
          if (al[v] == 0) continue;
          if (!axis_of[v]) throw ValidationError("derivative along a coordinate outside the grid");
          d = derivative(d, *axis_of[v], al[v]);
        }
        const GridField cf = poly_field(c);
        for (std::size_t i = 0; i < d.data().size(); ++i) out.data()[i] += cf.data()[i] * d.data()[i];
      }
      return out;
    }
  }
  return GridField::scalar(grid);
}

}  // namespace detail

/// lhs - rhs of every equation with u_j, g_s sampled on the grid over U
/// (grid axes are the coordinates x_1..x_n in order).
inline std::vector<GridField> residuals_on_grid(const PdeExpression& sys, const Grid& grid,
                                                const std::vector<GridField>& u, const std::vector<GridField>& g) {
  if (grid.dim() != sys.n()) throw ValidationError("grid dimension does not match the coordinates");
  std::vector<std::optional<std::size_t>> axis_of(sys.n());
  for (std::size_t j = 0; j < sys.n(); ++j) axis_of[j] = j;
  auto coords = [](std::span<const double> x) { return std::vector<double>(x.begin(), x.end()); };
  auto leaf = [&](const Expr& e) { return e.kind == ExprKind::Unknown ? u.at(e.index) : g.at(e.index); };
  std::vector<GridField> out;
  for (const auto& eq : sys.equations) {
    GridField r = detail::eval_grid(*eq.lhs, grid, axis_of, coords, leaf);
    r -= detail::eval_grid(*eq.rhs, grid, axis_of, coords, leaf);
    out.push_back(std::move(r));
  }
  return out;
}

/// Q(uhat) - ghat on the grid nodes z(x): uhat and ghat are A_r-valued fields
/// on the same lattice; d/dz_{l_j} differentiates along grid axis j.
inline GridField translated_residual_on_grid(const TranslatedPde& tp, const Grid& grid, const GridField& uhat,
                                             const GridField& ghat) {
  const IndexMaps& mp = tp.maps;
  if (grid.dim() != tp.n) throw ValidationError("grid dimension does not match the coordinates");
  if (uhat.level() != mp.level || ghat.level() != mp.level) throw ValidationError("lifted fields have the wrong level");
  std::vector<std::optional<std::size_t>> axis_of(mp.zdim());
  for (std::size_t j = 0; j < tp.n; ++j) axis_of[mp.l[j]] = j;
  const EmbeddingMap emb = mp.embedding();
  auto coords = [&emb](std::span<const double> x) {
    const CdElement z = embed_point(x, emb);
    return std::vector<double>(z.coeffs().begin(), z.coeffs().end());
  };
  auto leaf = [&](const Expr& e) {
    const GridField& src = e.kind == ExprKind::Unknown ? uhat : ghat;
    GridField f = GridField::scalar(grid);
    for (std::size_t i = 0; i < f.nodes(); ++i) {
      CdElement c(mp.level);
      for (std::size_t j = 0; j < c.dim(); ++j) c[j] = src.at(i)[j].real();
      f.at(i)[0] = pi_project(e.index, c);
    }
    return f;
  };
  GridField out = GridField::hypercomplex(grid, mp.level);
  for (std::size_t s = 0; s < tp.equations.size(); ++s) {
    GridField r = detail::eval_grid(*tp.equations[s].lhs, grid, axis_of, coords, leaf);
    r -= detail::eval_grid(*tp.equations[s].rhs, grid, axis_of, coords, leaf);
    for (std::size_t i = 0; i < out.nodes(); ++i) out.at(i)[s] += r.at(i)[0];
  }
  return out;
}

/// sum_j f_j i_{idx_j} as one A_r-valued field.
inline GridField assemble_hypercomplex(const std::vector<GridField>& f, const std::vector<std::size_t>& idx,
                                       unsigned level) {
  if (f.empty()) throw ValidationError("nothing to assemble");
  GridField out = GridField::hypercomplex(f[0].grid(), level);
  for (std::size_t j = 0; j < f.size(); ++j) {
    for (std::size_t i = 0; i < out.nodes(); ++i) out.at(i)[idx.at(j)] += f[j].at(i)[0];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Lifting sampled functions

/// h^f on V: the values of f indexed by z(x) for grid nodes x.
struct LiftedFunction {
  EmbeddingMap map;
  GridField values;

  /// h^f(z) for z = z(x) at a grid node; other points are outside V's grid.
  [[nodiscard]] cplx at(const CdElement& z) const {
    const auto x = extract_point(z, map);
    if (embed_point(x, map) != z) throw ValidationError("point is outside the image of the embedding");
    const Lattice& lat = values.lattice();
    std::vector<std::size_t> idx(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) {
      const Axis& ax = lat.axis(j);
      const double pos = (x[j] - ax.lo) / ax.h();
      const double r = std::round(pos);
      if (std::abs(pos - r) > 1e-9 || r < 0 || r > static_cast<double>(ax.count - 1)) {
        throw ValidationError("point is not a grid node of V");
      }
      idx[j] = static_cast<std::size_t>(r);
    }
    return values.at(lat.flatten(idx))[0];
  }
};

inline LiftedFunction lift_function(const GridField& f, const EmbeddingMap& map) {
  if (f.kind() != ValueKind::ComplexScalar || f.arity() != Arity::X) {
    throw ValidationError("lift_function expects a scalar field on U");
  }
  if (f.grid().dim() != map.size()) throw ValidationError("grid dimension does not match the embedding");
  return {map, f};
}

inline GridField lower_function(const LiftedFunction& h, const Grid& grid) {
  if (grid.dim() != h.map.size()) throw ValidationError("grid dimension does not match the embedding");
  GridField out = GridField::scalar(grid);
  out.fill([&](std::span<const double> x, cplx* v) { v[0] = h.at(embed_point(x, h.map)); });
  return out;
}

// ---------------------------------------------------------------------------
// Vector calculus through sigma f = sum_j (df/dz_{l_j}) i_{q_j}

enum class VectorOp { Div, Grad, Rot };

inline Poly<CdElement> sigma(const Poly<CdElement>& f, const IndexMaps& maps) {
  const CdElement zero(maps.level);
  Poly<CdElement> out(f.nvars(), zero);
  for (std::size_t j = 0; j < maps.l.size(); ++j) {
    out += f.derivative(maps.l[j]) *
           Poly<CdElement>::constant(f.nvars(), CdElement::basis(maps.level, maps.q.at(j)), zero);
  }
  return out;
}

/// div u <-> Re(sigma uhat*), grad u_s <-> sigma uhat_s, rot u <-> -Im(sigma uhat).
inline Poly<CdElement> vector_calculus_map(VectorOp kind, const Poly<CdElement>& arg, const IndexMaps& maps) {
  if (maps.q.size() != maps.l.size()) throw ValidationError("vector calculus needs one q-index per coordinate");
  const CdElement zero(maps.level);
  switch (kind) {
    case VectorOp::Div: {
      const Poly<CdElement> s = sigma(arg.map_coeffs([](const CdElement& c) { return c.conj(); }, zero), maps);
      return s.map_coeffs([&](const CdElement& c) { return CdElement::real(maps.level, c.re()); }, zero);
    }
    case VectorOp::Grad: {
      for (const auto& [e, c] : arg.terms()) {
        if (c.im().norm_sq() != 0.0) throw ValidationError("grad expects a real-valued function");
      }
      return sigma(arg, maps);
    }
    case VectorOp::Rot: {
      if (maps.l.size() != 3 || !is_quaternion_triple(maps.level, maps.q[0], maps.q[1], maps.q[2])) {
        throw ValidationError("rot needs n = 3 and q-indices with i_{q1} i_{q2} = i_{q3}");
      }
      return sigma(arg, maps).map_coeffs([](const CdElement& c) { return c.im() * -1.0; }, zero);
    }
  }
  return Poly<CdElement>(arg.nvars(), zero);
}

// ---------------------------------------------------------------------------
// JSON view of translated systems

namespace detail {

inline nlohmann::json poly_json(const Poly<double>& p) {
  nlohmann::json terms = nlohmann::json::array();
  for (const auto& [e, c] : p.terms()) terms.push_back({{"exponents", e}, {"coeff", c}});
  return terms;
}

inline nlohmann::json expr_json(const Expr& e, bool translated, const std::vector<std::string>& unknowns,
                                const std::vector<std::string>& sources) {
  using nlohmann::json;
  auto rec = [&](const Expr& s) { return expr_json(s, translated, unknowns, sources); };
  switch (e.kind) {
    case ExprKind::Const: return {{"node", "const"}, {"value", e.value}};
    case ExprKind::Unknown:
      if (translated) return {{"node", "project"}, {"index", e.index}, {"of", "uhat"}};
      return {{"node", "unknown"}, {"index", e.index}, {"name", unknowns.at(e.index)}};
    case ExprKind::Source:
      if (translated) return {{"node", "project"}, {"index", e.index}, {"of", "ghat"}};
      return {{"node", "source"}, {"index", e.index}, {"name", sources.empty() ? "" : sources.at(e.index)}};
    case ExprKind::Coeff: {
      json j{{"node", "coeff"}, {"poly", poly_json(e.func)}};
      if (!e.name.empty()) j["name"] = translated ? "h^" + e.name : e.name;
      return j;
    }
    case ExprKind::Add: return {{"node", "add"}, {"args", {rec(*e.a), rec(*e.b)}}};
    case ExprKind::Mul: return {{"node", "mul"}, {"args", {rec(*e.a), rec(*e.b)}}};
    case ExprKind::Pow: return {{"node", "pow"}, {"exponent", e.exponent}, {"arg", rec(*e.a)}};
    case ExprKind::Neg: return {{"node", "neg"}, {"arg", rec(*e.a)}};
    case ExprKind::Apply: {
      json terms = json::array();
      for (const auto& [al, c] : e.op.terms) terms.push_back({{"derivative", al}, {"coeff", poly_json(c)}});
      return {{"node", "apply"}, {"pdo", terms}, {"arg", rec(*e.a)}};
    }
  }
  return {};
}

}  // namespace detail

inline nlohmann::json to_json(const TranslatedPde& tp) {
  nlohmann::json eqs = nlohmann::json::array();
  for (std::size_t s = 0; s < tp.equations.size(); ++s) {
    eqs.push_back({{"component", s},
                   {"lhs", detail::expr_json(*tp.equations[s].lhs, true, tp.unknowns, tp.sources)},
                   {"rhs", detail::expr_json(*tp.equations[s].rhs, true, tp.unknowns, tp.sources)}});
  }
  return {{"level", tp.maps.level}, {"l", tp.maps.l},         {"q", tp.maps.q},
          {"n", tp.n},             {"m", tp.m},               {"k", tp.k},
          {"unknowns", tp.unknowns}, {"equations", eqs}};
}

}  // namespace sbw
