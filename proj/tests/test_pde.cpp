#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "sbw/pde.hpp"

using namespace sbw;

namespace {

Poly<double> random_poly(std::size_t n, unsigned degree, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> c(-1.0, 1.0);
  std::uniform_int_distribution<unsigned> d(0, degree);
  Poly<double> p(n);
  for (int t = 0; t < 6; ++t) {
    Exponents e(n);
    unsigned left = degree;
    for (auto& k : e) {
      k = std::min(left, d(rng));
      left -= k;
    }
    p.add_term(e, c(rng));
  }
  return p;
}

Poly<double> var(std::size_t n, std::size_t j) { return Poly<double>::variable(n, j, 1.0); }
Poly<double> cst(std::size_t n, double v) { return Poly<double>::constant(n, v); }

const char* kBurgers = R"(
space x1
time t
unknown u
dt(u) + u*dx1(u) - dx1(dx1(u)) = 0
)";

}  // namespace

TEST(Parse, BurgersTree) {
  const auto sys = parse_pde(kBurgers);
  ASSERT_EQ(sys.n(), 2u);
  ASSERT_EQ(sys.m(), 1u);
  ASSERT_EQ(sys.equations.size(), 1u);
  // ((dt u + u * dx1 u) - dx1 dx1 u) = 0
  const Expr& top = *sys.equations[0].lhs;
  ASSERT_EQ(top.kind, ExprKind::Add);
  ASSERT_EQ(top.b->kind, ExprKind::Neg);
  ASSERT_EQ(top.b->a->kind, ExprKind::Apply);
  EXPECT_EQ(top.b->a->op.terms.begin()->first, (Exponents{1, 0}));
  ASSERT_EQ(top.b->a->a->kind, ExprKind::Apply);
  EXPECT_EQ(top.b->a->a->a->kind, ExprKind::Unknown);
  const Expr& first = *top.a;
  ASSERT_EQ(first.kind, ExprKind::Add);
  EXPECT_EQ(first.a->kind, ExprKind::Apply);
  EXPECT_EQ(first.a->op.terms.begin()->first, (Exponents{0, 1}));
  EXPECT_EQ(first.b->kind, ExprKind::Mul);
  EXPECT_EQ(first.b->a->kind, ExprKind::Unknown);

  // u = x1: only u*u_x survives.
  const auto r = residuals(sys, {var(2, 0)}, {});
  EXPECT_EQ(r[0].max_abs_coeff(), 1.0);
  EXPECT_EQ(r[0].terms().size(), 1u);
}

TEST(Parse, SobolevBurgersShape) {
  const char* src = R"(
space x1, x2
time t
unknown u
param a = 0.5
param b = -2
param g = 3
op L = lap
poly Q(s) = s^2 + 2*s + 1
Q(dt)(-L^2 + a*L + b)(u) + g*dx1(u^2) = 0
)";
  const auto sys = parse_pde(src);
  const Expr& top = *sys.equations[0].lhs;
  ASSERT_EQ(top.kind, ExprKind::Add);
  ASSERT_EQ(top.a->kind, ExprKind::Apply);
  // (dt + 1)^2 o (-lap^2 + a lap + b): orders 2 in t and 4 in x.
  const LinearPdo& op = top.a->op;
  EXPECT_EQ(op.order(), 6u);
  const double c = op.terms.at(Exponents{4, 0, 2}).constant_term();
  EXPECT_EQ(c, -1.0);
  EXPECT_EQ(op.terms.at(Exponents{2, 0, 1}).constant_term(), 2.0 * 0.5);
  EXPECT_EQ(op.terms.at(Exponents{0, 0, 0}).constant_term(), -2.0);
  EXPECT_EQ(op.terms.at(Exponents{2, 2, 0}).constant_term(), -2.0);
  ASSERT_EQ(top.b->kind, ExprKind::Mul);
  EXPECT_EQ(top.b->b->kind, ExprKind::Apply);
  EXPECT_EQ(top.b->b->a->kind, ExprKind::Pow);
}

TEST(Parse, Errors) {
  try {
    parse_pde("space x1\nunknown u\ndx1(\n");
    FAIL() << "expected a syntax error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_EQ(e.column(), 5u);
  }
  try {
    parse_pde("space x1\nunknown u\n  dx1(u) + w = 0\n");
    FAIL() << "expected an undeclared-symbol error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_EQ(e.column(), 12u);
    EXPECT_NE(std::string(e.what()).find("undeclared symbol 'w'"), std::string::npos);
  }
  EXPECT_THROW(parse_pde("space x1\nunknown u\nu $ 1 = 0\n"), ParseError);
  EXPECT_THROW(parse_pde("space x1\nunknown u\ndx1 = 0\n"), ParseError);
  EXPECT_THROW(parse_pde("space x1\nunknown u\nu^1.5 = 0\n"), ParseError);
  EXPECT_THROW(parse_pde("space x1\nunknown dx1\nu = 0\n"), ParseError);
}

TEST(Parse, PrintParseIdempotent) {
  const std::vector<std::string> sources = {
      kBurgers,
      "space x1, x2\nunknown u, v\nsource g1, g2\ncoeff c = x1^2 - 0.1*x2 + 3\n"
      "c*dx1(u*v) - (x2*dx2 + 2)(u)^2 = g1\n(lap - I)(v) + -u = -g2 + 1e-5",
      "space x\nunknown u\n-(u - 2*u)^3*u = --u",
  };
  for (const auto& s : sources) {
    const std::string p1 = print_pde(parse_pde(s));
    const std::string p2 = print_pde(parse_pde(p1));
    EXPECT_EQ(p1, p2) << p1;
    // Same polynomial content as well.
    const auto a = parse_pde(s), b = parse_pde(p1);
    std::mt19937_64 rng(3);
    std::vector<Poly<double>> u, g;
    for (std::size_t j = 0; j < a.m(); ++j) u.push_back(random_poly(a.n(), 3, rng));
    for (std::size_t j = 0; j < a.k(); ++j) g.push_back(random_poly(a.n(), 2, rng));
    const auto ra = residuals(a, u, g), rb = residuals(b, u, g);
    for (std::size_t s2 = 0; s2 < ra.size(); ++s2) EXPECT_EQ((ra[s2] - rb[s2]).max_abs_coeff(), 0.0);
  }
}

TEST(Pdo, LeibnizComposition) {
  // dx (x dx) = dx + x dx^2
  const std::size_t n = 1;
  const LinearPdo A = compose(LinearPdo::partial(n, 0), LinearPdo::multiplication(var(n, 0)) *
                                                            1.0);
  const LinearPdo B = compose(A, LinearPdo::partial(n, 0));
  EXPECT_EQ(B.terms.at(Exponents{1}).constant_term(), 1.0);
  EXPECT_EQ((B.terms.at(Exponents{2}) - var(n, 0)).max_abs_coeff(), 0.0);
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Poly<double> f = random_poly(2, 5, rng);
    LinearPdo P = LinearPdo::multiplication(random_poly(2, 2, rng));
    P.add({1, 0}, random_poly(2, 2, rng));
    P.add({0, 2}, random_poly(2, 1, rng));
    LinearPdo R = LinearPdo::multiplication(random_poly(2, 2, rng));
    R.add({1, 1}, random_poly(2, 1, rng));
    const Poly<double> lhs = compose(P, R).apply(f);
    const Poly<double> rhs = P.apply(R.apply(f));
    EXPECT_LE((lhs - rhs).max_abs_coeff(), 1e-12);
  }
}

TEST(Translate, PdoMaps) {
  const IndexMaps maps{{0, 1}, {0}, 2};
  const LinearPdo d1 = translate_pdo(LinearPdo::partial(2, 0), maps);
  EXPECT_EQ(d1.nvars, 4u);
  EXPECT_EQ(d1.terms.begin()->first, (Exponents{1, 0, 0, 0}));
  const LinearPdo id = translate_pdo(LinearPdo::identity(2), maps);
  EXPECT_EQ(id.terms.size(), 1u);
  EXPECT_EQ(id.terms.begin()->first, (Exponents{0, 0, 0, 0}));

  // Laplacian on random polynomials, with non-default l.
  const IndexMaps m2{{3, 1}, {0}, 2};
  LinearPdo lap = LinearPdo::partial(2, 0, 2) + LinearPdo::partial(2, 1, 2);
  lap.add({1, 0}, var(2, 1) * 2.0);  // variable coefficient too
  const LinearPdo lhat = translate_pdo(lap, m2);
  std::mt19937_64 rng(11);
  for (int t = 0; t < 20; ++t) {
    const Poly<double> f = random_poly(2, 6, rng);
    const Poly<double> lowered = lower_poly(lhat.apply(lift_poly(f, m2)), m2);
    EXPECT_LE((lowered - lap.apply(f)).max_abs_coeff(), 1e-12);
  }
}

TEST(Translate, HeatEquationManufactured) {
  const char* src = "space x1\ntime t\nunknown u\nsource g\ndt(u) - dx1(dx1(u)) = g";
  const auto sys = parse_pde(src);
  const auto tp = translate_system(sys);
  EXPECT_EQ(tp.maps.level, 2u);
  EXPECT_EQ(tp.maps.q, (std::vector<std::size_t>{0}));
  // u = x^2 + 2 t solves u_t - u_xx = 0.
  const Poly<double> u = var(2, 0) * var(2, 0) + var(2, 1) * 2.0;
  const Poly<double> g(2);
  EXPECT_TRUE(residuals(sys, {u}, {g})[0].is_zero());
  const auto low = lower_poly(translated_residual(tp, lift_unknowns({u}, tp.maps), lift_sources({g}, tp.maps)),
                              tp.maps);
  EXPECT_TRUE(low.is_zero());
  EXPECT_TRUE(lift_sources({g}, tp.maps).is_zero());
  EXPECT_LE(equivalence_gap(sys, tp, {u}, {g}), 1e-10);
}

TEST(Translate, NonlinearSystemEquivalence) {
  const char* src = R"(
space x1, x2
unknown u, v
source g1, g2
coeff c = 1 + x1*x2
c*dx1(u)*v - u^2*dx2(dx2(v)) + (x1*dx2)(u*v) = g1
(lap + 2*I)(v) - u*v*u = g2
)";
  const auto sys = parse_pde(src);
  std::mt19937_64 rng(17);
  for (const auto& opt : {TranslationOptions{}, TranslationOptions{{2, 1}, {3, 5}, 3}}) {
    const auto tp = translate_system(sys, opt);
    for (int trial = 0; trial < 5; ++trial) {
      const std::vector<Poly<double>> u = {random_poly(2, 4, rng), random_poly(2, 4, rng)};
      // Manufacture g so the original residual vanishes.
      const auto r0 = residuals(sys, u, {Poly<double>(2), Poly<double>(2)});
      const std::vector<Poly<double>> g = r0;
      for (const auto& r : residuals(sys, u, g)) EXPECT_TRUE(r.is_zero());
      EXPECT_LE(equivalence_gap(sys, tp, u, g), 1e-10);
      // And for arbitrary g the residuals still agree.
      EXPECT_LE(equivalence_gap(sys, tp, u, {random_poly(2, 3, rng), random_poly(2, 3, rng)}), 1e-10);
    }
  }
}

TEST(Translate, LevelRules) {
  const auto sys = parse_pde("space x1, x2, x3\nunknown u\nsource g1, g2, g3, g4, g5\n"
                             "u = g1\nu = g2\nu = g3\nu = g4\nu = g5");
  EXPECT_EQ(translate_system(sys).maps.level, 3u);  // k = 5 needs 2^t1 >= 5
  EXPECT_THROW(translate_system(sys, {{}, {}, 2}), ValidationError);
  const auto one = parse_pde("space x\nunknown u, v\nu*v = 0\nv = 0");
  EXPECT_EQ(translate_system(one).maps.level, 2u);
  EXPECT_EQ(translate_system(one, {{}, {0, 4}, 0}).maps.level, 3u);
  EXPECT_THROW(translate_system(one, {{}, {0, 4}, 2}), ValidationError);
  EXPECT_THROW(translate_system(one, {{}, {1, 1}, 0}), ValidationError);
  EXPECT_THROW(translate_system(one, {{0, 1}, {}, 0}), ValidationError);
}

TEST(Translate, JsonTree) {
  const auto tp = translate_system(parse_pde(kBurgers));
  const auto j = to_json(tp);
  EXPECT_EQ(j["level"], 2);
  EXPECT_EQ(j["equations"][0]["lhs"]["node"], "add");
  const std::string dump = j.dump();
  EXPECT_NE(dump.find("\"project\""), std::string::npos);
  EXPECT_EQ(to_json(translate_system(parse_pde(kBurgers))).dump(), dump);
}

TEST(Translate, GridPathMatchesToDiscretizationOrder) {
  const char* src = "space x1, x2\nunknown u\nsource g\nx1*dx1(u) + u*lap(u) = g";
  const auto sys = parse_pde(src);
  const auto tp = translate_system(sys, {{1, 2}, {3}, 0});
  auto exact = [](double x, double y) {
    const double u = std::sin(x) * std::cos(y);
    return x * std::cos(x) * std::cos(y) + u * (-2.0 * u);
  };
  std::vector<double> errs;
  for (std::size_t count : {17u, 33u}) {
    const Grid grid = Grid::cube(2, 0.0, 1.0, count);
    GridField u = GridField::scalar(grid), g = GridField::scalar(grid);
    u.fill([](std::span<const double> x, cplx* o) { o[0] = std::sin(x[0]) * std::cos(x[1]); });
    g.fill([&](std::span<const double> x, cplx* o) { o[0] = exact(x[0], x[1]); });
    const auto orig = residuals_on_grid(sys, grid, {u}, {g});
    const GridField uhat = assemble_hypercomplex({u}, tp.maps.q, tp.maps.level);
    const GridField ghat = assemble_hypercomplex({g}, {0}, tp.maps.level);
    const GridField tr = translated_residual_on_grid(tp, grid, uhat, ghat);
    double gap = 0.0;
    for (std::size_t i = 0; i < tr.nodes(); ++i) {
      gap = std::max(gap, std::abs(tr.at(i)[0] - orig[0].at(i)[0]));
      for (std::size_t c = 1; c < tr.width(); ++c) gap = std::max(gap, std::abs(tr.at(i)[c]));
    }
    // Same stencils on both paths; only the rounding of pi_q, amplified by h^-2, differs.
    EXPECT_LE(gap, 1e-9);
    errs.push_back(orig[0].max_norm());
  }
  EXPECT_GE(std::log2(errs[0] / errs[1]), 3.5);
}

TEST(Lift, RoundTrip) {
  const Grid grid = Grid::cube(2, -1.0, 1.0, 9);
  const EmbeddingMap map({1, 2}, 2);
  GridField f = GridField::scalar(grid);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> nd;
  for (auto& v : f.data()) v = nd(rng);
  const LiftedFunction h = lift_function(f, map);
  const GridField back = lower_function(h, grid);
  for (std::size_t i = 0; i < f.nodes(); ++i) EXPECT_EQ(back.at(i)[0], f.at(i)[0]);

  GridField x1 = GridField::scalar(grid);
  x1.fill([](std::span<const double> x, cplx* o) { o[0] = x[0]; });
  const LiftedFunction hx = lift_function(x1, map);
  for (std::size_t i = 0; i < grid.space[0].count; ++i) {
    const double xs[2] = {grid.space[0].node(i), grid.space[1].node(3)};
    const CdElement z = embed_point(xs, map);
    EXPECT_EQ(hx.at(z).real(), pi_project(1, z));
  }
  CdElement off(2);
  off[3] = 0.5;
  EXPECT_THROW((void)hx.at(off), ValidationError);
  EXPECT_THROW(lift_function(f, EmbeddingMap({1}, 2)), ValidationError);
}

TEST(VectorCalculus, DivGradRot) {
  const IndexMaps maps{{1, 2, 3}, {1, 2, 3}, 2};
  const std::size_t n = 3;
  // Identity field: div = 3.
  const Poly<CdElement> id = lift_unknowns({var(n, 0), var(n, 1), var(n, 2)}, maps);
  const auto div = lower_poly(vector_calculus_map(VectorOp::Div, id, maps), maps);
  EXPECT_EQ(component(div, 0).constant_term(), 3.0);
  EXPECT_EQ(component(div, 0).terms().size(), 1u);

  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    const Poly<double> phi = random_poly(n, 5, rng);
    const Poly<CdElement> ph = lift_scalar_poly(lift_poly(phi, maps), maps.level);
    const auto grad = vector_calculus_map(VectorOp::Grad, ph, maps);
    const auto low = lower_poly(grad, maps);
    for (std::size_t j = 0; j < n; ++j) EXPECT_LE((component(low, maps.q[j]) - phi.derivative(j)).max_abs_coeff(), 1e-12);
    const auto rot = lower_poly(vector_calculus_map(VectorOp::Rot, grad, maps), maps);
    EXPECT_LE(rot.max_abs_coeff(), 1e-12);

    // Random linear field: exact divergence and curl.
    std::vector<Poly<double>> u;
    for (std::size_t j = 0; j < n; ++j) {
      Poly<double> p = cst(n, 0.3);
      for (std::size_t k = 0; k < n; ++k) p += var(n, k) * std::uniform_real_distribution<double>(-1, 1)(rng);
      u.push_back(p);
    }
    const auto uh = lift_unknowns(u, maps);
    Poly<double> classical(n);
    for (std::size_t j = 0; j < n; ++j) classical += u[j].derivative(j);
    const auto d = lower_poly(vector_calculus_map(VectorOp::Div, uh, maps), maps);
    EXPECT_LE((component(d, 0) - classical).max_abs_coeff(), 1e-15);
    const auto r = lower_poly(vector_calculus_map(VectorOp::Rot, uh, maps), maps);
    const Poly<double> curl[3] = {u[2].derivative(1) - u[1].derivative(2), u[0].derivative(2) - u[2].derivative(0),
                                  u[1].derivative(0) - u[0].derivative(1)};
    for (std::size_t j = 0; j < n; ++j) EXPECT_LE((component(r, maps.q[j]) - curl[j]).max_abs_coeff(), 1e-15);
  }
  EXPECT_THROW(vector_calculus_map(VectorOp::Rot, id, IndexMaps{{1, 2, 3}, {1, 3, 2}, 2}), ValidationError);
  EXPECT_THROW(vector_calculus_map(VectorOp::Rot, id, IndexMaps{{1, 2}, {1, 2}, 2}), ValidationError);
}
