#include "runmax/lamperti.hpp"
#include "runmax/model.hpp"

#include <doctest.h>

#include <cmath>

using namespace runmax;

TEST_CASE("constant diffusion maps to a pure scaling") {
    auto map = lamperti::build_map(expr::parse("2"), -8.0, 8.0);
    CHECK(map.forward(0.0) == 0.0);
    CHECK(map.forward(1.0) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(map.forward(-3.0) == doctest::Approx(-1.5).epsilon(1e-14));
    CHECK(map.inverse(0.5) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(map.A_at(0.3) == doctest::Approx(2.0));
    CHECK(map.Ap_at(0.3) == doctest::Approx(0.0));
}

TEST_CASE("tanh diffusion map: derivative, monotonicity, round trip") {
    auto A = expr::parse("2 + tanh(x1)");
    auto map = lamperti::build_map(A, -10.0, 10.0);
    CHECK(map.forward(0.0) == 0.0);
    double prev = map.forward(-9.5);
    for (double x = -9.0; x <= 9.0; x += 0.5) {
        double y = map.forward(x);
        CHECK(y > prev);
        prev = y;
        CHECK(map.inverse(y) == doctest::Approx(x).epsilon(1e-10));
        // phi' A = 1
        double h = 1e-5;
        double d = (map.forward(x + h) - map.forward(x - h)) / (2 * h);
        CHECK(d * A.eval(x) == doctest::Approx(1.0).epsilon(1e-7));
    }
    CHECK_THROWS(map.forward(11.0));
}

TEST_CASE("transformed model carries the Lamperti drift as an override") {
    model::DiffusionModel m;
    m.d = 1;
    m.drift.push_back(expr::parse("0.5*tanh(x1)"));
    m.diffusion_kind = model::DiffusionKind::ScalarExpr;
    m.diffusion = expr::parse("2 + tanh(x1)");
    m.initial.push_back({{0.3}, 1.0});
    m.check_consistent();

    auto map = lamperti::build_map(*m.diffusion, -10.0, 10.0);
    auto my = lamperti::transform_model(m, map);
    CHECK(my.identity_diffusion());
    CHECK(my.initial[0].x[0] == doctest::Approx(map.forward(0.3)).epsilon(1e-12));

    // drift in Y coordinates: (B/A - A'/2) at phi^{-1}(y)
    for (double y : {-1.0, 0.0, 0.7}) {
        double x = map.inverse(y);
        double A = map.A_at(x), Ap = map.Ap_at(x);
        double expect = 0.5 * std::tanh(x) / A - 0.5 * Ap;
        CHECK(my.drift_at(0, {y}) == doctest::Approx(expect).epsilon(1e-9));
    }
}

TEST_CASE("pullback of a mapped unit-diffusion density keeps its mass") {
    model::DiffusionModel m;
    m.d = 1;
    m.drift.push_back(expr::parse("0"));
    m.diffusion_kind = model::DiffusionKind::ScalarExpr;
    m.diffusion = expr::parse("2 + tanh(x1)");
    m.initial.push_back({{0.0}, 1.0});
    m.check_consistent();

    auto map = lamperti::build_map(*m.diffusion, -24.0, 24.0);
    auto my = lamperti::transform_model(m, map);

    double T = 0.5;
    auto yg = std::make_shared<model::WedgeGrid>(model::build_grid({0.1, 4}, my, T, 1e-5));
    auto pY = model::assemble_p0(my, yg); // drift ignored: mass check only
    // X grid covering the preimage of the Y domain
    model::WedgeGrid xg_raw = model::build_grid({0.1, 4}, m, 9 * T, 1e-5);
    xg_raw.times = yg->times;
    auto xg = std::make_shared<model::WedgeGrid>(xg_raw);
    auto pX = lamperti::pullback_density(pY, map, xg);

    int s = xg->n_slices() - 1;
    CHECK(pX.integral(s) == doctest::Approx(pY.integral(s)).epsilon(2e-2));

    // spot check the Jacobian: p_X(b, a) = p_Y(phi(b), phi(a)) / (A(b) A(a))
    int i = xg->nm / 2, j = i + xg->diag_offset() - 3;
    double b = xg->m(i), a = xg->x(j);
    double yb = map.forward(b), ya = map.forward(a);
    double t = xg->times[s];
    double direct = model::p0_point(my, yb, &ya, 1, t) / (map.A_at(b) * map.A_at(a));
    CHECK(pX.value(s, i, j) == doctest::Approx(direct).epsilon(5e-3));
}
