#include "invstore/storage_model.hpp"

#include "invstore/kkt_grad.hpp"
#include "invstore/qp.hpp"
#include "support/oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace invstore;

namespace {

const SolverSettings kTight{1e-10, 200, 1e-8, true};

// A day with a deep night trough and a sharp evening peak.
Vec sample_price_day() {
    Vec prices(24);
    for (int t = 0; t < 24; ++t) {
        const double x = static_cast<double>(t);
        prices[t] = 28.0 + 12.0 * std::exp(-0.5 * std::pow((x - 19.0) / 2.0, 2)) -
                    14.0 * std::exp(-0.5 * std::pow((x - 3.0) / 2.5, 2)) +
                    6.0 * std::exp(-0.5 * std::pow((x - 8.0) / 2.0, 2));
    }
    return prices;
}

// Direct evaluation of the SoC-dependent cost, independent of the QP encoding.
double soc_cost_direct(const SocCostParams& params, const Vec& prices, const Vec& y) {
    const StorageParams& s = params.phys;
    const PhysicalBounds phys = recover_physical(s);
    const double cap = phys.e_max - phys.e_min;
    const Vec e = soc_trajectory(s, y);
    double cost = 0.0;
    for (Index t = 0; t < s.T; ++t) {
        const double soc = (e[t] - phys.e_min) / cap;
        cost += prices[t] * (y[t] - y[s.T + t]);
        cost += params.c1 * (soc - 0.5) * (soc - 0.5);
        cost += params.c2 * y[s.T + t] * y[s.T + t];
    }
    return cost;
}

} // namespace

TEST_CASE("one-hour duration gives shifted bounds of +/- 0.25 eta") {
    const double eta = 0.9;
    const StorageParams s = from_physical(11.02, 14.16, eta, 0.5, 0.0, 0.5, 0.25, 24);
    REQUIRE(s.e_max_shift == Catch::Approx(0.25 * eta));
    REQUIRE(s.e_min_shift == Catch::Approx(-0.25 * eta));
    s.validate();
}

TEST_CASE("no profitable action when the price sits below the linear cost") {
    StorageParams s = from_physical(10.0, 1.0, 0.9, 0.5, 0.0, 0.5, 0.25, 1);
    Vec prices = Vec::Constant(1, 5.0);
    const QpProblem prob = assemble_quadratic(s, prices);
    const QpSolution sol = solve_qp(prob, kTight);
    REQUIRE(sol.status == SolveStatus::Optimal);
    REQUIRE(std::abs(sol.y_star[0]) < 1e-7);
    REQUIRE(std::abs(sol.y_star[1]) < 1e-7);
}

TEST_CASE("reference parameter set arbitrages the daily price curve") {
    const StorageParams s = from_physical(11.02, 14.16, 0.9, 0.5, 0.0, 0.5, 0.25, 24);
    const Vec prices = sample_price_day();
    const QpProblem prob = assemble_quadratic(s, prices);
    const QpSolution sol = solve_qp(prob);
    REQUIRE(sol.status == SolveStatus::Optimal);
    REQUIRE(sol.residuals.primal <= 1e-7);
    REQUIRE(sol.residuals.dual <= 1e-6);
    REQUIRE(sol.residuals.comp <= 1e-7);

    // charges at the troughs, discharges at the peaks
    double charge_price = 0.0, charge_mw = 0.0, discharge_price = 0.0, discharge_mw = 0.0;
    for (Index t = 0; t < 24; ++t) {
        charge_price += prices[t] * sol.y_star[t];
        charge_mw += sol.y_star[t];
        discharge_price += prices[t] * sol.y_star[24 + t];
        discharge_mw += sol.y_star[24 + t];
    }
    REQUIRE(charge_mw > 0.1);
    REQUIRE(discharge_mw > 0.1);
    REQUIRE(charge_price / charge_mw < discharge_price / discharge_mw);

    // identical parameters (the identified row equals the truth) reproduce
    // the dispatch bitwise
    const StorageParams same = from_physical(11.02, 14.16, 0.9, 0.5, 0.0, 0.5, 0.25, 24);
    const QpSolution again = solve_qp(assemble_quadratic(same, prices));
    for (Index i = 0; i < 48; ++i) REQUIRE(again.y_star[i] == sol.y_star[i]);
}

TEST_CASE("soc model with zero soc weight reduces to the quadratic model") {
    SocCostParams params;
    params.c1 = 0.0;
    params.c2 = 7.5;
    params.phys = from_physical(0.0, 7.5, 0.85, 0.5, 0.0, 1.0, 0.5, 24);
    const Vec prices = sample_price_day();
    const QpProblem soc = assemble_soc(params, prices);

    StorageParams quad = params.phys;
    quad.c1 = 0.0;
    quad.c2 = 7.5;
    const QpProblem ref = assemble_quadratic(quad, prices);
    REQUIRE((soc.Q - ref.Q).lpNorm<Eigen::Infinity>() == 0.0);
    REQUIRE((soc.q - ref.q).lpNorm<Eigen::Infinity>() == 0.0);

    const QpSolution a = solve_qp(soc, kTight);
    const QpSolution b = solve_qp(ref, kTight);
    REQUIRE((a.y_star - b.y_star).lpNorm<Eigen::Infinity>() <= 1e-9);
}

TEST_CASE("soc quadratic form matches symbolic expansion at T = 2") {
    // normalized capacity 1, 50% start, eta = 1, dt = 1
    SocCostParams params;
    params.c1 = 1.0;
    params.c2 = 0.0;
    params.phys = from_physical(0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.5, 2);
    const Vec prices = Vec::Zero(2);
    const QpProblem prob = assemble_soc(params, prices);

    // cumulative vectors a1 = (1,0,-1,0), a2 = (1,1,-1,-1): Q = a1 a1' + a2 a2'
    REQUIRE(prob.Q(0, 0) == Catch::Approx(2.0));  // p1 appears in both sums
    REQUIRE(prob.Q(1, 1) == Catch::Approx(1.0));
    REQUIRE(prob.Q(0, 1) == Catch::Approx(1.0));
    REQUIRE(prob.Q(0, 2) == Catch::Approx(-2.0));
    REQUIRE(prob.q.lpNorm<Eigen::Infinity>() == 0.0);  // 50% start: no linear term
}

TEST_CASE("soc encoding agrees with direct cost evaluation") {
    Rng rng(2025);
    SocCostParams params;
    params.c1 = 6.0;
    params.c2 = 3.0;
    params.phys = from_physical(0.0, 0.0, 0.88, 0.5, 0.0, 1.5, 0.75, 12);
    const Vec prices = sample_price_day().head(12);
    const QpProblem prob = assemble_soc(params, prices);

    for (int trial = 0; trial < 20; ++trial) {
        const Vec y1 = Vec::NullaryExpr(24, [&](Index) { return rng.uniform(0.0, 0.5); });
        const Vec y2 = Vec::NullaryExpr(24, [&](Index) { return rng.uniform(0.0, 0.5); });
        const double lhs = prob.objective(y1) - prob.objective(y2);
        const double rhs =
            soc_cost_direct(params, prices, y1) - soc_cost_direct(params, prices, y2);
        REQUIRE(lhs == Catch::Approx(rhs).margin(1e-9));
    }
}

TEST_CASE("soc problems from the sampling protocol all solve") {
    Rng rng(7);
    const Vec prices = sample_price_day();
    for (int draw = 0; draw < 10; ++draw) {
        SocCostParams params;
        params.c1 = rng.uniform(0.0, 20.0);
        params.c2 = rng.uniform(0.0, 20.0);
        const double eta = rng.uniform(0.8, 1.0);
        const double H = 1.0 + static_cast<double>(rng.next_below(4));
        params.phys =
            from_physical(0.0, 0.0, eta, 0.5, 0.0, 0.5 * H, 0.25 * H, 24);
        const QpProblem prob = assemble_soc(params, prices);
        prob.validate();
        const QpSolution sol = solve_qp(prob);
        REQUIRE(sol.status == SolveStatus::Optimal);
    }
}

TEST_CASE("scalar gradient extraction applies the repeated-parameter chain rule") {
    const StorageParams s = from_physical(5.0, 2.0, 0.9, 0.5, 0.0, 0.5, 0.25, 4);
    const Index T = 4;
    ParamGrads g;
    g.dQ = Mat::Zero(2 * T, 2 * T);
    g.dq = Vec::Zero(2 * T);
    g.dG = Mat::Zero(6 * T, 2 * T);
    g.dh = Vec::Zero(6 * T);
    g.dA.resize(0, 2 * T);
    g.db.resize(0);

    SECTION("equal entries on the discharge positions of dq") {
        g.dq.tail(T).setConstant(0.3);
        const StorageScalarGrads out = extract_storage_grads(s, g);
        REQUIRE(out.c1 == Catch::Approx(0.3 * static_cast<double>(T)));
        REQUIRE(out.c2 == 0.0);
    }
    SECTION("upper energy rows at charge columns feed eta_sq") {
        double expected = 0.0;
        for (Index t = 0; t < T; ++t)
            for (Index tau = 0; tau <= t; ++tau) {
                g.dG(4 * T + t, tau) = 0.1 * static_cast<double>(t + 1);
                expected += g.dG(4 * T + t, tau);  // dt = 1
            }
        const StorageScalarGrads out = extract_storage_grads(s, g);
        REQUIRE(out.eta_sq == Catch::Approx(expected));
    }
    SECTION("energy bound gradients sum over rows with signs") {
        g.dh.segment(4 * T, T).setConstant(0.25);
        g.dh.segment(5 * T, T).setConstant(0.5);
        const StorageScalarGrads out = extract_storage_grads(s, g);
        REQUIRE(out.e_max_shift == Catch::Approx(0.25 * static_cast<double>(T)));
        REQUIRE(out.e_min_shift == Catch::Approx(-0.5 * static_cast<double>(T)));
    }
}

TEST_CASE("extracted scalar gradients agree with finite differences") {
    StorageParams s = from_physical(8.0, 5.0, 0.9, 0.5, 0.0, 1.0, 0.5, 12);
    const Vec prices = sample_price_day().head(12);
    const Vec target = Vec::Constant(24, 0.05);

    auto loss = [&](const StorageParams& params) {
        const QpSolution sol = solve_qp(assemble_quadratic(params, prices), kTight);
        REQUIRE(sol.status == SolveStatus::Optimal);
        return (sol.y_star - target).squaredNorm();
    };

    const QpProblem prob = assemble_quadratic(s, prices);
    const QpSolution sol = solve_qp(prob, kTight);
    const KktFactor f = factor_kkt(prob, sol);
    const Vec dL_dy = 2.0 * (sol.y_star - target);
    const StorageScalarGrads got = extract_storage_grads(s, backward(f, prob, sol, dL_dy));

    const double step = 1e-5;
    auto fd_scalar = [&](double* field) {
        const double saved = *field;
        *field = saved + step;
        const double up = loss(s);
        *field = saved - step;
        const double dn = loss(s);
        *field = saved;
        return (up - dn) / (2.0 * step);
    };
    auto check = [&](double an, double* field) {
        const double fd = fd_scalar(field);
        const double tol = 1e-6 + 1e-4 * std::max(std::abs(an), std::abs(fd));
        REQUIRE_THAT(an, Catch::Matchers::WithinAbs(fd, tol));
    };
    check(got.c1, &s.c1);
    check(got.c2, &s.c2);
    check(got.eta_sq, &s.eta_sq);
    check(got.e_max_shift, &s.e_max_shift);
    check(got.e_min_shift, &s.e_min_shift);
}

TEST_CASE("physical bounds round-trip through the reformulation") {
    const StorageParams s = from_physical(3.0, 4.0, 0.87, 0.5, 0.0, 2.0, 1.0, 24);
    const PhysicalBounds phys = recover_physical(s);
    REQUIRE(phys.eta == Catch::Approx(0.87));
    REQUIRE(phys.e_min == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(phys.e_max == Catch::Approx(2.0));
}

TEST_CASE("idle dispatch is always feasible and solved SoC paths stay in bounds") {
    Rng rng(11);
    const Vec prices = sample_price_day();
    for (int draw = 0; draw < 8; ++draw) {
        const double eta = rng.uniform(0.8, 1.0);
        const double H = 1.0 + static_cast<double>(rng.next_below(4));
        const StorageParams s = from_physical(rng.uniform(0.0, 20.0), rng.uniform(0.0, 20.0),
                                              eta, 0.5, 0.0, 0.5 * H, 0.25 * H, 24);
        REQUIRE(dispatch_feasible(s, Vec::Zero(48)));

        const QpSolution sol = solve_qp(assemble_quadratic(s, prices));
        REQUIRE(sol.status == SolveStatus::Optimal);
        REQUIRE(dispatch_feasible(s, sol.y_star, 1e-6));
        const Vec e = soc_trajectory(s, sol.y_star);
        const PhysicalBounds phys = recover_physical(s);
        REQUIRE(e.minCoeff() >= phys.e_min - 1e-7);
        REQUIRE(e.maxCoeff() <= phys.e_max + 1e-7);
    }
}

TEST_CASE("assembly rejects mismatched price vectors") {
    const StorageParams s = from_physical(1.0, 1.0, 0.9, 0.5, 0.0, 0.5, 0.25, 24);
    REQUIRE_THROWS_AS(assemble_quadratic(s, Vec::Zero(23)), DimensionMismatch);
}
