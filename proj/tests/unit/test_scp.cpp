#include "invstore/scp.hpp"

#include "invstore/icnn.hpp"
#include "invstore/storage_model.hpp"
#include "support/oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace invstore;

namespace {

// Exact quadratic disutility c1*d + c2*d^2 behind the SCP cost-model
// interface.
struct QuadraticDisutility {
    double c1, c2;
    Index T;

    double eval(const Vec& y) const {
        const auto d = y.tail(T);
        return c1 * d.sum() + c2 * d.squaredNorm();
    }
    void grad_hess(const Vec& y, Vec& q, Mat& Q) const {
        q = Vec::Zero(2 * T);
        q.tail(T).setConstant(c1);
        q.tail(T) += 2.0 * c2 * y.tail(T);
        Q = Mat::Zero(2 * T, 2 * T);
        Q.diagonal().tail(T).setConstant(2.0 * c2);
    }
};

Vec price_day(Index T) {
    // deliberately asymmetric: exactly tied prices make the charge allocation
    // degenerate, which is a property of the data rather than of the solver
    Vec prices(T);
    for (Index t = 0; t < T; ++t) {
        const double x = static_cast<double>(t);
        prices[t] = 26.0 + 0.21 * x + 0.8 * std::sin(1.7 * x) +
                    14.0 * std::exp(-0.5 * std::pow((x - 18.0) / 2.2, 2)) -
                    12.0 * std::exp(-0.5 * std::pow((x - 4.0) / 2.5, 2));
    }
    return prices;
}

QpProblem storage_base(const StorageParams& s, const Vec& prices) {
    QpProblem base = assemble_quadratic(s, prices);
    base.Q.setZero();
    base.q.setZero();
    return base;
}

IcnnModel trained_like_model(Index T, std::uint64_t seed) {
    Rng rng(seed);
    IcnnModel m = IcnnModel::create(IcnnMode::Scalar, T, 8, 2.0, rng);
    m.W0 *= 6.0;
    m.Wz *= 4.0;
    m.Wy *= 6.0;
    m.vz *= 8.0;
    return m;
}

} // namespace

TEST_CASE("quadratic disutility converges in at most two iterations") {
    Rng rng(5);
    const Vec prices = price_day(24);
    for (int trial = 0; trial < 10; ++trial) {
        const double c1 = rng.uniform(0.0, 20.0);
        const double c2 = rng.uniform(0.0, 20.0);
        const double eta = rng.uniform(0.8, 1.0);
        const StorageParams s = from_physical(c1, c2, eta, 0.5, 0.0, 1.0, 0.5, 24);

        const QuadraticDisutility model{c1, c2, 24};
        const ScpResult res =
            scp_solve(model, storage_base(s, prices), Vec::Zero(48));
        REQUIRE(res.trace.converged);
        REQUIRE(res.trace.k_final <= 2);

        const QpSolution direct = solve_qp(assemble_quadratic(s, prices));
        REQUIRE((res.solution.y_star - direct.y_star).lpNorm<Eigen::Infinity>() <= 1e-8);
    }
}

TEST_CASE("every iterate satisfies the storage constraints") {
    const StorageParams s = from_physical(0.0, 0.0, 0.9, 0.5, 0.0, 1.0, 0.5, 12);
    const Vec prices = price_day(12);
    const QpProblem base = storage_base(s, prices);
    const IcnnModel model = trained_like_model(12, 321);

    const ScpResult res = scp_solve(model, base, Vec::Zero(24));
    REQUIRE(res.trace.iterates.size() >= 2);
    for (const Vec& y : res.trace.iterates)
        REQUIRE((base.G * y - base.h).maxCoeff() <= 1e-6);
}

TEST_CASE("re-expanding at the fixed point does not move the solution") {
    const Index T = 12;
    const StorageParams s = from_physical(0.0, 0.0, 0.85, 0.5, 0.0, 0.5, 0.25, T);
    const Vec prices = price_day(T);
    const QpProblem base = storage_base(s, prices);
    const IcnnModel model = trained_like_model(T, 99);

    ScpSettings settings;
    settings.fp_tol = 1e-8;
    const ScpResult res = scp_solve(model, base, Vec::Zero(2 * T), settings);
    REQUIRE(res.trace.converged);

    // independent re-expansion and re-solve at the returned point
    Vec q_hat;
    Mat Q_hat;
    model.grad_hess(res.solution.y_star, q_hat, Q_hat);
    QpProblem again = base;
    again.Q = 0.5 * Q_hat;
    again.q = q_hat - Q_hat * res.solution.y_star;
    const QpSolution re = solve_qp(again, settings.qp);
    REQUIRE(re.status == SolveStatus::Optimal);
    REQUIRE((re.y_star - res.solution.y_star).lpNorm<Eigen::Infinity>() <= settings.fp_tol);
}

TEST_CASE("objective trace is non-increasing in nearly all random trials") {
    int monotone = 0, total = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const Index T = 8;
        Rng rng(9000 + static_cast<std::uint64_t>(trial));
        const double eta = rng.uniform(0.8, 1.0);
        const StorageParams s = from_physical(0.0, 0.0, eta, 0.5, 0.0, 0.5, 0.25, T);
        const Vec prices = price_day(T);
        const QpProblem base = storage_base(s, prices);
        const IcnnModel model = trained_like_model(T, 7000 + static_cast<std::uint64_t>(trial));

        const ScpResult res = scp_solve(model, base, Vec::Zero(2 * T));
        ++total;
        bool ok = true;
        for (std::size_t k = 1; k < res.trace.objectives.size(); ++k)
            if (res.trace.objectives[k] > res.trace.objectives[k - 1] + 1e-6) ok = false;
        monotone += ok ? 1 : 0;
    }
    REQUIRE(total == 100);
    REQUIRE(monotone >= 95);
}

TEST_CASE("iteration cap reports an unconverged trace") {
    const Index T = 8;
    const StorageParams s = from_physical(0.0, 0.0, 0.9, 0.5, 0.0, 0.5, 0.25, T);
    const QpProblem base = storage_base(s, price_day(T));
    const IcnnModel model = trained_like_model(T, 17);

    ScpSettings settings;
    settings.max_iters = 1;
    settings.fp_tol = 1e-12;
    const ScpResult res = scp_solve(model, base, Vec::Zero(2 * T), settings);
    REQUIRE_FALSE(res.trace.converged);
    REQUIRE(res.trace.k_final == 1);
}

TEST_CASE("infeasible starting points are rejected") {
    const Index T = 4;
    const StorageParams s = from_physical(0.0, 0.0, 0.9, 0.5, 0.0, 0.5, 0.25, T);
    const QpProblem base = storage_base(s, price_day(T));
    const IcnnModel model = trained_like_model(T, 23);
    REQUIRE_THROWS_AS(scp_solve(model, base, Vec::Constant(2 * T, 10.0)), DimensionMismatch);
}
