#include "invstore/icnn.hpp"

#include "support/oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Eigenvalues>

using namespace invstore;

namespace {

IcnnModel random_model(IcnnMode mode, Index T, std::uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    IcnnModel m = IcnnModel::create(mode, T, 8, scale, rng);
    // push the weights around a bit so derivatives are not tiny
    m.W0 *= 4.0;
    m.Wy *= 4.0;
    m.Wz *= 4.0;
    m.vz *= 4.0;
    return m;
}

// phi(theta) = gbar.q_hat + <Mbar, Q_hat>, evaluated through grad_hess only.
double contraction(const IcnnModel& m, const Vec& y, const Vec& gbar, const Mat& Mbar) {
    Vec q;
    Mat Q;
    m.grad_hess(y, q, Q);
    return gbar.dot(q) + (Mbar.array() * Q.array()).sum();
}

} // namespace

TEST_CASE("all-zero network is constant with zero derivatives") {
    IcnnModel m;
    m.mode = IcnnMode::Vector;
    m.T = 3;
    m.hidden = 4;
    m.W0 = Mat::Zero(4, 6);
    m.Wz = Mat::Zero(4, 4);
    m.Wy = Mat::Zero(4, 6);
    m.b0 = Vec::Zero(4);
    m.b1 = Vec::Zero(4);
    m.vz = Vec::Zero(4);
    m.vy = Vec::Zero(6);
    m.b2 = 1.5;

    Rng rng(1);
    const Vec y = Vec::NullaryExpr(6, [&](Index) { return rng.normal(); });
    REQUIRE(m.eval(y) == Catch::Approx(1.5));
    Vec q;
    Mat Q;
    m.grad_hess(y, q, Q);
    REQUIRE(q.lpNorm<Eigen::Infinity>() == 0.0);
    REQUIRE(Q.lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("second layer alone realizes softplus(w y) with closed-form derivatives") {
    IcnnModel m;
    m.mode = IcnnMode::Vector;
    m.T = 1;  // n = 2, use only the first coordinate
    m.hidden = 2;
    const double w = 1.7;
    m.W0 = Mat::Zero(2, 2);
    m.Wz = Mat::Zero(2, 2);
    m.Wy = Mat::Zero(2, 2);
    m.Wy(0, 0) = w;
    m.b0 = Vec::Zero(2);
    m.b1 = Vec::Zero(2);
    m.vz = Vec::Zero(2);
    m.vz[0] = 1.0;
    m.vy = Vec::Zero(2);
    m.b2 = 0.0;

    for (double x : {-2.0, -0.3, 0.0, 0.9, 2.5}) {
        Vec y = Vec::Zero(2);
        y[0] = x;
        const double sig = act::sigmoid(w * x);
        REQUIRE(m.eval(y) == Catch::Approx(act::softplus(w * x)).margin(1e-12));
        Vec q;
        Mat Q;
        m.grad_hess(y, q, Q);
        REQUIRE(q[0] == Catch::Approx(w * sig).margin(1e-12));
        REQUIRE(Q(0, 0) == Catch::Approx(w * w * sig * (1.0 - sig)).margin(1e-12));
    }
}

TEST_CASE("gradient and Hessian match finite differences of eval") {
    for (auto mode : {IcnnMode::Vector, IcnnMode::Scalar}) {
        const Index T = 4;
        const IcnnModel m = random_model(mode, T, 99123, 1.4);
        Rng rng(55);
        const Vec y = Vec::NullaryExpr(2 * T, [&](Index) { return rng.uniform(0.0, 0.6); });
        Vec q;
        Mat Q;
        m.grad_hess(y, q, Q);

        REQUIRE((Q - Q.transpose()).lpNorm<Eigen::Infinity>() < 1e-12);
        const double step = 1e-6;
        for (Index i = 0; i < 2 * T; ++i) {
            Vec yp = y, ym = y;
            yp[i] += step;
            ym[i] -= step;
            const double fd = (m.eval(yp) - m.eval(ym)) / (2.0 * step);
            if (std::abs(fd) > 1e-9 || std::abs(q[i]) > 1e-9)
                REQUIRE(testing::rel_err(q[i], fd, 1e-6) < 1e-5);

            Vec qp, qm;
            Mat scratch;
            m.grad_hess(yp, qp, scratch);
            m.grad_hess(ym, qm, scratch);
            const Vec hcol = (qp - qm) / (2.0 * step);
            for (Index j = 0; j < 2 * T; ++j) {
                const double tol = 1e-7 + 1e-4 * std::max(std::abs(Q(j, i)), std::abs(hcol[j]));
                REQUIRE_THAT(Q(j, i), Catch::Matchers::WithinAbs(hcol[j], tol));
            }
        }
    }
}

TEST_CASE("Hessian is positive semidefinite on random probes") {
    Rng rng(31415);
    for (int trial = 0; trial < 1000; ++trial) {
        const IcnnModel m = random_model(trial % 2 ? IcnnMode::Vector : IcnnMode::Scalar, 3,
                                         1000 + static_cast<std::uint64_t>(trial));
        const Vec y = Vec::NullaryExpr(6, [&](Index) { return 2.0 * rng.normal(); });
        Vec q;
        Mat Q;
        m.grad_hess(y, q, Q);
        Eigen::SelfAdjointEigenSolver<Mat> es(Q, Eigen::EigenvaluesOnly);
        REQUIRE(es.eigenvalues().minCoeff() >= -1e-8);
    }
}

TEST_CASE("convexity inequality holds on random triples") {
    Rng rng(2718);
    for (int trial = 0; trial < 1000; ++trial) {
        const IcnnModel m = random_model(trial % 2 ? IcnnMode::Vector : IcnnMode::Scalar, 3,
                                         5000 + static_cast<std::uint64_t>(trial));
        const Vec y1 = Vec::NullaryExpr(6, [&](Index) { return 2.0 * rng.normal(); });
        const Vec y2 = Vec::NullaryExpr(6, [&](Index) { return 2.0 * rng.normal(); });
        const double t = rng.uniform();
        const double lhs = m.eval(t * y1 + (1.0 - t) * y2);
        const double rhs = t * m.eval(y1) + (1.0 - t) * m.eval(y2);
        REQUIRE(lhs <= rhs + 1e-9);
    }
}

TEST_CASE("parameter backward matches finite differences of the contraction") {
    for (auto mode : {IcnnMode::Vector, IcnnMode::Scalar}) {
        const Index T = 3;
        IcnnModel m = random_model(mode, T, 777, 1.3);
        Rng rng(8);
        const Vec y = Vec::NullaryExpr(2 * T, [&](Index) { return rng.uniform(0.0, 0.7); });
        const Vec gbar = Vec::NullaryExpr(2 * T, [&](Index) { return rng.normal(); });
        Mat Mbar = Mat::NullaryExpr(2 * T, 2 * T, [&](Index, Index) { return rng.normal(); });

        const Vec grad = m.backward_params(y, gbar, Mbar);
        const Vec theta = m.flat();

        // directional finite differences along several random directions
        for (int probe = 0; probe < 6; ++probe) {
            Vec v = Vec::NullaryExpr(theta.size(), [&](Index) { return rng.normal(); });
            v /= v.norm();
            const double step = 1e-6;
            IcnnModel mp = m, mm = m;
            mp.set_flat(theta + step * v);
            mm.set_flat(theta - step * v);
            const double fd =
                (contraction(mp, y, gbar, Mbar) - contraction(mm, y, gbar, Mbar)) /
                (2.0 * step);
            REQUIRE(testing::rel_err(grad.dot(v), fd, 1e-6) < 1e-5);
        }

        // and exhaustively per coordinate
        for (Index i = 0; i < theta.size(); ++i) {
            Vec tp = theta, tm = theta;
            tp[i] += 1e-6;
            tm[i] -= 1e-6;
            IcnnModel mp = m, mm = m;
            mp.set_flat(tp);
            mm.set_flat(tm);
            const double fd =
                (contraction(mp, y, gbar, Mbar) - contraction(mm, y, gbar, Mbar)) / 2e-6;
            const double tol = 1e-6 + 1e-5 * std::max(std::abs(grad[i]), std::abs(fd));
            REQUIRE_THAT(grad[i], Catch::Matchers::WithinAbs(fd, tol));
        }
    }
}

TEST_CASE("zero upstream gradients give zero parameter gradients") {
    const IcnnModel m = random_model(IcnnMode::Vector, 3, 4242);
    const Vec y = Vec::Constant(6, 0.25);
    const Vec grad = m.backward_params(y, Vec::Zero(6), Mat::Zero(6, 6));
    REQUIRE(grad.lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("scalar mode only touches the discharge block") {
    const Index T = 5;
    const IcnnModel m = random_model(IcnnMode::Scalar, T, 11, 2.0);
    Rng rng(3);
    const Vec y = Vec::NullaryExpr(2 * T, [&](Index) { return rng.uniform(0.0, 0.5); });
    Vec q;
    Mat Q;
    m.grad_hess(y, q, Q);
    REQUIRE(q.head(T).lpNorm<Eigen::Infinity>() == 0.0);
    for (Index i = 0; i < 2 * T; ++i)
        for (Index j = 0; j < 2 * T; ++j)
            if (i != j || i < T) REQUIRE(Q(i, j) == 0.0);

    // changing the charge block never changes the value
    Vec y2 = y;
    y2.head(T).setConstant(0.33);
    REQUIRE(m.eval(y) == m.eval(y2));
}

TEST_CASE("flat round trip and nonnegativity projection") {
    IcnnModel m = random_model(IcnnMode::Vector, 2, 6060);
    const Vec theta = m.flat();
    IcnnModel copy = m;
    copy.set_flat(theta);
    REQUIRE((copy.flat() - theta).lpNorm<Eigen::Infinity>() == 0.0);

    m.Wz(0, 0) = -0.5;
    m.vz[1] = -0.01;
    m.project_nonneg();
    REQUIRE(m.Wz.minCoeff() >= 0.0);
    REQUIRE(m.vz.minCoeff() >= 0.0);
}
