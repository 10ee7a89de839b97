// Test-only oracles and helpers, independent of the implementation paths
// they are used to check.
#ifndef INVSTORE_TESTS_ORACLES_HPP
#define INVSTORE_TESTS_ORACLES_HPP

#include "invstore/common.hpp"
#include "invstore/qp.hpp"

#include <Eigen/Cholesky>

#include <functional>

namespace invstore::testing {

// Closed-form minimizer of  min c'y + (alpha/2) y'y  s.t. A y = b:
//   y = (1/alpha) (A'(AA')^{-1}A - I) c + A'(AA')^{-1} b
// In QpProblem terms Q = (alpha/2) I and c = lambda + q.
inline Vec equality_closed_form(double alpha, const Vec& c, const Mat& A, const Vec& b) {
    const Index n = c.size();
    Eigen::LLT<Mat> aat((A * A.transpose()).eval());
    const Mat pinv = A.transpose() * aat.solve(Mat::Identity(A.rows(), A.rows()));
    return (1.0 / alpha) * (pinv * (A * c) - c) + pinv * b;
}

// Central finite difference of a scalar function.
inline double central_diff(const std::function<double(double)>& f, double x, double step) {
    return (f(x + step) - f(x - step)) / (2.0 * step);
}

inline double rel_err(double got, double want, double floor = 1e-8) {
    return std::abs(got - want) / std::max({std::abs(got), std::abs(want), floor});
}

// Random strictly convex QP with box-like inequalities; used by the gradient
// finite-difference property tests. Constructed so that the solution is
// strictly complementary with high probability.
inline QpProblem random_strict_qp(Rng& rng, Index n, Index p, Index m) {
    QpProblem prob;
    Mat B(n, n);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j) B(i, j) = rng.normal();
    prob.Q = B * B.transpose() / static_cast<double>(n);
    prob.Q.diagonal().array() += 0.5;
    prob.q = Vec::NullaryExpr(n, [&](Index) { return rng.normal(); });
    prob.lambda = Vec::NullaryExpr(n, [&](Index) { return rng.normal(); });
    prob.G.resize(p, n);
    for (Index i = 0; i < p; ++i)
        for (Index j = 0; j < n; ++j) prob.G(i, j) = rng.normal();
    // Feasible by a margin at a random anchor point.
    const Vec anchor = Vec::NullaryExpr(n, [&](Index) { return 0.3 * rng.normal(); });
    prob.h = prob.G * anchor + Vec::NullaryExpr(p, [&](Index) { return rng.uniform(0.2, 1.5); });
    if (m > 0) {
        prob.A.resize(m, n);
        for (Index i = 0; i < m; ++i)
            for (Index j = 0; j < n; ++j) prob.A(i, j) = rng.normal();
        prob.b = prob.A * anchor;
    } else {
        prob.A.resize(0, n);
        prob.b.resize(0);
    }
    return prob;
}

} // namespace invstore::testing

#endif
