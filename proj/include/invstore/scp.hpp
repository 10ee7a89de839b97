// Sequential convex programming for the generic (non-quadratic) agent model
//
//     min  lambda'y + u(y)   s.t.  A y = b, G y <= h
//
// Around a center c the disutility is replaced by its local quadratic model
// u(c) + grad'(y-c) + 1/2 (y-c)' hess (y-c), the resulting QP is solved, and
// the expansion point moves to the new solution until it stops moving. In
// canonical QP coefficients this is Q = hess/2, q = grad - hess*c, so an
// exactly quadratic disutility terminates after the second iteration and the
// converged QP's stationarity coincides with the true model's, which is what
// the downstream KKT differentiation relies on.
#ifndef INVSTORE_SCP_HPP
#define INVSTORE_SCP_HPP

#include "invstore/common.hpp"
#include "invstore/qp.hpp"

#include <vector>

namespace invstore {

struct NonOptimalForward : InvstoreError {
    using InvstoreError::InvstoreError;
};

struct ScpSettings {
    int max_iters = 20;
    double fp_tol = 1e-6;             // fixed-point tolerance on |dy|_inf
    double obj_increase_tol = 1e-3;   // safeguard trigger on the true objective
    SolverSettings qp{};
};

struct ScpTrace {
    std::vector<Vec> iterates;       // y(0) .. y(k)
    std::vector<double> objectives;  // true objective lambda'y + u(y) at each iterate
    bool converged = false;
    int k_final = 0;
    int halvings = 0;  // safeguard activations
};

struct ScpResult {
    QpSolution solution;  // solution of the final Taylor QP
    QpProblem final_qp;   // the quadratic model differentiated by kkt-grad
    Vec center;           // expansion point of final_qp (the fixed point)
    ScpTrace trace;
};

// CostModel needs double eval(const Vec&) and
// void grad_hess(const Vec&, Vec&, Mat&).
template <class CostModel>
ScpResult scp_solve(const CostModel& model, const QpProblem& base, const Vec& y_init,
                    const ScpSettings& settings = {}) {
    const Index n = base.lambda.size();
    require(y_init.size() == n, "y_init length mismatch");
    if (base.p() > 0 && ((base.G * y_init - base.h).maxCoeff() > 1e-9))
        throw DimensionMismatch("scp_solve requires a feasible starting point");

    auto true_objective = [&](const Vec& y) { return base.lambda.dot(y) + model.eval(y); };

    ScpResult result;
    result.final_qp = base;
    ScpTrace& trace = result.trace;

    Vec y = y_init;
    double obj = true_objective(y);
    trace.iterates.push_back(y);
    trace.objectives.push_back(obj);

    Vec q_hat(n);
    Mat Q_hat(n, n);
    for (int k = 1; k <= settings.max_iters; ++k) {
        trace.k_final = k;
        model.grad_hess(y, q_hat, Q_hat);
        result.final_qp.Q = 0.5 * Q_hat;
        result.final_qp.q = q_hat - Q_hat * y;
        result.center = y;
        result.solution = solve_qp(result.final_qp, settings.qp);
        if (result.solution.status != SolveStatus::Optimal)
            throw NonOptimalForward("inner Taylor QP returned " +
                                    std::string(to_string(result.solution.status)));

        Vec y_new = result.solution.y_star;
        double obj_new = true_objective(y_new);
        bool halved = false;
        if (obj_new > obj + settings.obj_increase_tol) {
            // plain re-expansion overshot; take half a step back once
            y_new = 0.5 * (y_new + y);
            obj_new = true_objective(y_new);
            ++trace.halvings;
            halved = true;
        }
        trace.iterates.push_back(y_new);
        trace.objectives.push_back(obj_new);

        const double step = (y_new - y).lpNorm<Eigen::Infinity>();
        y = y_new;
        obj = obj_new;
        // declare the fixed point only on an unhalved step so the returned
        // QP solution coincides with the final iterate
        if (!halved && step <= settings.fp_tol) {
            trace.converged = true;
            break;
        }
    }
    return result;
}

} // namespace invstore

#endif
