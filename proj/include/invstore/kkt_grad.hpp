// Gradients of the QP argmin with respect to every problem parameter.
//
// Totally differentiating the KKT conditions of the solved QP gives a linear
// system in (dy, dmu, dnu) with the block matrix
//
//     K = [ Q + Q'     G'            A' ]
//         [ D(mu*) G   D(G y* - h)   0  ]
//         [ A          0             0  ]
//
// Rather than materializing forward-mode parameter sensitivities (4-tensors
// for dQ, dA, dG), the loss gradient is obtained from a single adjoint solve
// K' z = -[dL/dy; 0; 0] followed by outer-product assembly per parameter.
#ifndef INVSTORE_KKT_GRAD_HPP
#define INVSTORE_KKT_GRAD_HPP

#include "invstore/common.hpp"
#include "invstore/qp.hpp"

#include <Eigen/LU>
#include <Eigen/QR>

#include <vector>

namespace invstore {

struct KktSettings {
    double act_tol = 1e-7;   // slack threshold for the active set
    double deg_tol = 1e-7;   // strict-complementarity threshold
    double diag_perturb = 1e-10;
};

struct KktFactor {
    Mat K;
    Eigen::PartialPivLU<Mat> lu_transposed;
    std::vector<Index> active_set;
    std::vector<Index> degenerate_rows;  // mu ~ 0 and slack ~ 0 simultaneously
    Vec mu_used;                         // inactive multipliers snapped to 0
    bool dependent_active = false;       // active-set gradients linearly dependent
    Index n = 0, p = 0, m = 0;
};

struct ParamGrads {
    Mat dQ;  // symmetrized
    Vec dq;
    Mat dA;
    Vec db;
    Mat dG;
    Vec dh;
};

inline KktFactor factor_kkt(const QpProblem& prob, const QpSolution& sol,
                            const KktSettings& settings = {}) {
    if (sol.status != SolveStatus::Optimal)
        throw SingularKkt("factor_kkt requires an Optimal solution");
    KktFactor f;
    f.n = prob.n();
    f.m = prob.m();
    f.p = prob.p();
    const Index dim = f.n + f.p + f.m;

    // Round clearly inactive multipliers to exactly zero so slack rows
    // decouple and their parameter sensitivities vanish identically.
    f.mu_used = sol.mu_star;
    Vec viol(f.p);
    if (f.p) viol = prob.G * sol.y_star - prob.h;
    for (Index i = 0; i < f.p; ++i) {
        const double slack = -viol[i];
        if (slack <= settings.act_tol) f.active_set.push_back(i);
        if (f.mu_used[i] < settings.deg_tol) {
            if (slack < settings.deg_tol)
                f.degenerate_rows.push_back(i);
            else
                f.mu_used[i] = 0.0;
        }
    }

    f.K.setZero(dim, dim);
    Mat H = prob.Q + prob.Q.transpose();
    if (sol.reg_applied != 0.0) H.diagonal().array() += 2.0 * sol.reg_applied;
    f.K.topLeftCorner(f.n, f.n) = H;
    if (f.p) {
        f.K.block(0, f.n, f.n, f.p) = prob.G.transpose();
        f.K.block(f.n, 0, f.p, f.n) = f.mu_used.asDiagonal() * prob.G;
        f.K.block(f.n, f.n, f.p, f.p) = viol.asDiagonal();
        for (Index i : f.degenerate_rows)
            f.K(f.n + i, f.n + i) -= settings.diag_perturb;
    }
    if (f.m) {
        f.K.block(0, f.n + f.p, f.n, f.m) = prob.A.transpose();
        f.K.block(f.n + f.p, 0, f.m, f.n) = prob.A;
    }

    // Linearly dependent active-constraint gradients make K singular in the
    // limit of exact complementarity. Interior-point slacks keep the factored
    // matrix usable, so this is recorded as a flag rather than an error:
    // storage problems hit it routinely when the SoC rides an energy bound
    // across consecutive idle steps.
    if (f.active_set.size() + static_cast<std::size_t>(f.m) > 0) {
        Mat act(static_cast<Index>(f.active_set.size()) + f.m, f.n);
        Index r = 0;
        for (Index i : f.active_set) act.row(r++) = prob.G.row(i);
        if (f.m) act.bottomRows(f.m) = prob.A;
        Eigen::ColPivHouseholderQR<Mat> qr(act.transpose());
        qr.setThreshold(1e-10);
        f.dependent_active = qr.rank() < act.rows();
    }

    f.lu_transposed.compute(f.K.transpose());
    const Vec u = f.lu_transposed.matrixLU().diagonal().cwiseAbs();
    if (u.minCoeff() <= 1e-14 * std::max(1.0, u.maxCoeff()))
        throw SingularKkt("KKT matrix is singular beyond the perturbation policy");
    return f;
}

// Adjoint solve K' z = -[dL_dy; 0; 0]; exposed for chained backward passes.
inline Vec kkt_adjoint(const KktFactor& f, const Vec& dL_dy) {
    require(dL_dy.size() == f.n, "dL_dy size mismatch");
    Vec rhs = Vec::Zero(f.n + f.p + f.m);
    rhs.head(f.n) = -dL_dy;
    return f.lu_transposed.solve(rhs);
}

inline ParamGrads backward(const KktFactor& f, const QpProblem& prob, const QpSolution& sol,
                           const Vec& dL_dy) {
    const Vec z = kkt_adjoint(f, dL_dy);
    const auto zy = z.head(f.n);
    const auto zmu = z.segment(f.n, f.p);
    const auto znu = z.tail(f.m);
    const Vec& y = sol.y_star;

    ParamGrads g;
    g.dQ.noalias() = zy * y.transpose();
    g.dQ += g.dQ.transpose().eval();
    g.dq = zy;
    if (f.p) {
        g.dG.noalias() = f.mu_used * zy.transpose();
        g.dG.noalias() += (f.mu_used.cwiseProduct(zmu)) * y.transpose();
        g.dh = -f.mu_used.cwiseProduct(zmu);
    } else {
        g.dG.resize(0, f.n);
        g.dh.resize(0);
    }
    if (f.m) {
        g.dA.noalias() = sol.nu_star * zy.transpose();
        g.dA.noalias() += znu * y.transpose();
        g.db = -znu;
    } else {
        g.dA.resize(0, f.n);
        g.db.resize(0);
    }
    return g;
}

} // namespace invstore

#endif
