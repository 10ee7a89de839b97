// Dense convex QP solver.
//
// Problem form:
//     min   lambda'y + q'y + y'Qy
//     s.t.  A y = b,  G y <= h
//
// Note the quadratic term carries no 1/2: the objective Hessian is Q + Q'.
// Solved with a Mehrotra-style predictor-corrector interior-point method on
// the slack form (G y + s = h, s >= 0). Pure equality-constrained problems
// bypass the barrier and solve the KKT saddle system directly.
#ifndef INVSTORE_QP_HPP
#define INVSTORE_QP_HPP

#include "invstore/common.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/QR>

#include <algorithm>
#include <limits>

namespace invstore {

struct SolverSettings {
    double tol = 1e-8;     // residual target (scaled by data magnitude)
    int max_iter = 100;
    double reg = 1e-8;     // diagonal added to Q when nearly singular
    bool refine = true;    // one iterative-refinement pass per Newton solve
};

enum class SolveStatus { Optimal, Infeasible, MaxIterations };

inline const char* to_string(SolveStatus s) {
    switch (s) {
        case SolveStatus::Optimal: return "Optimal";
        case SolveStatus::Infeasible: return "Infeasible";
        default: return "MaxIterations";
    }
}

struct KktResiduals {
    double primal = std::numeric_limits<double>::infinity();
    double dual = std::numeric_limits<double>::infinity();
    double comp = std::numeric_limits<double>::infinity();
};

struct QpProblem {
    Mat Q;       // n x n, symmetric PSD
    Vec q;       // n
    Vec lambda;  // n, signed price vector stacked [l_1..l_T, -l_1..-l_T]
    Mat A;       // m x n
    Vec b;       // m
    Mat G;       // p x n
    Vec h;       // p

    Index n() const { return Q.rows(); }
    Index m() const { return A.rows(); }
    Index p() const { return G.rows(); }

    double objective(const Vec& y) const {
        return (lambda + q).dot(y) + y.dot(Q * y);
    }

    void check_dims() const {
        const Index nn = n();
        require(Q.cols() == nn, "Q must be square");
        require(q.size() == nn, "q size mismatch");
        require(lambda.size() == nn, "lambda size mismatch");
        require(A.size() == 0 || A.cols() == nn, "A column mismatch");
        require(b.size() == m(), "b size mismatch");
        require(G.size() == 0 || G.cols() == nn, "G column mismatch");
        require(h.size() == p(), "h size mismatch");
    }

    // Full invariant check (symmetry, PSD, equality row rank). More expensive
    // than check_dims; meant for entry points and tests, not inner loops.
    void validate() const {
        check_dims();
        if ((Q - Q.transpose()).lpNorm<Eigen::Infinity>() >
            1e-9 * (1.0 + Q.lpNorm<Eigen::Infinity>()))
            throw DimensionMismatch("Q must be symmetric");
        if (n() > 0) {
            Eigen::SelfAdjointEigenSolver<Mat> es(Q, Eigen::EigenvaluesOnly);
            if (es.eigenvalues().minCoeff() < -1e-10)
                throw DimensionMismatch("Q must be positive semidefinite");
        }
        if (m() > 0) {
            Eigen::ColPivHouseholderQR<Mat> qr(A.transpose());
            if (qr.rank() < m())
                throw DimensionMismatch("A must have full row rank");
        }
    }
};

struct QpSolution {
    Vec y_star;
    Vec nu_star;
    Vec mu_star;
    SolveStatus status = SolveStatus::MaxIterations;
    int iterations = 0;
    KktResiduals residuals;
    double reg_applied = 0.0;  // diagonal regularization added to Q
};

namespace detail {

// Factor a symmetric positive definite matrix, bumping the diagonal if the
// Cholesky factorization reports trouble.
class SpdSolver {
public:
    void compute(const Mat& M) {
        llt_.compute(M);
        if (llt_.info() == Eigen::Success) {
            use_llt_ = true;
            return;
        }
        use_llt_ = false;
        Mat Mb = M;
        double bump = 1e-14 * (1.0 + M.diagonal().cwiseAbs().maxCoeff());
        for (int k = 0; k < 6; ++k) {
            Mb.diagonal().array() += bump;
            llt_.compute(Mb);
            if (llt_.info() == Eigen::Success) {
                use_llt_ = true;
                return;
            }
            bump *= 100.0;
        }
        lu_.compute(M);
    }

    Vec solve(const Vec& r) const { return use_llt_ ? Vec(llt_.solve(r)) : Vec(lu_.solve(r)); }
    Mat solve(const Mat& R) const { return use_llt_ ? Mat(llt_.solve(R)) : Mat(lu_.solve(R)); }

private:
    Eigen::LLT<Mat> llt_;
    Eigen::PartialPivLU<Mat> lu_;
    bool use_llt_ = false;
};

inline double inf_norm_or_zero(const Vec& v) {
    return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0;
}

// Largest alpha in (0, cap] keeping x + alpha*dx > 0.
inline double step_to_boundary(const Vec& x, const Vec& dx, double cap) {
    double a = cap;
    for (Index i = 0; i < x.size(); ++i)
        if (dx[i] < 0.0) a = std::min(a, -x[i] / dx[i]);
    return a;
}

} // namespace detail

inline QpSolution solve_qp(const QpProblem& prob, const SolverSettings& settings = {}) {
    prob.check_dims();
    const Index n = prob.n(), m = prob.m(), p = prob.p();

    QpSolution sol;
    sol.nu_star = Vec::Zero(m);
    sol.mu_star = Vec::Zero(p);

    // Regularize a (near-)singular Q so the primal optimum is unique and
    // deterministic. Probed with a shifted Cholesky instead of a full
    // eigendecomposition.
    Mat Qsym = 0.5 * (prob.Q + prob.Q.transpose());
    {
        Mat probe = Qsym;
        probe.diagonal().array() -= 1e-9;
        Eigen::LLT<Mat> llt(probe);
        if (llt.info() != Eigen::Success) {
            sol.reg_applied = settings.reg;
            Qsym.diagonal().array() += settings.reg;
        }
    }
    const Mat H = 2.0 * Qsym;
    const Vec c = prob.lambda + prob.q;

    const double scale = 1.0 + std::max({c.lpNorm<Eigen::Infinity>(),
                                         detail::inf_norm_or_zero(prob.b),
                                         detail::inf_norm_or_zero(prob.h)});
    const double stat_thr = std::min(1e-6, settings.tol * scale);
    const double feas_thr = std::min(1e-7, settings.tol * scale);
    const double comp_thr = std::min(1e-7, settings.tol * scale);

    auto fill_residuals = [&](const Vec& y, const Vec& nu, const Vec& mu) {
        Vec rd = H * y + c;
        if (m) rd.noalias() += prob.A.transpose() * nu;
        if (p) rd.noalias() += prob.G.transpose() * mu;
        sol.residuals.dual = detail::inf_norm_or_zero(rd);
        double prim = 0.0;
        if (m) prim = (prob.A * y - prob.b).lpNorm<Eigen::Infinity>();
        double comp = 0.0;
        if (p) {
            const Vec viol = prob.G * y - prob.h;
            prim = std::max(prim, viol.maxCoeff());
            comp = (mu.array() * viol.array()).abs().maxCoeff();
        }
        sol.residuals.primal = std::max(prim, 0.0);
        sol.residuals.comp = comp;
    };

    // No inequalities: solve the KKT saddle system in one shot.
    if (p == 0) {
        Mat K(n + m, n + m);
        K.setZero();
        K.topLeftCorner(n, n) = H;
        if (m) {
            K.topRightCorner(n, m) = prob.A.transpose();
            K.bottomLeftCorner(m, n) = prob.A;
        }
        Vec rhs(n + m);
        rhs.head(n) = -c;
        rhs.tail(m) = prob.b;
        Eigen::PartialPivLU<Mat> lu(K);
        const Vec z = lu.solve(rhs);
        sol.y_star = z.head(n);
        sol.nu_star = z.tail(m);
        sol.iterations = 1;
        fill_residuals(sol.y_star, sol.nu_star, sol.mu_star);
        const bool ok = sol.residuals.dual <= stat_thr && sol.residuals.primal <= feas_thr;
        sol.status = ok ? SolveStatus::Optimal : SolveStatus::MaxIterations;
        return sol;
    }

    // Interior-point iteration state. Cold start: y = 0 (projected onto
    // Ay = b when equalities exist), slacks shifted to strict positivity.
    Vec y = Vec::Zero(n);
    if (m) {
        Eigen::LLT<Mat> aat((prob.A * prob.A.transpose()).eval());
        y = prob.A.transpose() * aat.solve(prob.b);
    }
    Vec s = (prob.h - prob.G * y).cwiseMax(1.0);
    Vec mu = Vec::Ones(p);
    Vec nu = Vec::Zero(m);

    detail::SpdSolver mred;
    Mat AMiAt;
    Eigen::LLT<Mat> schur;

    // The achievable accuracy is limited by the conditioning of the reduced
    // system once active slacks collapse, so the best iterate seen is kept
    // and returned when progress stalls.
    Vec best_y = y, best_s = s, best_mu = mu, best_nu = nu;
    double best_metric = std::numeric_limits<double>::infinity();
    int since_improvement = 0;
    bool infeasible = false;

    for (int iter = 0; iter < settings.max_iter; ++iter) {
        // residuals
        Vec rd = H * y + c + prob.G.transpose() * mu;
        if (m) rd.noalias() += prob.A.transpose() * nu;
        Vec ri = prob.G * y + s - prob.h;
        Vec re = m ? Vec(prob.A * y - prob.b) : Vec();
        const double comp_max = (s.array() * mu.array()).maxCoeff();
        const double gap = std::max(s.dot(mu) / static_cast<double>(p), 0.0);

        const double rd_n = rd.lpNorm<Eigen::Infinity>();
        const double ri_n = ri.lpNorm<Eigen::Infinity>();
        const double re_n = detail::inf_norm_or_zero(re);
        if (!std::isfinite(rd_n) || !std::isfinite(comp_max)) break;

        const double metric =
            std::max({rd_n / scale, ri_n, re_n, comp_max / scale});
        if (metric < 0.9 * best_metric) {
            best_metric = std::min(best_metric, metric);
            best_y = y;
            best_s = s;
            best_mu = mu;
            best_nu = nu;
            since_improvement = 0;
        } else if (++since_improvement >= 10) {
            sol.iterations = iter;
            break;  // numerical floor reached
        }

        if (rd_n <= stat_thr && ri_n <= feas_thr && re_n <= feas_thr && comp_max <= comp_thr) {
            best_y = y;
            best_s = s;
            best_mu = mu;
            best_nu = nu;
            sol.iterations = iter;
            break;
        }

        // Farkas-style infeasibility certificate: A'nu + G'mu ~ 0, mu >= 0,
        // b'nu + h'mu < 0, with diverging dual magnitude.
        const double dual_mag =
            std::max(detail::inf_norm_or_zero(nu), mu.lpNorm<Eigen::Infinity>());
        if (dual_mag > 1e5) {
            Vec cert = prob.G.transpose() * mu;
            if (m) cert.noalias() += prob.A.transpose() * nu;
            double gain = prob.h.dot(mu) + (m ? prob.b.dot(nu) : 0.0);
            if (cert.lpNorm<Eigen::Infinity>() <= 1e-8 * dual_mag &&
                gain <= -1e-8 * dual_mag) {
                infeasible = true;
                sol.iterations = iter;
                break;
            }
        }

        // Reduced Newton matrix M = H + G' W G with W = diag(mu/s), shared by
        // the predictor and corrector solves.
        const Vec w = mu.cwiseQuotient(s).cwiseMin(1e16);
        Mat M = H;
        M.noalias() += prob.G.transpose() * w.asDiagonal() * prob.G;
        mred.compute(M);
        if (m) {
            AMiAt.noalias() = prob.A * mred.solve(Mat(prob.A.transpose()));
            schur.compute(AMiAt);
        }

        auto newton = [&](const Vec& rc, Vec& dy, Vec& dnu, Vec& ds, Vec& dmu) {
            // eliminate ds, dmu; solve for (dy, dnu)
            Vec rhs_y = -rd - prob.G.transpose() *
                                  (w.asDiagonal() * ri - rc.cwiseQuotient(s));
            auto solve_pair = [&](const Vec& ry, const Vec& re_in, Vec& oy, Vec& onu) {
                if (m) {
                    const Vec t = mred.solve(ry);
                    onu = schur.solve(prob.A * t + re_in);
                    oy = mred.solve(Vec(ry - prob.A.transpose() * onu));
                } else {
                    oy = mred.solve(ry);
                    onu.resize(0);
                }
            };
            solve_pair(rhs_y, m ? Vec(-re) : Vec(), dy, dnu);
            if (settings.refine) {
                Vec res_y = rhs_y - M * dy;
                if (m) res_y.noalias() -= prob.A.transpose() * dnu;
                Vec res_e = m ? Vec(-re - prob.A * dy) : Vec();
                Vec cy, cnu;
                solve_pair(res_y, res_e, cy, cnu);
                dy += cy;
                if (m) dnu += cnu;
            }
            ds = -ri - prob.G * dy;
            dmu = (-rc - mu.cwiseProduct(ds)).cwiseQuotient(s);
        };

        // predictor (affine scaling) step
        Vec dy_a, dnu_a, ds_a, dmu_a;
        newton(s.cwiseProduct(mu), dy_a, dnu_a, ds_a, dmu_a);
        const double ap_a = detail::step_to_boundary(s, ds_a, 1.0);
        const double ad_a = detail::step_to_boundary(mu, dmu_a, 1.0);
        const double gap_aff =
            (s + ap_a * ds_a).dot(mu + ad_a * dmu_a) / static_cast<double>(p);
        double sigma =
            gap > 0.0 ? std::pow(std::clamp(gap_aff / gap, 0.0, 1.0), 3.0) : 0.0;
        sigma = std::clamp(sigma, 1e-8, 0.99);

        // corrector with centering
        Vec rc = s.cwiseProduct(mu) + ds_a.cwiseProduct(dmu_a);
        rc.array() -= sigma * gap;
        Vec dy, dnu, ds, dmu;
        newton(rc, dy, dnu, ds, dmu);

        const double ap = 0.995 * detail::step_to_boundary(s, ds, 1.0 / 0.995);
        const double ad = 0.995 * detail::step_to_boundary(mu, dmu, 1.0 / 0.995);
        if (ap < 1e-13 && ad < 1e-13) {
            sol.iterations = iter;
            break;  // stalled steps
        }

        y += ap * dy;
        s += ap * ds;
        mu += ad * dmu;
        if (m) nu += ad * dnu;
        if (!y.allFinite() || !s.allFinite() || !mu.allFinite()) break;
        sol.iterations = iter + 1;
    }

    sol.y_star = best_y;
    sol.nu_star = best_nu;
    sol.mu_star = best_mu;
    fill_residuals(best_y, best_nu, best_mu);
    if (infeasible) {
        sol.status = SolveStatus::Infeasible;
    } else {
        // Optimal whenever the contract bounds hold, even if the requested
        // tolerance proved tighter than double precision allows here.
        const bool contract = sol.residuals.primal <= 1e-7 &&
                              sol.residuals.dual <= 1e-6 &&
                              sol.residuals.comp <= 1e-7 &&
                              (p == 0 || sol.mu_star.minCoeff() >= -1e-8);
        sol.status = contract ? SolveStatus::Optimal : SolveStatus::MaxIterations;
    }
    return sol;
}

} // namespace invstore

#endif
