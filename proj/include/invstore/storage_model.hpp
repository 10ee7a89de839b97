// Storage agent models and their canonical QP encodings.
//
// Decision vector y = [p_1..p_T, d_1..d_T] (charge, discharge MW). The state
// of charge evolves as e_t = e0 + dt * sum_{tau<=t} (eta_c p_tau - d_tau/eta_d)
// and is kept inside [E_min, E_max] through the reformulated linear bounds
//
//     e_min_shift <= dt * sum_{tau<=t} (eta_sq p_tau - d_tau) <= e_max_shift
//
// with eta_sq = eta_c*eta_d and e_*_shift = (E_* - e0)*eta_d. The round-trip
// efficiency is learned as the single scalar eta_sq; with symmetric
// efficiencies the physical bounds are recovered via eta = sqrt(eta_sq).
//
// Inequality row layout (6T rows):
//   [0,  T)  p_t <=  p_max
//   [T, 2T) -p_t <= -p_min
//   [2T,3T)  d_t <=  p_max
//   [3T,4T) -d_t <= -p_min
//   [4T,5T)  energy upper bound at step t
//   [5T,6T)  energy lower bound at step t
#ifndef INVSTORE_STORAGE_MODEL_HPP
#define INVSTORE_STORAGE_MODEL_HPP

#include "invstore/common.hpp"
#include "invstore/kkt_grad.hpp"
#include "invstore/qp.hpp"

#include <cmath>

namespace invstore {

struct StorageParams {
    double c1 = 0.0;      // linear discharge degradation, $/MWh
    double c2 = 0.0;      // quadratic discharge degradation, $/MWh^2
    double eta_sq = 1.0;  // round-trip efficiency eta_c * eta_d
    double p_max = 0.5;   // MW
    double p_min = 0.0;   // MW
    double e_max_shift = 0.0;  // MWh, (E_max - e0) * eta
    double e_min_shift = 0.0;  // MWh, (E_min - e0) * eta
    double e0 = 0.0;           // MWh, known initial state of charge
    Index T = 24;
    double dt = 1.0;  // hours per step

    double eta() const { return std::sqrt(eta_sq); }

    void validate() const {
        require(eta_sq > 0.0 && eta_sq <= 1.0, "eta_sq must be in (0, 1]");
        require(p_min <= p_max, "p_min must not exceed p_max");
        require(e_min_shift < e_max_shift, "energy bounds must be ordered");
        require(c2 >= 0.0, "c2 must be nonnegative");
        require(T >= 1, "horizon must be positive");
        require(dt > 0.0, "dt must be positive");
    }
};

// Physical (unshifted) storage description, convertible to the learnable
// reformulation and back.
struct PhysicalBounds {
    double e_min = 0.0;  // MWh
    double e_max = 0.0;  // MWh
    double eta = 1.0;
};

inline StorageParams from_physical(double c1, double c2, double eta, double p_max,
                                   double e_min, double e_max, double e0, Index T,
                                   double dt = 1.0) {
    StorageParams s;
    s.c1 = c1;
    s.c2 = c2;
    s.eta_sq = eta * eta;
    s.p_max = p_max;
    s.p_min = 0.0;
    s.e_max_shift = (e_max - e0) * eta;
    s.e_min_shift = (e_min - e0) * eta;
    s.e0 = e0;
    s.T = T;
    s.dt = dt;
    return s;
}

inline PhysicalBounds recover_physical(const StorageParams& s) {
    const double eta = s.eta();
    return {s.e_min_shift / eta + s.e0, s.e_max_shift / eta + s.e0, eta};
}

// SoC-dependent degradation: c1 * (soc_t - 0.5)^2 + c2 * d_t^2 per step,
// where soc_t is the state of charge normalized to [0, 1] by the usable
// capacity. c1 applies to the normalized deviation.
struct SocCostParams {
    double c1 = 0.0;
    double c2 = 0.0;
    StorageParams phys;  // cost coefficients inside are ignored

    void validate() const {
        require(c1 >= 0.0 && c2 >= 0.0, "SoC cost coefficients must be nonnegative");
        phys.validate();
    }
};

namespace detail {

inline void fill_constraints(const StorageParams& s, QpProblem& prob) {
    const Index T = s.T, n = 2 * T;
    prob.A.resize(0, n);
    prob.b.resize(0);
    prob.G = Mat::Zero(6 * T, n);
    prob.h.resize(6 * T);
    for (Index t = 0; t < T; ++t) {
        prob.G(t, t) = 1.0;
        prob.h[t] = s.p_max;
        prob.G(T + t, t) = -1.0;
        prob.h[T + t] = -s.p_min;
        prob.G(2 * T + t, T + t) = 1.0;
        prob.h[2 * T + t] = s.p_max;
        prob.G(3 * T + t, T + t) = -1.0;
        prob.h[3 * T + t] = -s.p_min;
        for (Index tau = 0; tau <= t; ++tau) {
            prob.G(4 * T + t, tau) = s.dt * s.eta_sq;
            prob.G(4 * T + t, T + tau) = -s.dt;
            prob.G(5 * T + t, tau) = -s.dt * s.eta_sq;
            prob.G(5 * T + t, T + tau) = s.dt;
        }
        prob.h[4 * T + t] = s.e_max_shift;
        prob.h[5 * T + t] = -s.e_min_shift;
    }
}

inline void fill_lambda(const Vec& prices, QpProblem& prob) {
    const Index T = prices.size();
    prob.lambda.resize(2 * T);
    prob.lambda.head(T) = prices;
    prob.lambda.tail(T) = -prices;
}

} // namespace detail

// Quadratic degradation model: cost sum_t lambda_t (p_t - d_t) + c1 d_t + c2 d_t^2.
inline QpProblem assemble_quadratic(const StorageParams& s, const Vec& prices) {
    s.validate();
    require(prices.size() == s.T, "price vector length must equal the horizon");
    const Index T = s.T, n = 2 * T;
    QpProblem prob;
    prob.Q = Mat::Zero(n, n);
    prob.Q.diagonal().tail(T).setConstant(s.c2);
    prob.q = Vec::Zero(n);
    prob.q.tail(T).setConstant(s.c1);
    detail::fill_lambda(prices, prob);
    detail::fill_constraints(s, prob);
    return prob;
}

// SoC-dependent model. Substituting the SoC dynamics into the cost couples
// charge and discharge across time: Q gains the Gram matrix of the cumulative
// sum vectors a_t (dt*eta on p_tau, -dt/eta on d_tau for tau <= t, scaled by
// the usable capacity).
inline QpProblem assemble_soc(const SocCostParams& params, const Vec& prices) {
    params.validate();
    const StorageParams& s = params.phys;
    require(prices.size() == s.T, "price vector length must equal the horizon");
    const Index T = s.T, n = 2 * T;
    const double eta = s.eta();
    const double cap = (s.e_max_shift - s.e_min_shift) / eta;  // E_max - E_min
    const double e0_rel = -s.e_min_shift / eta;                // e0 - E_min
    const double offset = 0.5 * cap - e0_rel;  // SoC deviation at y = 0 is -offset/cap

    QpProblem prob;
    prob.Q = Mat::Zero(n, n);
    prob.Q.diagonal().tail(T).setConstant(params.c2);
    prob.q = Vec::Zero(n);
    Vec a = Vec::Zero(n);
    for (Index t = 0; t < T; ++t) {
        a[t] = s.dt * eta / cap;
        a[T + t] = -s.dt / (eta * cap);
        // accumulate c1 * (a_t'y - offset/cap)^2 for the running prefix
        Vec a_t = Vec::Zero(n);
        a_t.head(t + 1) = a.head(t + 1);
        a_t.segment(T, t + 1) = a.segment(T, t + 1);
        prob.Q.noalias() += params.c1 * a_t * a_t.transpose();
        prob.q.noalias() += (-2.0 * params.c1 * offset / cap) * a_t;
    }
    detail::fill_lambda(prices, prob);
    detail::fill_constraints(s, prob);
    return prob;
}

// Map the full-matrix parameter gradients back onto the shared scalars; each
// scalar gradient is the sum of entry gradients over every position the
// scalar occupies.
struct StorageScalarGrads {
    double c1 = 0.0;
    double c2 = 0.0;
    double eta_sq = 0.0;
    double e_min_shift = 0.0;
    double e_max_shift = 0.0;
};

inline StorageScalarGrads extract_storage_grads(const StorageParams& s, const ParamGrads& g) {
    const Index T = s.T;
    StorageScalarGrads out;
    require(g.dq.size() == 2 * T && g.dh.size() == 6 * T, "gradient blocks have wrong shape");
    out.c1 = g.dq.tail(T).sum();
    out.c2 = g.dQ.diagonal().tail(T).sum();
    for (Index t = 0; t < T; ++t) {
        for (Index tau = 0; tau <= t; ++tau) {
            out.eta_sq += s.dt * g.dG(4 * T + t, tau);
            out.eta_sq -= s.dt * g.dG(5 * T + t, tau);
        }
        out.e_max_shift += g.dh[4 * T + t];
        out.e_min_shift -= g.dh[5 * T + t];
    }
    return out;
}

// State-of-charge trajectory implied by a dispatch, using the physical
// (symmetric-efficiency) dynamics.
inline Vec soc_trajectory(const StorageParams& s, const Vec& y) {
    require(y.size() == 2 * s.T, "dispatch length mismatch");
    const double eta = s.eta();
    Vec e(s.T);
    double acc = s.e0;
    for (Index t = 0; t < s.T; ++t) {
        acc += s.dt * (eta * y[t] - y[s.T + t] / eta);
        e[t] = acc;
    }
    return e;
}

inline bool dispatch_feasible(const StorageParams& s, const Vec& y, double tol = 1e-7) {
    const PhysicalBounds phys = recover_physical(s);
    for (Index t = 0; t < s.T; ++t) {
        if (y[t] < s.p_min - tol || y[t] > s.p_max + tol) return false;
        if (y[s.T + t] < s.p_min - tol || y[s.T + t] > s.p_max + tol) return false;
    }
    const Vec e = soc_trajectory(s, y);
    return e.minCoeff() >= phys.e_min - tol && e.maxCoeff() <= phys.e_max + tol;
}

} // namespace invstore

#endif
