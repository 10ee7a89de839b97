// Input-convex network representing an unknown convex disutility u(y).
//
// Two hidden layers with softplus activations:
//
//     z1 = a(W0 x + b0)
//     z2 = a(Wz z1 + Wy x + b1)        Wz >= 0 elementwise
//     u  = vz.z2 + vy.x + b2           vz >= 0 elementwise
//
// Nonnegative hidden-to-hidden weights and a convex nondecreasing activation
// make u convex in x, so the evaluated Hessian is positive semidefinite by
// construction:
//
//     grad u = vy + Wy' r2 + W0' r1,        r2 = vz o a'(t2), r1 = a'(t1) o s1
//     hess u = J2' D(k2) J2 + W0' D(k1) W0, J2 = Wz D(a'(t1)) W0 + Wy
//     k2 = vz o a''(t2) >= 0,               k1 = s1 o a''(t1) >= 0
//
// with s1 = Wz' r2 >= 0. All derivatives, including the parameter gradients
// of contractions through grad/hess, follow these closed-form layer rules; no
// autodiff engine is involved. Third derivatives of softplus appear in the
// parameter backward, as expected for differentiating a Hessian.
//
// Two input modes:
//   Vector: x is the full decision vector y (dimension 2T).
//   Scalar: u(y) = sum_t f(d_t), a one-input network applied per time step;
//           gradients and Hessian touch only the discharge block.
#ifndef INVSTORE_ICNN_HPP
#define INVSTORE_ICNN_HPP

#include "invstore/common.hpp"

#include <Eigen/Dense>

namespace invstore {

namespace act {
inline double softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}
inline double sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}
} // namespace act

enum class IcnnMode { Scalar, Vector };

class IcnnModel {
public:
    IcnnMode mode = IcnnMode::Scalar;
    Index T = 24;
    Index hidden = 24;
    double input_scale = 1.0;  // x = input_scale * (raw input)

    Mat W0, Wz, Wy;  // Wz is the nonnegative z-path
    Vec b0, b1, vz, vy;
    double b2 = 0.0;

    Index input_dim() const { return mode == IcnnMode::Scalar ? 1 : 2 * T; }
    Index dispatch_dim() const { return 2 * T; }

    static IcnnModel create(IcnnMode mode, Index T, Index hidden, double input_scale,
                            Rng& rng) {
        IcnnModel m;
        m.mode = mode;
        m.T = T;
        m.hidden = hidden;
        m.input_scale = input_scale;
        const Index in = m.input_dim();
        auto uni = [&](Index r, Index c) {
            return Mat::NullaryExpr(r, c, [&](Index, Index) { return rng.uniform(-0.1, 0.1); });
        };
        m.W0 = uni(hidden, in);
        m.Wy = uni(hidden, in);
        m.vy = uni(in, 1);
        m.b0 = uni(hidden, 1);
        m.b1 = uni(hidden, 1);
        m.Wz = Mat::NullaryExpr(hidden, hidden,
                                [&](Index, Index) { return rng.uniform(0.0, 0.1); });
        m.vz = Vec::NullaryExpr(hidden, [&](Index) { return rng.uniform(0.0, 0.1); });
        m.b2 = 0.0;
        return m;
    }

    // ---- flat parameter vector (fixed order, used by the optimizer) ----

    Index num_params() const {
        return W0.size() + b0.size() + Wz.size() + Wy.size() + b1.size() + vz.size() +
               vy.size() + 1;
    }

    Vec flat() const {
        Vec out(num_params());
        Index at = 0;
        auto put = [&](const auto& block) {
            out.segment(at, block.size()) =
                Eigen::Map<const Vec>(block.data(), block.size());
            at += block.size();
        };
        put(W0), put(b0), put(Wz), put(Wy), put(b1), put(vz), put(vy);
        out[at] = b2;
        return out;
    }

    void set_flat(const Vec& theta) {
        require(theta.size() == num_params(), "parameter vector size mismatch");
        Index at = 0;
        auto take = [&](auto& block) {
            Eigen::Map<Vec>(block.data(), block.size()) = theta.segment(at, block.size());
            at += block.size();
        };
        take(W0), take(b0), take(Wz), take(Wy), take(b1), take(vz), take(vy);
        b2 = theta[at];
    }

    // Projection step after a parameter update: the z-path must stay
    // nonnegative for convexity.
    void project_nonneg() {
        Wz = Wz.cwiseMax(0.0);
        vz = vz.cwiseMax(0.0);
    }

    // ---- evaluation ----

    double eval(const Vec& y) const {
        if (mode == IcnnMode::Vector) {
            Workspace ws;
            forward(input_scale * y, ws);
            return value(ws);
        }
        require(y.size() == 2 * T, "dispatch length mismatch");
        double total = 0.0;
        Workspace ws;
        for (Index t = 0; t < T; ++t) {
            forward(Vec::Constant(1, input_scale * y[T + t]), ws);
            total += value(ws);
        }
        return total;
    }

    // q_hat = grad u(y), Q_hat = hess u(y); both with respect to the raw
    // (unscaled) dispatch vector.
    void grad_hess(const Vec& y, Vec& q_hat, Mat& Q_hat) const {
        const Index n = 2 * T;
        require(y.size() == n, "dispatch length mismatch");
        q_hat = Vec::Zero(n);
        Q_hat = Mat::Zero(n, n);
        Workspace ws;
        if (mode == IcnnMode::Vector) {
            forward(input_scale * y, ws);
            q_hat = input_scale * grad_x(ws);
            Q_hat = (input_scale * input_scale) * hess_x(ws);
            return;
        }
        for (Index t = 0; t < T; ++t) {
            forward(Vec::Constant(1, input_scale * y[T + t]), ws);
            q_hat[T + t] = input_scale * grad_x(ws)[0];
            Q_hat(T + t, T + t) = input_scale * input_scale * hess_x(ws)(0, 0);
        }
    }

    // Parameter gradient of the contraction
    //     phi(theta) = gbar . grad u(y) + <Mbar, hess u(y)>
    // i.e. the chain-rule step that routes loss gradients arriving through
    // q_hat and Q_hat into the network weights. Returns a flat vector in the
    // same order as flat().
    Vec backward_params(const Vec& y, const Vec& gbar, const Mat& Mbar) const {
        const Index n = 2 * T;
        require(y.size() == n && gbar.size() == n, "dispatch length mismatch");
        require(Mbar.rows() == n && Mbar.cols() == n, "Mbar shape mismatch");
        Accum acc;
        acc.init(*this);
        Workspace ws;
        if (mode == IcnnMode::Vector) {
            const Mat Mbar_sym =
                0.5 * input_scale * input_scale * (Mbar + Mbar.transpose());
            forward(input_scale * y, ws);
            backward_x(ws, Vec(input_scale * gbar), Mbar_sym, acc);
        } else {
            for (Index t = 0; t < T; ++t) {
                forward(Vec::Constant(1, input_scale * y[T + t]), ws);
                const Vec gt = Vec::Constant(1, input_scale * gbar[T + t]);
                const Mat mt = Mat::Constant(
                    1, 1, input_scale * input_scale * Mbar(T + t, T + t));
                backward_x(ws, gt, mt, acc);
            }
        }
        return acc.flatten(*this);
    }

private:
    struct Workspace {
        Vec x;
        Vec t1, z1, p1, q1;  // q = a''
        Vec t2, p2, q2;
        Vec r2, s1, r1;
    };

    struct Accum {
        Mat W0, Wz, Wy;
        Vec b0, b1, vz, vy;

        void init(const IcnnModel& m) {
            W0 = Mat::Zero(m.W0.rows(), m.W0.cols());
            Wz = Mat::Zero(m.Wz.rows(), m.Wz.cols());
            Wy = Mat::Zero(m.Wy.rows(), m.Wy.cols());
            b0 = Vec::Zero(m.b0.size());
            b1 = Vec::Zero(m.b1.size());
            vz = Vec::Zero(m.vz.size());
            vy = Vec::Zero(m.vy.size());
        }

        Vec flatten(const IcnnModel& m) const {
            Vec out(m.num_params());
            Index at = 0;
            auto put = [&](const auto& block) {
                out.segment(at, block.size()) =
                    Eigen::Map<const Vec>(block.data(), block.size());
                at += block.size();
            };
            put(W0), put(b0), put(Wz), put(Wy), put(b1), put(vz), put(vy);
            out[at] = 0.0;  // b2 never influences derivatives of u
            return out;
        }
    };

    void forward(const Vec& x, Workspace& ws) const {
        ws.x = x;
        ws.t1 = W0 * x + b0;
        ws.z1 = ws.t1.unaryExpr(&act::softplus);
        ws.p1 = ws.t1.unaryExpr(&act::sigmoid);
        ws.q1 = ws.p1.array() * (1.0 - ws.p1.array());
        ws.t2 = Wz * ws.z1 + Wy * x + b1;
        ws.p2 = ws.t2.unaryExpr(&act::sigmoid);
        ws.q2 = ws.p2.array() * (1.0 - ws.p2.array());
        ws.r2 = vz.cwiseProduct(ws.p2);
        ws.s1 = Wz.transpose() * ws.r2;
        ws.r1 = ws.p1.cwiseProduct(ws.s1);
    }

    double value(const Workspace& ws) const {
        return vz.dot(ws.t2.unaryExpr(&act::softplus)) + vy.dot(ws.x) + b2;
    }

    Vec grad_x(const Workspace& ws) const {
        return vy + Wy.transpose() * ws.r2 + W0.transpose() * ws.r1;
    }

    Mat hess_x(const Workspace& ws) const {
        const Mat J2 = Wz * ws.p1.asDiagonal() * W0 + Wy;
        const Vec k2 = vz.cwiseProduct(ws.q2);
        const Vec k1 = ws.s1.cwiseProduct(ws.q1);
        Mat H = J2.transpose() * k2.asDiagonal() * J2;
        H.noalias() += W0.transpose() * k1.asDiagonal() * W0;
        return H;
    }

    // Reverse sweep of phi = gbar.grad_x + <Mbar_sym, hess_x> through every
    // parameter; Mbar_sym must already be symmetrized and input-scaled.
    void backward_x(const Workspace& ws, const Vec& gbar, const Mat& Mbar_sym,
                    Accum& acc) const {
        const Mat J2 = Wz * ws.p1.asDiagonal() * W0 + Wy;
        const Vec k2 = vz.cwiseProduct(ws.q2);
        const Vec k1 = ws.s1.cwiseProduct(ws.q1);
        const Vec g0 = W0 * gbar;
        const Vec gy = Wy * gbar;
        const Mat J2M = J2 * Mbar_sym;
        const Mat W0M = W0 * Mbar_sym;
        const Vec d2 = (J2M.array() * J2.array()).rowwise().sum();
        const Vec d1 = (W0M.array() * W0.array()).rowwise().sum();

        // third derivative of softplus: a''' = a'' (1 - 2 a')
        const Vec t3_2 = ws.q2.array() * (1.0 - 2.0 * ws.p2.array());
        const Vec t3_1 = ws.q1.array() * (1.0 - 2.0 * ws.p1.array());

        acc.vy += gbar;
        acc.W0 += ws.r1 * gbar.transpose();  // r1.(W0 gbar) direct term
        acc.Wy += ws.r2 * gbar.transpose();  // r2.(Wy gbar) direct term

        const Vec kbar2 = d2;
        const Vec kbar1 = d1;
        const Mat J2bar = 2.0 * k2.asDiagonal() * J2M;
        acc.W0 += 2.0 * k1.asDiagonal() * W0M;

        const Vec q2bar = kbar2.cwiseProduct(vz);
        acc.vz += kbar2.cwiseProduct(ws.q2);
        Vec s1bar = kbar1.cwiseProduct(ws.q1);
        const Vec q1bar = kbar1.cwiseProduct(ws.s1);

        const Vec r1bar = g0;
        Vec p1bar = r1bar.cwiseProduct(ws.s1);
        s1bar += r1bar.cwiseProduct(ws.p1);

        const Vec r2bar = gy + Wz * s1bar;
        acc.Wz += ws.r2 * s1bar.transpose();
        acc.vz += r2bar.cwiseProduct(ws.p2);
        const Vec p2bar = r2bar.cwiseProduct(vz);

        acc.Wy += J2bar;
        acc.Wz += J2bar * W0.transpose() * ws.p1.asDiagonal();
        p1bar += ((Wz.transpose() * J2bar).array() * W0.array()).rowwise().sum().matrix();
        acc.W0 += ws.p1.asDiagonal() * Wz.transpose() * J2bar;

        const Vec t2bar = q2bar.cwiseProduct(t3_2) + p2bar.cwiseProduct(ws.q2);
        const Vec z1bar = Wz.transpose() * t2bar;
        acc.Wz += t2bar * ws.z1.transpose();
        acc.Wy += t2bar * ws.x.transpose();
        acc.b1 += t2bar;

        const Vec t1bar =
            q1bar.cwiseProduct(t3_1) + p1bar.cwiseProduct(ws.q1) + z1bar.cwiseProduct(ws.p1);
        acc.W0 += t1bar * ws.x.transpose();
        acc.b0 += t1bar;
    }
};

} // namespace invstore

#endif
