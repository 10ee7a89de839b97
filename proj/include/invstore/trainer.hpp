// Gradient-based identification of storage agent models.
//
// All training paths share the same loop: batched forward solves of the
// current agent model, a KKT backward pass per sample, a parameter update,
// and projection back onto the feasible parameter set, repeated from several
// random initializations ("random shooting") with the lowest-training-loss
// run reported. The loss is L = (1/|B|) sum_i |y*_i - y_i|^2.
#ifndef INVSTORE_TRAINER_HPP
#define INVSTORE_TRAINER_HPP

#include "invstore/common.hpp"
#include "invstore/dataset.hpp"
#include "invstore/icnn.hpp"
#include "invstore/kkt_grad.hpp"
#include "invstore/model_io.hpp"
#include "invstore/parallel.hpp"
#include "invstore/qp.hpp"
#include "invstore/scp.hpp"
#include "invstore/storage_model.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace invstore {

// Forward solves everywhere use one tight setting so that data generation,
// training and prediction agree bitwise on identical inputs.
inline SolverSettings forward_settings() { return SolverSettings{1e-10, 200, 1e-8, true}; }

struct TrainConfig {
    double learning_rate = 0.01;
    std::string optimizer = "adam";  // adam | sgd (plain gradient)
    int batch_size = 0;              // 0: full batch up to 40 samples, else 32
    int max_epochs = 500;
    int restarts = 5;
    std::uint64_t seed = 0;
    double loss_tol = 1e-9;

    // stepwise learning-rate decay at fractions of the epoch budget
    double lr_decay = 1.0;
    std::vector<double> lr_milestones;

    // projection bounds for the learned scalars
    double c1_min = 0.0, c1_max = 50.0;
    double c2_min = 1e-6, c2_max = 50.0;
    double eta_sq_min = 0.5, eta_sq_max = 1.0;
    double e_shift_abs_max = 25.0;
    double e_shift_margin = 1e-3;  // keeps 0 strictly inside the energy window
    double alpha_min = 0.05;       // equality regime

    // generic path
    IcnnMode icnn_mode = IcnnMode::Scalar;
    Index icnn_hidden = 24;
    ScpSettings scp{20, 1e-8, 1e-3, forward_settings()};

    bool fd_check = true;  // audit the first batch of every restart
    double diverge_factor = 1e3;
    double skip_abort_frac = 0.10;
    int test_eval_every = 1;  // 0: evaluate the test split only at the end
    int threads = default_threads();
};

struct TrainReport {
    std::vector<double> train_curve;
    std::vector<double> test_curve;  // NaN where evaluation was skipped
    double final_train_mse = std::numeric_limits<double>::infinity();
    double final_test_mse = std::numeric_limits<double>::quiet_NaN();
    int best_restart = -1;
    double wall_seconds = 0.0;
    double fd_audit_max_rel_err = std::numeric_limits<double>::quiet_NaN();

    PersistedModel model;

    // Taylor-coefficient estimates of the disutility (generic path)
    double c1_hat = std::numeric_limits<double>::quiet_NaN();
    double c2_hat = std::numeric_limits<double>::quiet_NaN();

    int scp_unconverged = 0;
    int skipped_samples = 0;
    std::vector<std::string> warnings;
};

struct EvalResult {
    double mse = 0.0;
    std::optional<double> correlation;  // absent for constant sequences
};

namespace detail {

class Adam {
public:
    explicit Adam(Index n) : m_(Vec::Zero(n)), v_(Vec::Zero(n)) {}

    void step(Vec& x, const Vec& g, double lr) {
        ++t_;
        m_ = 0.9 * m_ + 0.1 * g;
        v_ = 0.999 * v_ + 0.001 * g.cwiseProduct(g);
        const double bc1 = 1.0 - std::pow(0.9, t_);
        const double bc2 = 1.0 - std::pow(0.999, t_);
        x -= (lr / bc1) * m_.cwiseQuotient(((v_ / bc2).cwiseSqrt().array() + 1e-8).matrix());
    }

private:
    Vec m_, v_;
    int t_ = 0;
};

inline double lr_at_epoch(const TrainConfig& cfg, int epoch) {
    double lr = cfg.learning_rate;
    for (double frac : cfg.lr_milestones)
        if (epoch >= static_cast<int>(frac * cfg.max_epochs)) lr *= cfg.lr_decay;
    return lr;
}

inline double infer_p_max(const Dataset& train) {
    double p = 0.0;
    for (const Sample& s : train.samples) p = std::max(p, s.response.maxCoeff());
    return p > 0.0 ? p : 1.0;
}

// Largest cumulative energy swings observed in the data, used to seed the
// shifted-bound initialization.
inline std::pair<double, double> observed_energy_swing(const Dataset& train,
                                                       double eta_sq, double dt) {
    double hi = 0.0, lo = 0.0;
    const Index T = train.T;
    for (const Sample& s : train.samples) {
        double acc = 0.0;
        for (Index t = 0; t < T; ++t) {
            acc += dt * (eta_sq * s.response[t] - s.response[T + t]);
            hi = std::max(hi, acc);
            lo = std::min(lo, acc);
        }
    }
    return {hi, lo};
}

inline std::vector<std::vector<std::size_t>> make_batches(std::size_t n, int batch_size,
                                                          Rng& rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::size_t effective =
        batch_size > 0 ? static_cast<std::size_t>(batch_size) : (n <= 40 ? n : 32);
    if (effective < n) {
        for (std::size_t i = n - 1; i > 0; --i)
            std::swap(order[i], order[rng.next_below(i + 1)]);
    }
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t at = 0; at < n; at += effective) {
        batches.emplace_back(order.begin() + static_cast<long>(at),
                             order.begin() + static_cast<long>(std::min(at + effective, n)));
    }
    return batches;
}

inline double fd_rel_err(double analytic, double fd) {
    return std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-6});
}

} // namespace detail

// ---- quadratic identification ----------------------------------------------

namespace detail {

struct QuadState {
    StorageParams params;

    Vec to_vec() const {
        Vec v(5);
        v << params.c1, params.c2, params.eta_sq, params.e_min_shift, params.e_max_shift;
        return v;
    }
    void from_vec(const Vec& v, const TrainConfig& cfg) {
        params.c1 = std::clamp(v[0], cfg.c1_min, cfg.c1_max);
        params.c2 = std::clamp(v[1], cfg.c2_min, cfg.c2_max);
        params.eta_sq = std::clamp(v[2], cfg.eta_sq_min, cfg.eta_sq_max);
        params.e_min_shift =
            std::clamp(v[3], -cfg.e_shift_abs_max, -cfg.e_shift_margin);
        params.e_max_shift = std::clamp(v[4], cfg.e_shift_margin, cfg.e_shift_abs_max);
        if (params.e_min_shift > params.e_max_shift - cfg.e_shift_margin)
            params.e_min_shift = params.e_max_shift - cfg.e_shift_margin;
    }
};

// batch forward/backward; returns (loss, scalar gradient) and skips samples
// whose forward solve fails
struct BatchResult {
    double loss = 0.0;
    Vec grad = Vec::Zero(5);
    int skipped = 0;
};

inline BatchResult quad_batch(const StorageParams& params, const Dataset& data,
                              const std::vector<std::size_t>& batch, bool with_grad,
                              int threads) {
    const double scale = 1.0 / static_cast<double>(batch.size());
    std::vector<double> losses(batch.size(), 0.0);
    std::vector<Vec> grads(batch.size(), Vec::Zero(5));
    std::vector<int> skipped(batch.size(), 0);
    parallel_for(batch.size(), threads, [&](std::size_t k) {
        const Sample& s = data.samples[batch[k]];
        const QpProblem prob = assemble_quadratic(params, s.prices);
        const QpSolution sol = solve_qp(prob, forward_settings());
        if (sol.status != SolveStatus::Optimal) {
            skipped[k] = 1;
            return;
        }
        const Vec r = sol.y_star - s.response;
        losses[k] = r.squaredNorm();
        if (!with_grad) return;
        try {
            const KktFactor f = factor_kkt(prob, sol);
            const ParamGrads pg = backward(f, prob, sol, Vec(2.0 * scale * r));
            const StorageScalarGrads sg = extract_storage_grads(params, pg);
            grads[k] << sg.c1, sg.c2, sg.eta_sq, sg.e_min_shift, sg.e_max_shift;
        } catch (const SingularKkt&) {
            skipped[k] = 1;
            losses[k] = 0.0;
        }
    });
    BatchResult out;
    for (std::size_t k = 0; k < batch.size(); ++k) {
        out.loss += losses[k] * scale;
        out.grad += grads[k];
        out.skipped += skipped[k];
    }
    return out;
}

inline double quad_full_loss(const StorageParams& params, const Dataset& data, int threads) {
    if (data.samples.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::vector<std::size_t> all(data.size());
    std::iota(all.begin(), all.end(), 0);
    return quad_batch(params, data, all, false, threads).loss;
}

} // namespace detail

inline TrainReport train_quadratic(const Dataset& train, const Dataset& test,
                                   const TrainConfig& cfg) {
    require(!train.samples.empty(), "training set is empty");
    train.validate();
    const auto t_start = std::chrono::steady_clock::now();
    const double p_max = detail::infer_p_max(train);

    TrainReport best;
    double best_loss = std::numeric_limits<double>::infinity();
    double audit_worst = 0.0;

    for (int restart = 0; restart < cfg.restarts; ++restart) {
        Rng rng(derive_seed(cfg.seed, 100 + static_cast<std::uint64_t>(restart)));
        detail::QuadState state;
        state.params.T = train.T;
        state.params.dt = train.dt;
        state.params.p_max = p_max;
        state.params.p_min = 0.0;
        state.params.c1 = rng.uniform(0.0, 20.0);
        state.params.c2 = rng.uniform(0.5, 20.0);
        state.params.eta_sq = rng.uniform(0.64, 1.0);
        const auto [hi, lo] =
            detail::observed_energy_swing(train, state.params.eta_sq, train.dt);
        state.params.e_max_shift = std::max(hi, 0.05) * rng.uniform(1.0, 1.5);
        state.params.e_min_shift = std::min(lo, -0.05) * rng.uniform(1.0, 1.5);

        detail::Adam adam(5);
        TrainReport report;
        report.model.kind = "quadratic";
        double initial_loss = -1.0;
        bool diverged = false;

        for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
            Rng shuffle_rng(derive_seed(cfg.seed, 5000 + static_cast<std::uint64_t>(
                                                       restart * 100000 + epoch)));
            const auto batches =
                detail::make_batches(train.size(), cfg.batch_size, shuffle_rng);
            double epoch_loss = 0.0;
            int epoch_skipped = 0;
            for (const auto& batch : batches) {
                const detail::BatchResult res =
                    detail::quad_batch(state.params, train, batch, true, cfg.threads);
                epoch_loss += res.loss * static_cast<double>(batch.size());
                epoch_skipped += res.skipped;

                if (cfg.fd_check && epoch == 0 && &batch == &batches.front()) {
                    const double step = 1e-6;
                    double* fields[5] = {&state.params.c1, &state.params.c2,
                                         &state.params.eta_sq, &state.params.e_min_shift,
                                         &state.params.e_max_shift};
                    for (int i = 0; i < 5; ++i) {
                        const double saved = *fields[i];
                        *fields[i] = saved + step;
                        const double up =
                            detail::quad_batch(state.params, train, batch, false,
                                               cfg.threads)
                                .loss;
                        *fields[i] = saved - step;
                        const double dn =
                            detail::quad_batch(state.params, train, batch, false,
                                               cfg.threads)
                                .loss;
                        *fields[i] = saved;
                        audit_worst = std::max(
                            audit_worst,
                            detail::fd_rel_err(res.grad[i], (up - dn) / (2.0 * step)));
                    }
                    if (audit_worst > 1e-3)
                        report.warnings.push_back(
                            "gradient audit exceeded 1e-3 on the first batch");
                }

                Vec x = state.to_vec();
                if (cfg.optimizer == "adam")
                    adam.step(x, res.grad, detail::lr_at_epoch(cfg, epoch));
                else
                    x -= detail::lr_at_epoch(cfg, epoch) * res.grad;
                state.from_vec(x, cfg);
            }
            epoch_loss /= static_cast<double>(train.size());
            report.skipped_samples += epoch_skipped;
            if (epoch_skipped >
                cfg.skip_abort_frac * static_cast<double>(train.size())) {
                report.warnings.push_back("restart " + std::to_string(restart) +
                                          ": aborted, too many skipped samples");
                diverged = true;
                break;
            }
            if (initial_loss < 0.0) initial_loss = epoch_loss;
            report.train_curve.push_back(epoch_loss);
            const bool eval_test = !test.samples.empty() && cfg.test_eval_every > 0 &&
                                   epoch % cfg.test_eval_every == 0;
            report.test_curve.push_back(
                eval_test ? detail::quad_full_loss(state.params, test, cfg.threads)
                          : std::numeric_limits<double>::quiet_NaN());
            if (epoch_loss > cfg.diverge_factor * initial_loss) {
                report.warnings.push_back("restart " + std::to_string(restart) +
                                          ": diverged");
                diverged = true;
                break;
            }
            if (epoch_loss < cfg.loss_tol) break;
        }

        const double final_loss =
            diverged ? std::numeric_limits<double>::infinity()
                     : detail::quad_full_loss(state.params, train, cfg.threads);
        if (final_loss < best_loss) {
            best_loss = final_loss;
            report.final_train_mse = final_loss;
            report.best_restart = restart;
            report.model.params = state.params;
            best = report;
        }
    }

    best.fd_audit_max_rel_err = cfg.fd_check ? audit_worst
                                             : std::numeric_limits<double>::quiet_NaN();
    if (best.train_curve.empty() && cfg.max_epochs == 0) {
        // zero-epoch run: report the initialization and its loss
        best.final_train_mse = detail::quad_full_loss(best.model.params, train, cfg.threads);
    }
    if (!test.samples.empty())
        best.final_test_mse = detail::quad_full_loss(best.model.params, test, cfg.threads);
    best.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return best;
}

// ---- equality-constrained regime (plain-gradient convergence test-bed) ------

inline TrainReport train_equality(const Dataset& train, const Dataset& test,
                                  const TrainConfig& cfg) {
    require(!train.samples.empty(), "training set is empty");
    require(train.meta.contains("truth") && train.meta["truth"].contains("A"),
            "equality training requires the constraint matrix in the dataset metadata");
    const Mat A = detail::mat_from_json(train.meta["truth"]["A"]);
    const Index n = 2 * train.T, m = A.rows();
    const auto t_start = std::chrono::steady_clock::now();

    auto loss_and_grad = [&](double alpha, const Vec& b, const Dataset& data, bool with_grad,
                             double& loss, double& g_alpha, Vec& g_b) {
        loss = 0.0;
        g_alpha = 0.0;
        g_b = Vec::Zero(m);
        const double scale = 1.0 / static_cast<double>(data.size());
        for (const Sample& s : data.samples) {
            QpProblem prob;
            prob.Q = (alpha / 2.0) * Mat::Identity(n, n);
            prob.q = Vec::Zero(n);
            prob.lambda.resize(n);
            prob.lambda.head(train.T) = s.prices;
            prob.lambda.tail(train.T) = -s.prices;
            prob.A = A;
            prob.b = b;
            prob.G.resize(0, n);
            prob.h.resize(0);
            const QpSolution sol = solve_qp(prob, forward_settings());
            if (sol.status != SolveStatus::Optimal)
                throw NonOptimalForward("equality forward solve failed");
            const Vec r = sol.y_star - s.response;
            loss += scale * r.squaredNorm();
            if (!with_grad) continue;
            const KktFactor f = factor_kkt(prob, sol);
            const ParamGrads pg = backward(f, prob, sol, Vec(2.0 * scale * r));
            g_alpha += 0.5 * pg.dQ.trace();  // Q = (alpha/2) I
            g_b += pg.db;
        }
    };

    TrainReport best;
    double best_loss = std::numeric_limits<double>::infinity();
    for (int restart = 0; restart < cfg.restarts; ++restart) {
        Rng rng(derive_seed(cfg.seed, 300 + static_cast<std::uint64_t>(restart)));
        double alpha = rng.uniform(0.5, 5.0);
        Vec b = Vec::NullaryExpr(m, [&](Index) { return rng.uniform(-1.0, 1.0); });

        TrainReport report;
        report.model.kind = "equality";
        detail::Adam adam(1 + m);
        for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
            double loss, g_alpha;
            Vec g_b;
            loss_and_grad(alpha, b, train, true, loss, g_alpha, g_b);
            report.train_curve.push_back(loss);
            report.test_curve.push_back(std::numeric_limits<double>::quiet_NaN());
            if (loss < cfg.loss_tol) break;
            const double lr = detail::lr_at_epoch(cfg, epoch);
            if (cfg.optimizer == "adam") {
                Vec x(1 + m), g(1 + m);
                x[0] = alpha;
                x.tail(m) = b;
                g[0] = g_alpha;
                g.tail(m) = g_b;
                adam.step(x, g, lr);
                alpha = x[0];
                b = x.tail(m);
            } else {
                alpha -= lr * g_alpha;
                b -= lr * g_b;
            }
            alpha = std::max(alpha, cfg.alpha_min);
        }

        double final_loss, unused_a;
        Vec unused_b;
        loss_and_grad(alpha, b, train, false, final_loss, unused_a, unused_b);
        if (final_loss < best_loss) {
            best_loss = final_loss;
            report.final_train_mse = final_loss;
            report.best_restart = restart;
            report.model.alpha = alpha;
            report.model.eq_b = b;
            report.model.eq_A = A;
            report.model.params.T = train.T;
            report.model.params.dt = train.dt;
            best = report;
        }
    }
    if (!test.samples.empty()) {
        double test_loss, ua;
        Vec ub;
        loss_and_grad(best.model.alpha, best.model.eq_b, test, false, test_loss, ua, ub);
        best.final_test_mse = test_loss;
    }
    best.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return best;
}

// ---- generic identification (Algorithm 2) -----------------------------------

namespace detail {

struct GenericState {
    IcnnModel icnn;
    StorageParams constraints;  // c1/c2 unused; carries the learned scalars

    Vec to_vec() const {
        Vec v(icnn.num_params() + 3);
        v.head(icnn.num_params()) = icnn.flat();
        v[icnn.num_params()] = constraints.eta_sq;
        v[icnn.num_params() + 1] = constraints.e_min_shift;
        v[icnn.num_params() + 2] = constraints.e_max_shift;
        return v;
    }
    void from_vec(const Vec& v, const TrainConfig& cfg) {
        icnn.set_flat(v.head(icnn.num_params()));
        icnn.project_nonneg();
        constraints.eta_sq =
            std::clamp(v[icnn.num_params()], cfg.eta_sq_min, cfg.eta_sq_max);
        constraints.e_min_shift = std::clamp(v[icnn.num_params() + 1],
                                             -cfg.e_shift_abs_max, -cfg.e_shift_margin);
        constraints.e_max_shift = std::clamp(v[icnn.num_params() + 2],
                                             cfg.e_shift_margin, cfg.e_shift_abs_max);
        if (constraints.e_min_shift > constraints.e_max_shift - cfg.e_shift_margin)
            constraints.e_min_shift = constraints.e_max_shift - cfg.e_shift_margin;
    }
};

struct GenericBatchResult {
    double loss = 0.0;
    Vec grad;  // [icnn params; eta_sq; e_min_shift; e_max_shift]
    int skipped = 0;
    int scp_unconverged = 0;
};

inline QpProblem constraint_base(const StorageParams& s, const Vec& prices) {
    QpProblem base = assemble_quadratic(s, prices);
    base.Q.setZero();
    base.q.setZero();
    return base;
}

inline GenericBatchResult generic_batch(const GenericState& state, const Dataset& data,
                                        const std::vector<std::size_t>& batch,
                                        bool with_grad, const TrainConfig& cfg) {
    const Index np = state.icnn.num_params();
    const double scale = 1.0 / static_cast<double>(batch.size());
    std::vector<double> losses(batch.size(), 0.0);
    std::vector<Vec> grads(batch.size(), Vec::Zero(np + 3));
    std::vector<int> skipped(batch.size(), 0), stalled(batch.size(), 0);

    parallel_for(batch.size(), cfg.threads, [&](std::size_t k) {
        const Sample& s = data.samples[batch[k]];
        try {
            const QpProblem base = constraint_base(state.constraints, s.prices);
            const ScpResult res = scp_solve(state.icnn, base,
                                            Vec::Zero(2 * state.constraints.T), cfg.scp);
            if (!res.trace.converged) stalled[k] = 1;
            const Vec r = res.solution.y_star - s.response;
            losses[k] = r.squaredNorm();
            if (!with_grad) return;

            const KktFactor f = factor_kkt(res.final_qp, res.solution);
            const ParamGrads pg = backward(f, res.final_qp, res.solution,
                                           Vec(2.0 * scale * r));

            // constraint scalars through G and h
            const StorageScalarGrads sg = extract_storage_grads(state.constraints, pg);
            grads[k][np] = sg.eta_sq;
            grads[k][np + 1] = sg.e_min_shift;
            grads[k][np + 2] = sg.e_max_shift;

            // network parameters through the Taylor pair (q_hat, Q_hat):
            // canonical blocks are Q = Q_hat/2 and q = q_hat - Q_hat * center
            const Vec& center = res.center;
            const Vec dq_hat = pg.dq;
            const Mat dQ_hat = 0.5 * pg.dQ - pg.dq * center.transpose();
            grads[k].head(np) = state.icnn.backward_params(center, dq_hat, dQ_hat);
        } catch (const NonOptimalForward&) {
            skipped[k] = 1;
            losses[k] = 0.0;
        } catch (const SingularKkt&) {
            skipped[k] = 1;
            losses[k] = 0.0;
        }
    });

    GenericBatchResult out;
    out.grad = Vec::Zero(np + 3);
    for (std::size_t k = 0; k < batch.size(); ++k) {
        out.loss += losses[k] * scale;
        out.grad += grads[k];
        out.skipped += skipped[k];
        out.scp_unconverged += stalled[k];
    }
    return out;
}

inline double generic_full_loss(const GenericState& state, const Dataset& data,
                                const TrainConfig& cfg) {
    if (data.samples.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::vector<std::size_t> all(data.size());
    std::iota(all.begin(), all.end(), 0);
    return generic_batch(state, data, all, false, cfg).loss;
}

// Taylor-coefficient estimates of the learned disutility around the training
// fixed points: local expansion u(x) ~ a + b x + c x^2 per discharge step
// gives b = u'(d) - u''(d) d and c = u''(d)/2, averaged over steps and
// samples.
inline void extract_taylor_coeffs(const GenericState& state, const Dataset& train,
                                  const TrainConfig& cfg, double& c1_hat, double& c2_hat) {
    const Index T = state.constraints.T;
    double sum1 = 0.0, sum2 = 0.0;
    std::size_t count = 0;
    for (const Sample& s : train.samples) {
        try {
            const QpProblem base = constraint_base(state.constraints, s.prices);
            const ScpResult res =
                scp_solve(state.icnn, base, Vec::Zero(2 * T), cfg.scp);
            Vec q_hat;
            Mat Q_hat;
            state.icnn.grad_hess(res.solution.y_star, q_hat, Q_hat);
            for (Index t = 0; t < T; ++t) {
                const double d = res.solution.y_star[T + t];
                sum1 += q_hat[T + t] - Q_hat(T + t, T + t) * d;
                sum2 += 0.5 * Q_hat(T + t, T + t);
                ++count;
            }
        } catch (const InvstoreError&) {
            continue;
        }
    }
    c1_hat = count ? sum1 / static_cast<double>(count)
                   : std::numeric_limits<double>::quiet_NaN();
    c2_hat = count ? sum2 / static_cast<double>(count)
                   : std::numeric_limits<double>::quiet_NaN();
}

} // namespace detail

inline TrainReport train_generic(const Dataset& train, const Dataset& test,
                                 const TrainConfig& cfg) {
    require(!train.samples.empty(), "training set is empty");
    train.validate();
    const auto t_start = std::chrono::steady_clock::now();
    const double p_max = detail::infer_p_max(train);

    TrainReport best;
    double best_loss = std::numeric_limits<double>::infinity();
    double audit_worst = 0.0;

    for (int restart = 0; restart < cfg.restarts; ++restart) {
        Rng rng(derive_seed(cfg.seed, 200 + static_cast<std::uint64_t>(restart)));
        detail::GenericState state;
        state.icnn =
            IcnnModel::create(cfg.icnn_mode, train.T, cfg.icnn_hidden, 1.0 / p_max, rng);
        state.constraints.T = train.T;
        state.constraints.dt = train.dt;
        state.constraints.p_max = p_max;
        state.constraints.p_min = 0.0;
        state.constraints.c1 = state.constraints.c2 = 0.0;
        state.constraints.eta_sq = rng.uniform(0.64, 1.0);
        const auto [hi, lo] =
            detail::observed_energy_swing(train, state.constraints.eta_sq, train.dt);
        state.constraints.e_max_shift = std::max(hi, 0.05) * rng.uniform(1.0, 1.5);
        state.constraints.e_min_shift = std::min(lo, -0.05) * rng.uniform(1.0, 1.5);

        detail::Adam adam(state.icnn.num_params() + 3);
        TrainReport report;
        report.model.kind = "generic";
        double initial_loss = -1.0;
        bool diverged = false;

        for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
            Rng shuffle_rng(derive_seed(cfg.seed, 6000 + static_cast<std::uint64_t>(
                                                       restart * 100000 + epoch)));
            const auto batches =
                detail::make_batches(train.size(), cfg.batch_size, shuffle_rng);
            double epoch_loss = 0.0;
            int epoch_skipped = 0;
            for (const auto& batch : batches) {
                const detail::GenericBatchResult res =
                    detail::generic_batch(state, train, batch, true, cfg);
                epoch_loss += res.loss * static_cast<double>(batch.size());
                epoch_skipped += res.skipped;
                report.scp_unconverged += res.scp_unconverged;

                if (cfg.fd_check && epoch == 0 && &batch == &batches.front()) {
                    // constraint scalars by direct finite differences, the
                    // network along one random direction
                    const Index np = state.icnn.num_params();
                    const double step = 1e-6;
                    const Vec x0 = state.to_vec();
                    auto loss_at = [&](const Vec& x) {
                        detail::GenericState probe = state;
                        probe.icnn.set_flat(x.head(np));
                        probe.constraints.eta_sq = x[np];
                        probe.constraints.e_min_shift = x[np + 1];
                        probe.constraints.e_max_shift = x[np + 2];
                        return detail::generic_batch(probe, train, batch, false, cfg).loss;
                    };
                    for (Index i = np; i < np + 3; ++i) {
                        Vec xu = x0, xd = x0;
                        xu[i] += step;
                        xd[i] -= step;
                        const double fd = (loss_at(xu) - loss_at(xd)) / (2.0 * step);
                        audit_worst =
                            std::max(audit_worst, detail::fd_rel_err(res.grad[i], fd));
                    }
                    Vec dir = Vec::Zero(np + 3);
                    Rng dir_rng(derive_seed(cfg.seed, 17));
                    for (Index i = 0; i < np; ++i) dir[i] = dir_rng.normal();
                    dir /= dir.norm();
                    const double fd_dir =
                        (loss_at(x0 + step * dir) - loss_at(x0 - step * dir)) /
                        (2.0 * step);
                    audit_worst = std::max(audit_worst,
                                           detail::fd_rel_err(res.grad.dot(dir), fd_dir));
                    if (audit_worst > 1e-3)
                        report.warnings.push_back(
                            "gradient audit exceeded 1e-3 on the first batch");
                }

                Vec x = state.to_vec();
                if (cfg.optimizer == "adam")
                    adam.step(x, res.grad, detail::lr_at_epoch(cfg, epoch));
                else
                    x -= detail::lr_at_epoch(cfg, epoch) * res.grad;
                state.from_vec(x, cfg);
            }
            epoch_loss /= static_cast<double>(train.size());
            report.skipped_samples += epoch_skipped;
            if (epoch_skipped >
                cfg.skip_abort_frac * static_cast<double>(train.size())) {
                report.warnings.push_back("restart " + std::to_string(restart) +
                                          ": aborted, too many skipped samples");
                diverged = true;
                break;
            }
            if (initial_loss < 0.0) initial_loss = epoch_loss;
            report.train_curve.push_back(epoch_loss);
            const bool eval_test = !test.samples.empty() && cfg.test_eval_every > 0 &&
                                   epoch % cfg.test_eval_every == 0;
            report.test_curve.push_back(
                eval_test ? detail::generic_full_loss(state, test, cfg)
                          : std::numeric_limits<double>::quiet_NaN());
            if (epoch_loss > cfg.diverge_factor * initial_loss) {
                report.warnings.push_back("restart " + std::to_string(restart) +
                                          ": diverged");
                diverged = true;
                break;
            }
            if (epoch_loss < cfg.loss_tol) break;
        }

        const double final_loss = diverged ? std::numeric_limits<double>::infinity()
                                           : detail::generic_full_loss(state, train, cfg);
        if (final_loss < best_loss) {
            best_loss = final_loss;
            report.final_train_mse = final_loss;
            report.best_restart = restart;
            report.model.params = state.constraints;
            report.model.icnn = state.icnn;
            best = report;
        }
    }

    best.fd_audit_max_rel_err = cfg.fd_check ? audit_worst
                                             : std::numeric_limits<double>::quiet_NaN();
    if (best.model.icnn) {
        detail::GenericState final_state{*best.model.icnn, best.model.params};
        if (!test.samples.empty())
            best.final_test_mse = detail::generic_full_loss(final_state, test, cfg);
        detail::extract_taylor_coeffs(final_state, train, cfg, best.c1_hat, best.c2_hat);
        // report the Taylor estimates as the headline cost coefficients
        best.model.params.c1 = best.c1_hat;
        best.model.params.c2 = best.c2_hat;
    }
    best.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return best;
}

// ---- prediction and evaluation ----------------------------------------------

inline Vec predict_dispatch(const PersistedModel& m, const Vec& prices) {
    if (m.kind == "quadratic") {
        const QpSolution sol =
            solve_qp(assemble_quadratic(m.params, prices), forward_settings());
        if (sol.status != SolveStatus::Optimal)
            throw NonOptimalForward("prediction solve failed");
        return sol.y_star;
    }
    if (m.kind == "soc") {
        SocCostParams sp;
        sp.c1 = m.soc_c1;
        sp.c2 = m.params.c2;
        sp.phys = m.params;
        sp.phys.c1 = sp.phys.c2 = 0.0;
        const QpSolution sol = solve_qp(assemble_soc(sp, prices), forward_settings());
        if (sol.status != SolveStatus::Optimal)
            throw NonOptimalForward("prediction solve failed");
        return sol.y_star;
    }
    if (m.kind == "generic") {
        if (!m.icnn) throw ModelLoadError("generic model without network weights");
        QpProblem base = assemble_quadratic(m.params, prices);
        base.Q.setZero();
        base.q.setZero();
        ScpSettings scp;
        scp.fp_tol = 1e-8;
        scp.qp = forward_settings();
        const ScpResult res = scp_solve(*m.icnn, base, Vec::Zero(2 * m.params.T), scp);
        return res.solution.y_star;
    }
    if (m.kind == "equality") {
        const Index n = 2 * m.params.T;
        QpProblem prob;
        prob.Q = (m.alpha / 2.0) * Mat::Identity(n, n);
        prob.q = Vec::Zero(n);
        prob.lambda.resize(n);
        prob.lambda.head(m.params.T) = prices;
        prob.lambda.tail(m.params.T) = -prices;
        prob.A = m.eq_A;
        prob.b = m.eq_b;
        prob.G.resize(0, n);
        prob.h.resize(0);
        const QpSolution sol = solve_qp(prob, forward_settings());
        if (sol.status != SolveStatus::Optimal)
            throw NonOptimalForward("prediction solve failed");
        return sol.y_star;
    }
    throw ModelLoadError("unknown model kind '" + m.kind + "'");
}

// MSE over the signed net dispatch plus the correlation coefficient of the
// concatenated sequences.
inline EvalResult evaluate_forecast(const std::vector<Vec>& forecast,
                                    const std::vector<Vec>& observed) {
    require(forecast.size() == observed.size() && !forecast.empty(),
            "forecast/observed length mismatch");
    std::vector<double> x, y;
    double se = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < forecast.size(); ++i) {
        require(forecast[i].size() == observed[i].size(), "sample length mismatch");
        const Index T = forecast[i].size() / 2;
        for (Index t = 0; t < T; ++t) {
            const double nf = forecast[i][t] - forecast[i][T + t];
            const double no = observed[i][t] - observed[i][T + t];
            se += (nf - no) * (nf - no);
            ++count;
            x.push_back(nf);
            y.push_back(no);
        }
    }
    EvalResult res;
    res.mse = se / static_cast<double>(count);
    require(count >= 2, "correlation needs at least two points");

    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(count);
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(count);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx <= 0.0 || syy <= 0.0) return res;  // constant sequence: no correlation
    res.correlation = sxy / std::sqrt(sxx * syy);
    return res;
}

} // namespace invstore

#endif
