// Synthetic ground-truth data generation and the threshold forecasting
// baseline.
#ifndef INVSTORE_DATAGEN_HPP
#define INVSTORE_DATAGEN_HPP

#include "invstore/common.hpp"
#include "invstore/dataset.hpp"
#include "invstore/parallel.hpp"
#include "invstore/qp.hpp"
#include "invstore/storage_model.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace invstore {

// One day-shaped price curve: night dip, morning shoulder, evening peak,
// mild per-step noise and occasional spikes. Deterministic in the seed.
inline Vec synth_price_curve(std::uint64_t seed, Index T, double dt) {
    Rng rng(seed);
    const double base = rng.uniform(18.0, 30.0);
    const double trend = rng.uniform(-0.15, 0.25);
    const double amp_m = rng.uniform(3.0, 18.0);
    const double amp_e = rng.uniform(8.0, 32.0);
    const double dip = rng.uniform(5.0, 14.0);
    const double c_m = rng.uniform(7.0, 9.5);
    const double c_e = rng.uniform(17.5, 20.5);
    const double c_d = rng.uniform(2.0, 4.5);
    const bool spike = rng.uniform() < 0.12;
    const Index spike_at = static_cast<Index>(rng.next_below(static_cast<std::uint64_t>(T)));
    const double spike_amp = rng.uniform(25.0, 90.0);

    Vec prices(T);
    for (Index k = 0; k < T; ++k) {
        const double hour = std::fmod(static_cast<double>(k) * dt, 24.0);
        double v = base + trend * static_cast<double>(k) * dt;
        v += amp_m * std::exp(-0.5 * std::pow((hour - c_m) / 1.8, 2));
        v += amp_e * std::exp(-0.5 * std::pow((hour - c_e) / 2.1, 2));
        v -= dip * std::exp(-0.5 * std::pow((hour - c_d) / 2.4, 2));
        v += rng.normal(0.0, 1.2);
        if (spike && k == spike_at) v += spike_amp;
        prices[k] = std::max(v, 1.0);
    }
    return prices;
}

struct GenerateConfig {
    std::string model = "quadratic";  // quadratic | soc | equality
    std::uint64_t seed = 7;
    int n_train = 20;
    int n_test = 10;
    Index T = 24;
    double dt = 1.0;
    double p_max = 0.5;
    double e_max = -1.0;  // <= 0: sample the duration H from {1,2,3,4} hours
    double e_min = 0.0;
    double noise_std = 0.0;        // observation noise on training responses
    std::string price_dir;         // optional directory of real price CSVs
    Index eq_constraints = 2;      // equality regime: rows of A
    int threads = default_threads();
};

struct GeneratedData {
    Dataset train;
    Dataset test;
    json truth;
};

namespace detail {

inline std::vector<Vec> collect_prices(const GenerateConfig& cfg, int count) {
    std::vector<Vec> prices;
    if (!cfg.price_dir.empty()) {
        const Dataset ds = load_csv(cfg.price_dir,
                                    cfg.dt == 0.5 ? CsvSchema::Horizon : CsvSchema::Daily);
        if (static_cast<int>(ds.samples.size()) < count)
            throw InsufficientPrices("price source holds " +
                                     std::to_string(ds.samples.size()) + " days, need " +
                                     std::to_string(count));
        for (int i = 0; i < count; ++i) {
            require(ds.samples[i].prices.size() == cfg.T, "price file horizon mismatch");
            prices.push_back(ds.samples[i].prices);
        }
    } else {
        for (int i = 0; i < count; ++i)
            prices.push_back(
                synth_price_curve(derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(i)),
                                  cfg.T, cfg.dt));
    }
    return prices;
}

inline void add_train_noise(Dataset& train, const GenerateConfig& cfg) {
    if (cfg.noise_std <= 0.0) return;
    for (std::size_t i = 0; i < train.samples.size(); ++i) {
        Rng rng(derive_seed(cfg.seed, 9000 + i));
        Vec& y = train.samples[i].response;
        for (Index j = 0; j < y.size(); ++j) y[j] += rng.normal(0.0, cfg.noise_std);
    }
}

} // namespace detail

inline GeneratedData generate_synthetic(const GenerateConfig& cfg) {
    GeneratedData out;
    out.train.T = out.test.T = cfg.T;
    out.train.dt = out.test.dt = cfg.dt;
    const int total = cfg.n_train + cfg.n_test;
    const std::vector<Vec> prices = detail::collect_prices(cfg, total);

    json truth;
    std::vector<Sample> samples(static_cast<std::size_t>(total));

    if (cfg.model == "equality") {
        // Test-bed regime: quadratic objective (alpha/2) y'y with equality
        // constraints only; responses come from the closed-form solution.
        Rng rng(cfg.seed);
        const Index n = 2 * cfg.T, m = cfg.eq_constraints;
        Mat A(m, n);
        for (Index i = 0; i < m; ++i)
            for (Index j = 0; j < n; ++j)
                A(i, j) = rng.normal() / std::sqrt(static_cast<double>(n));
        const double alpha = rng.uniform(1.0, 5.0);
        Vec b(m);
        for (Index i = 0; i < m; ++i) b[i] = rng.uniform(-0.5, 0.5);

        Eigen::LLT<Mat> aat((A * A.transpose()).eval());
        const Mat pinv = A.transpose() * aat.solve(Mat::Identity(m, m));
        for (int i = 0; i < total; ++i) {
            Rng day(derive_seed(cfg.seed, 2000 + static_cast<std::uint64_t>(i)));
            Vec lam(cfg.T);
            for (Index t = 0; t < cfg.T; ++t) lam[t] = day.uniform(-2.0, 2.0);
            Vec lam_vec(n);
            lam_vec.head(cfg.T) = lam;
            lam_vec.tail(cfg.T) = -lam;
            samples[static_cast<std::size_t>(i)].prices = lam;
            samples[static_cast<std::size_t>(i)].response =
                (1.0 / alpha) * (pinv * (A * lam_vec) - lam_vec) + pinv * b;
        }
        truth["alpha"] = alpha;
        truth["b"] = std::vector<double>(b.data(), b.data() + m);
        json arows = json::array();
        for (Index i = 0; i < m; ++i)
            arows.push_back(std::vector<double>(A.row(i).begin(), A.row(i).end()));
        truth["A"] = arows;
    } else {
        Rng rng(cfg.seed);
        const double c1 = rng.uniform(0.0, 20.0);
        const double c2 = rng.uniform(0.0, 20.0);
        const double eta = rng.uniform(0.8, 1.0);
        double e_max = cfg.e_max, H = 0.0;
        if (e_max <= 0.0) {
            H = 1.0 + static_cast<double>(rng.next_below(4));
            e_max = H * cfg.p_max;
        }
        const double e0 = 0.5 * (cfg.e_min + e_max);  // start at 50% SoC
        StorageParams phys =
            from_physical(c1, c2, eta, cfg.p_max, cfg.e_min, e_max, e0, cfg.T, cfg.dt);

        const SolverSettings tight{1e-10, 200, 1e-8, true};
        const bool soc = cfg.model == "soc";
        SocCostParams soc_params;
        if (soc) {
            soc_params.c1 = c1;
            soc_params.c2 = c2;
            soc_params.phys = phys;
            soc_params.phys.c1 = soc_params.phys.c2 = 0.0;
        }
        parallel_for(static_cast<std::size_t>(total), cfg.threads, [&](std::size_t i) {
            const Vec& lam = prices[i];
            const QpProblem prob =
                soc ? assemble_soc(soc_params, lam) : assemble_quadratic(phys, lam);
            const QpSolution sol = solve_qp(prob, tight);
            if (sol.status != SolveStatus::Optimal)
                throw InvstoreError("ground-truth solve failed on sample " +
                                    std::to_string(i));
            samples[i].prices = lam;
            samples[i].response = sol.y_star;
        });

        truth["c1"] = c1;
        truth["c2"] = c2;
        truth["eta"] = eta;
        truth["eta_sq"] = eta * eta;
        truth["p_max"] = cfg.p_max;
        truth["p_min"] = 0.0;
        truth["e_min"] = cfg.e_min;
        truth["e_max"] = e_max;
        truth["e0"] = e0;
        truth["e_max_shift"] = phys.e_max_shift;
        truth["e_min_shift"] = phys.e_min_shift;
        if (H > 0.0) truth["duration_h"] = H;
    }

    out.train.samples.assign(samples.begin(), samples.begin() + cfg.n_train);
    out.test.samples.assign(samples.begin() + cfg.n_train, samples.end());
    detail::add_train_noise(out.train, cfg);

    json meta;
    meta["schema"] = "invstore-dataset";
    meta["version"] = 1;
    meta["model"] = cfg.model;
    meta["source"] = cfg.price_dir.empty() ? "synthetic" : "csv:" + cfg.price_dir;
    meta["seed"] = cfg.seed;
    meta["T"] = cfg.T;
    meta["dt"] = cfg.dt;
    meta["noise_std"] = cfg.noise_std;
    meta["truth"] = truth;
    out.train.meta = meta;
    out.test.meta = meta;
    out.truth = truth;
    out.train.validate();
    out.test.validate();
    return out;
}

// ---- threshold baseline ----------------------------------------------------

struct ThresholdModel {
    double r_charge = 0.0;    // charge when price <= r_charge * day mean
    double r_discharge = 0.0; // discharge when price >= r_discharge * day mean
};

// Revealed activation ratios: per training sample, the highest relative price
// at which charging was still observed and the lowest at which discharging
// was observed; the medians across samples become the activation thresholds.
inline ThresholdModel fit_threshold(const Dataset& train, double act_eps = 1e-6) {
    std::vector<double> rp, rd;
    const Index T = train.T;
    for (const Sample& s : train.samples) {
        const double mean = s.prices.mean();
        if (mean <= 0.0) continue;
        double best_p = -1.0, best_d = -1.0;
        for (Index t = 0; t < T; ++t) {
            const double ratio = s.prices[t] / mean;
            if (s.response[t] > act_eps) best_p = std::max(best_p, ratio);
            if (s.response[T + t] > act_eps)
                best_d = best_d < 0.0 ? ratio : std::min(best_d, ratio);
        }
        if (best_p > 0.0) rp.push_back(best_p);
        if (best_d > 0.0) rd.push_back(best_d);
    }
    if (rp.empty() || rd.empty())
        throw NoActivationObserved("training data shows no charge or no discharge events");
    auto median = [](std::vector<double>& v) {
        std::sort(v.begin(), v.end());
        const std::size_t k = v.size();
        return k % 2 ? v[k / 2] : 0.5 * (v[k / 2 - 1] + v[k / 2]);
    };
    return {median(rp), median(rd)};
}

// Forecast with the fitted ratios; SoC limits are enforced greedily in time
// order using the known physical capacity (unit efficiency).
inline Vec threshold_forecast(const ThresholdModel& model, const Vec& prices, double p_max,
                              double e_min, double e_max, double e0, double dt) {
    const Index T = prices.size();
    const double mean = prices.mean();
    Vec y = Vec::Zero(2 * T);
    double e = e0;
    for (Index t = 0; t < T; ++t) {
        if (prices[t] <= model.r_charge * mean) {
            const double p = std::min(p_max, std::max(0.0, (e_max - e) / dt));
            y[t] = p;
            e += dt * p;
        } else if (prices[t] >= model.r_discharge * mean) {
            const double d = std::min(p_max, std::max(0.0, (e - e_min) / dt));
            y[T + t] = d;
            e -= dt * d;
        }
    }
    return y;
}

} // namespace invstore

#endif
