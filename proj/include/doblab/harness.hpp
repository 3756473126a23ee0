#pragma once

// Monte Carlo engine: runs every configured estimator on the same seeded
// trajectories and reduces per-step bias, spread, windowed losses and RMSE.

#include "doblab/core_model.hpp"
#include "doblab/format.hpp"
#include "doblab/imm.hpp"
#include "doblab/kf_dob.hpp"
#include "doblab/mkc.hpp"
#include "doblab/scenario.hpp"
#include "doblab/sise.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <type_traits>
#include <variant>
#include <vector>

#include <json.hpp>

namespace doblab {

struct KfDobSpec {
    Matrix D;
};
struct NkfDobSpec {
    Matrix D;
};
struct SiseSpec {};
struct MkcKfDobSpec {
    Matrix D;
    MkcConfig cfg;
};
struct ImmKfDobSpec {
    std::vector<Matrix> D_list;
    Matrix transition;
    Vector mode_probs;  // empty means uniform
};

using EstimatorKind = std::variant<KfDobSpec, NkfDobSpec, SiseSpec, MkcKfDobSpec, ImmKfDobSpec>;

struct EstimatorSpec {
    std::string name;
    EstimatorKind kind;
};

inline std::string kind_name(const EstimatorKind& kind) {
    static const char* const names[] = {"kf_dob", "nkf_dob", "sise", "mkckf_dob", "immkf_dob"};
    return names[kind.index()];
}

/// Per-step output of one filtering pass; entry i belongs to step i + 1.
struct EstimateSeries {
    std::vector<Vector> d_hat;
    std::vector<Matrix> d_cov;
    std::vector<Vector> x_hat;
    double seconds = 0.0;
};

/**
 * @brief Runs one estimator over all measurements of a trajectory.
 *
 * Every filter starts from x_init; disturbance-augmented filters start the
 * disturbance at mean 0 with covariance equal to their (first) D.
 */
inline EstimateSeries run_estimator(const EstimatorSpec& spec, const LinearSystem& sys, const GaussianBelief& x_init,
                                    const Trajectory& traj) {
    const auto n_steps = static_cast<std::size_t>(traj.steps());
    EstimateSeries out;
    out.d_hat.reserve(n_steps);
    out.d_cov.reserve(n_steps);
    out.x_hat.reserve(n_steps);
    const Index n = sys.n();
    const auto start = std::chrono::steady_clock::now();

    std::visit(
        [&](const auto& k) {
            using K = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<K, KfDobSpec>) {
                GaussianBelief b = kf_dob_initial_belief(x_init, k.D);
                for (const auto& y : traj.measurements) {
                    KfDobStep s = kf_dob_step(b, sys, k.D, y);
                    out.d_hat.push_back(s.d_hat);
                    out.d_cov.push_back(s.d_cov);
                    out.x_hat.push_back(s.belief.mean.tail(n));
                    b = std::move(s.belief);
                }
            } else if constexpr (std::is_same_v<K, NkfDobSpec>) {
                NkfDobState st{x_init, Vector::Zero(sys.p()), k.D, Matrix()};
                for (const auto& y : traj.measurements) {
                    st = nkf_dob_step(st, sys, k.D, y);
                    out.d_hat.push_back(st.d);
                    out.d_cov.push_back(st.d_cov);
                    out.x_hat.push_back(st.x_belief.mean);
                }
            } else if constexpr (std::is_same_v<K, SiseSpec>) {
                SiseState st = sise_initial_state(x_init);
                for (const auto& y : traj.measurements) {
                    st = sise_step(st, sys, y);
                    out.d_hat.push_back(st.last_d);
                    out.d_cov.push_back(st.last_d_cov);
                    out.x_hat.push_back(st.x_belief.mean);
                }
            } else if constexpr (std::is_same_v<K, MkcKfDobSpec>) {
                GaussianBelief b = kf_dob_initial_belief(x_init, k.D);
                for (const auto& y : traj.measurements) {
                    MkcStep s = mkckf_dob_step(b, sys, k.D, y, k.cfg);
                    out.d_hat.push_back(s.d_hat);
                    out.d_cov.push_back(s.d_cov);
                    out.x_hat.push_back(s.belief.mean.tail(n));
                    b = std::move(s.belief);
                }
            } else {
                const auto q = static_cast<Index>(k.D_list.size());
                const Vector mu = k.mode_probs.size() > 0 ? k.mode_probs
                                                          : Vector::Constant(q, 1.0 / static_cast<double>(q));
                ImmState st = immkf_dob_initial_state(x_init, k.D_list, k.transition, mu);
                for (const auto& y : traj.measurements) {
                    ImmDobStep s = immkf_dob_step(st, sys, k.D_list, sys.Q(), sys.R(), y);
                    out.d_hat.push_back(s.d_hat);
                    out.d_cov.push_back(s.d_cov);
                    out.x_hat.push_back(s.fused.mean.tail(n));
                    st = std::move(s.state);
                }
            }
        },
        spec.kind);

    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

/// Inclusive step window [first, last], steps counted from 1.
struct StepWindow {
    Index first = 1260;
    Index last = 1320;
};

struct MonteCarloConfig {
    LinearSystem sys = default_tracking_system();
    DisturbanceProfile profile = default_profile();
    GaussianBelief initial{Vector::Zero(2), 1e-2 * Matrix::Identity(2, 2)};
    std::optional<TruthNoise> truth_noise;
    double sample_time = kDefaultSampleTime;
    Index steps = kDefaultSteps;
    Index trials = 100;
    std::uint64_t base_seed = 1;
    std::vector<EstimatorSpec> estimators;
    /// KF-DOB with D = eta D* is added for every eta.
    std::vector<double> eta_grid;
    Matrix D_star = Matrix::Constant(1, 1, kDefaultNominalD);
    StepWindow window;
    unsigned threads = 1;  // 0 uses the hardware concurrency

    void validate() const {
        if (trials < 1) throw ModelError("MonteCarloConfig: trials must be at least 1");
        if (steps < 1) throw ModelError("MonteCarloConfig: steps must be at least 1");
        if (window.first < 1 || window.first > window.last || window.last > steps) {
            throw ModelError("MonteCarloConfig: window must satisfy 1 <= first <= last <= steps");
        }
        for (double eta : eta_grid) {
            if (!(eta > 0.0) || !std::isfinite(eta)) throw ModelError("MonteCarloConfig: eta values must be positive");
        }
        if (estimators.empty() && eta_grid.empty()) throw ModelError("MonteCarloConfig: no estimators configured");
    }
};

inline std::string sweep_name(std::size_t index) { return "kf_dob_eta" + std::to_string(index); }

/// Configured estimators followed by the eta-sweep KF-DOBs.
inline std::vector<EstimatorSpec> expanded_estimators(const MonteCarloConfig& cfg) {
    std::vector<EstimatorSpec> all = cfg.estimators;
    for (std::size_t i = 0; i < cfg.eta_grid.size(); ++i) {
        all.push_back({sweep_name(i), KfDobSpec{cfg.eta_grid[i] * cfg.D_star}});
    }
    return all;
}

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
};

inline MeanStd mean_std(const std::vector<double>& v) {
    MeanStd out;
    if (v.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
    for (double x : v) out.mean += x;
    out.mean /= static_cast<double>(v.size());
    for (double x : v) out.std += (x - out.mean) * (x - out.mean);
    out.std = std::sqrt(out.std / static_cast<double>(v.size()));
    return out;
}

/// Windowed summary of a bias/std series pair.
struct WindowLoss {
    double bias_sq = 0.0;
    double variance = 0.0;
    double perf_loss = 0.0;
};

/// Mean of b_k^2 and of sigma_k^2 over the window, and their sum.
inline WindowLoss performance_loss(const std::vector<double>& bias, const std::vector<double>& stdev,
                                   StepWindow window) {
    if (bias.size() != stdev.size()) throw ModelError("performance_loss: series lengths differ");
    if (window.first < 1 || window.first > window.last) throw ModelError("performance_loss: empty window");
    if (window.last > static_cast<Index>(bias.size())) throw ModelError("performance_loss: window exceeds series");
    WindowLoss out;
    for (Index k = window.first; k <= window.last; ++k) {
        const auto i = static_cast<std::size_t>(k - 1);
        out.bias_sq += bias[i] * bias[i];
        out.variance += stdev[i] * stdev[i];
    }
    const double count = static_cast<double>(window.last - window.first + 1);
    out.bias_sq /= count;
    out.variance /= count;
    out.perf_loss = out.bias_sq + out.variance;
    return out;
}

struct EstimatorReport {
    std::string name;
    std::string kind;
    std::vector<double> bias;  // b_{d,k}, first disturbance channel
    std::vector<double> stdev;  // sigma_{d,k}
    WindowLoss window_loss;
    MeanStd rmse_d;
    std::vector<MeanStd> rmse_x;
    MeanStd wall_time;
    double band_coverage = 0.0;  // share of errors within b +- 3 sigma on constant-level steps
    Index failures = 0;
    std::vector<std::string> failure_messages;
    /// raw_errors[trial][k - 1] = d_{k-1} - d_hat_k; empty for failed trials.
    std::vector<std::vector<double>> raw_errors;
};

struct SweepRow {
    double eta = 0.0;
    WindowLoss loss;
};

struct MonteCarloReport {
    Index steps = 0;
    Index trials = 0;
    std::uint64_t base_seed = 0;
    double sample_time = kDefaultSampleTime;
    StepWindow window;
    std::vector<EstimatorReport> estimators;
    std::vector<SweepRow> sweep;

    const EstimatorReport& find(const std::string& name) const {
        for (const auto& e : estimators) {
            if (e.name == name) return e;
        }
        throw ModelError("MonteCarloReport: no estimator named " + name);
    }
};

namespace detail {

struct TrialResult {
    bool ok = false;
    std::string error;
    std::vector<double> d_err;
    std::vector<double> x_sq_mean;  // per state component, mean over steps
    double seconds = 0.0;
};

inline std::vector<TrialResult> run_trial(const MonteCarloConfig& cfg, const std::vector<EstimatorSpec>& specs,
                                          Index trial) {
    std::vector<TrialResult> out(specs.size());
    Trajectory traj;
    try {
        traj = simulate_truth(cfg.sys, cfg.profile, cfg.steps, trial_seed(cfg.base_seed, static_cast<std::uint64_t>(trial)),
                              cfg.initial, cfg.truth_noise, cfg.sample_time);
    } catch (const std::exception& e) {
        for (auto& r : out) r.error = std::string("simulation: ") + e.what();
        return out;
    }
    const Index n = cfg.sys.n();
    for (std::size_t j = 0; j < specs.size(); ++j) {
        TrialResult& r = out[j];
        try {
            const EstimateSeries est = run_estimator(specs[j], cfg.sys, cfg.initial, traj);
            r.d_err.resize(static_cast<std::size_t>(cfg.steps));
            r.x_sq_mean.assign(static_cast<std::size_t>(n), 0.0);
            for (std::size_t i = 0; i < r.d_err.size(); ++i) {
                r.d_err[i] = traj.disturbances[i](0) - est.d_hat[i](0);
                const Vector ex = traj.states[i] - est.x_hat[i];
                for (Index c = 0; c < n; ++c) r.x_sq_mean[static_cast<std::size_t>(c)] += ex(c) * ex(c);
            }
            for (double& v : r.x_sq_mean) v /= static_cast<double>(cfg.steps);
            r.seconds = est.seconds;
            r.ok = std::all_of(r.d_err.begin(), r.d_err.end(), [](double v) { return std::isfinite(v); });
            if (!r.ok) r.error = "non-finite disturbance estimate";
        } catch (const std::exception& e) {
            r.error = e.what();
            r.d_err.clear();
        }
    }
    return out;
}

}  // namespace detail

/**
 * @brief Runs all trials and reduces them in trial order.
 *
 * Trials are distributed over worker threads; the reduction only reads the
 * per-trial results by index, so the report does not depend on scheduling.
 * Wall-clock times are the only schedule-dependent fields.
 */
inline MonteCarloReport run_monte_carlo(const MonteCarloConfig& cfg) {
    cfg.validate();
    const std::vector<EstimatorSpec> specs = expanded_estimators(cfg);
    const auto K = static_cast<std::size_t>(cfg.trials);
    std::vector<std::vector<detail::TrialResult>> results(K);

    unsigned workers = cfg.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : cfg.threads;
    workers = static_cast<unsigned>(std::min<std::size_t>(workers, K));
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next.fetch_add(1); i < K; i = next.fetch_add(1)) {
            results[i] = detail::run_trial(cfg, specs, static_cast<Index>(i));
        }
    };
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
    }

    MonteCarloReport report;
    report.steps = cfg.steps;
    report.trials = cfg.trials;
    report.base_seed = cfg.base_seed;
    report.sample_time = cfg.sample_time;
    report.window = cfg.window;
    const auto steps = static_cast<std::size_t>(cfg.steps);
    const auto n = static_cast<std::size_t>(cfg.sys.n());
    const double nan = std::numeric_limits<double>::quiet_NaN();

    for (std::size_t j = 0; j < specs.size(); ++j) {
        EstimatorReport er;
        er.name = specs[j].name;
        er.kind = kind_name(specs[j].kind);
        er.bias.assign(steps, 0.0);
        er.stdev.assign(steps, 0.0);
        std::vector<double> rmse_d, seconds;
        std::vector<std::vector<double>> rmse_x(n);
        for (std::size_t i = 0; i < K; ++i) {
            detail::TrialResult& r = results[i][j];
            if (!r.ok) {
                ++er.failures;
                er.failure_messages.push_back("trial " + std::to_string(i) + ": " + r.error);
                er.raw_errors.emplace_back();
                continue;
            }
            double sq = 0.0;
            for (std::size_t k = 0; k < steps; ++k) {
                er.bias[k] += r.d_err[k];
                sq += r.d_err[k] * r.d_err[k];
            }
            rmse_d.push_back(std::sqrt(sq / static_cast<double>(steps)));
            for (std::size_t c = 0; c < n; ++c) rmse_x[c].push_back(std::sqrt(r.x_sq_mean[c]));
            seconds.push_back(r.seconds);
            er.raw_errors.push_back(std::move(r.d_err));
        }
        const auto ok = static_cast<double>(rmse_d.size());
        for (std::size_t k = 0; k < steps; ++k) er.bias[k] = ok > 0 ? er.bias[k] / ok : nan;
        for (const auto& row : er.raw_errors) {
            if (row.empty()) continue;
            for (std::size_t k = 0; k < steps; ++k) {
                const double c = row[k] - er.bias[k];
                er.stdev[k] += c * c;
            }
        }
        for (std::size_t k = 0; k < steps; ++k) er.stdev[k] = ok > 0 ? std::sqrt(er.stdev[k] / ok) : nan;

        er.window_loss = performance_loss(er.bias, er.stdev, cfg.window);
        er.rmse_d = mean_std(rmse_d);
        for (const auto& v : rmse_x) er.rmse_x.push_back(mean_std(v));
        er.wall_time = mean_std(seconds);

        std::size_t inside = 0, total = 0;
        for (const auto& row : er.raw_errors) {
            if (row.empty()) continue;
            for (std::size_t k = 0; k < steps; ++k) {
                // error at step k + 1 concerns d_k
                if (!cfg.profile.constant_at(static_cast<Index>(k))) continue;
                ++total;
                if (std::abs(row[k] - er.bias[k]) <= 3.0 * er.stdev[k]) ++inside;
            }
        }
        er.band_coverage = total > 0 ? static_cast<double>(inside) / static_cast<double>(total) : nan;
        report.estimators.push_back(std::move(er));
    }

    for (std::size_t i = 0; i < cfg.eta_grid.size(); ++i) {
        report.sweep.push_back({cfg.eta_grid[i], report.find(sweep_name(i)).window_loss});
    }
    return report;
}

/// Adjacent pairs that break the requested order (strict comparisons, ties allowed).
inline Index count_inversions(const std::vector<double>& v, bool nondecreasing) {
    Index count = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (nondecreasing ? v[i] < v[i - 1] : v[i] > v[i - 1]) ++count;
    }
    return count;
}

struct IdentitySummary {
    double max_d_dev = 0.0;        // max pairwise |d_hat difference|
    double max_cov_rel_dev = 0.0;  // max pairwise relative covariance difference
    Index compared_steps = 0;
};

inline constexpr Index kIdentityBurnIn = 2;

/**
 * @brief Runs SISE, NKF-DOB and KF-DOB (D = D_scale D*) on one trajectory.
 *
 * All three estimate d_{k-1} at step k. KF-DOB enters with its lagged
 * covariance, the posterior disturbance block minus D.
 */
inline IdentitySummary identity_check(const LinearSystem& sys, const DisturbanceProfile& profile, Index steps,
                                      std::uint64_t seed, double D_scale, const Matrix& D_star,
                                      const GaussianBelief& initial) {
    if (!(D_scale > 0.0)) throw ModelError("identity_check: D_scale must be positive");
    const Trajectory traj = simulate_truth(sys, profile, steps, seed, initial);
    const Matrix D = D_scale * D_star;

    SiseState sise = sise_initial_state(initial);
    NkfDobState nkf{initial, Vector::Zero(sys.p()), D, Matrix()};
    GaussianBelief kf = kf_dob_initial_belief(initial, D);

    IdentitySummary out;
    auto rel = [](const Matrix& a, const Matrix& b) {
        return max_abs(a - b) / std::max({max_abs(a), max_abs(b), std::numeric_limits<double>::min()});
    };
    for (Index k = 1; k <= steps; ++k) {
        const Vector& y = traj.measurements[static_cast<std::size_t>(k - 1)];
        sise = sise_step(sise, sys, y);
        nkf = nkf_dob_step(nkf, sys, D, y);
        KfDobStep s = kf_dob_step(kf, sys, D, y);
        kf = s.belief;
        if (k <= kIdentityBurnIn) continue;
        ++out.compared_steps;
        out.max_d_dev = std::max({out.max_d_dev, max_abs(sise.last_d - nkf.d), max_abs(sise.last_d - s.d_hat),
                                  max_abs(nkf.d - s.d_hat)});
        out.max_cov_rel_dev = std::max({out.max_cov_rel_dev, rel(sise.last_d_cov, nkf.d_cov),
                                        rel(sise.last_d_cov, s.lagged_d_cov), rel(nkf.d_cov, s.lagged_d_cov)});
    }
    return out;
}

inline void write_bias_std_csv(std::ostream& os, const EstimatorReport& er, double sample_time) {
    os << "step,t,bias,std\n";
    for (std::size_t i = 0; i < er.bias.size(); ++i) {
        const auto k = static_cast<double>(i + 1);
        os << (i + 1) << ',' << format_real(k * sample_time) << ',' << format_real(er.bias[i]) << ','
           << format_real(er.stdev[i]) << '\n';
    }
}

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
    os << "eta,bias_sq,variance,perf_loss\n";
    for (const auto& r : rows) {
        os << format_real(r.eta) << ',' << format_real(r.loss.bias_sq) << ',' << format_real(r.loss.variance) << ','
           << format_real(r.loss.perf_loss) << '\n';
    }
}

inline nlohmann::json to_json(const MeanStd& v) { return {{"mean", v.mean}, {"std", v.std}}; }

/// Full report without the raw per-trial errors.
inline nlohmann::json to_json(const MonteCarloReport& r) {
    nlohmann::json j;
    j["steps"] = r.steps;
    j["trials"] = r.trials;
    j["base_seed"] = r.base_seed;
    j["sample_time"] = r.sample_time;
    j["window"] = {r.window.first, r.window.last};
    j["estimators"] = nlohmann::json::array();
    for (const auto& e : r.estimators) {
        nlohmann::json je;
        je["name"] = e.name;
        je["kind"] = e.kind;
        je["bias"] = e.bias;
        je["std"] = e.stdev;
        je["mean_bias_sq"] = e.window_loss.bias_sq;
        je["mean_var"] = e.window_loss.variance;
        je["perf_loss"] = e.window_loss.perf_loss;
        je["rmse_d"] = to_json(e.rmse_d);
        je["rmse_x"] = nlohmann::json::array();
        for (const auto& v : e.rmse_x) je["rmse_x"].push_back(to_json(v));
        je["wall_time"] = to_json(e.wall_time);
        je["band_coverage"] = e.band_coverage;
        je["failures"] = e.failures;
        je["failure_messages"] = e.failure_messages;
        j["estimators"].push_back(std::move(je));
    }
    j["sweep"] = nlohmann::json::array();
    for (const auto& s : r.sweep) {
        j["sweep"].push_back({{"eta", s.eta},
                              {"bias_sq", s.loss.bias_sq},
                              {"variance", s.loss.variance},
                              {"perf_loss", s.loss.perf_loss}});
    }
    return j;
}

}  // namespace doblab
