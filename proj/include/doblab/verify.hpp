#pragma once

// Self-check suite behind `doblab verify`: oracle equivalences, covariance
// identities and orderings, estimator-family identity, reductions, and the
// Monte Carlo bias-variance ordering.

#include "doblab/harness.hpp"
#include "doblab/imm.hpp"
#include "doblab/kalman.hpp"
#include "doblab/mkc.hpp"
#include "doblab/oracles.hpp"
#include "doblab/random_models.hpp"
#include "doblab/sise.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

namespace doblab {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
};

/// Posterior covariance update used by the identity checks.
using CovarianceUpdate = std::function<Matrix(const Matrix& P, const Matrix& K, const Matrix& H, const Matrix& R)>;

inline CovarianceUpdate joseph_covariance_update() {
    return [](const Matrix& P, const Matrix& K, const Matrix& H, const Matrix& R) { return joseph_update(P, K, H, R); };
}

/// Joseph form without the K R K^T term.
inline CovarianceUpdate faulty_covariance_update() {
    return [](const Matrix& P, const Matrix& K, const Matrix& H, const Matrix& /*R*/) {
        const Matrix A = Matrix::Identity(P.rows(), P.cols()) - K * H;
        return symmetric_part(A * P * A.transpose());
    };
}

struct VerifyOptions {
    Index trials = 100;
    unsigned threads = 1;
    CovarianceUpdate update = joseph_covariance_update();
};

namespace detail {

template <class F>
CheckResult timed(std::string name, F&& body) {
    const auto start = std::chrono::steady_clock::now();
    CheckResult r = body();
    r.name = std::move(name);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
}

inline std::string fmt(double v) {
    std::ostringstream os;
    os.precision(3);
    os << v;
    return os.str();
}

inline CheckResult bound(double worst, double tol, const std::string& what) {
    return {"", worst <= tol, what + " max deviation " + fmt(worst) + " (limit " + fmt(tol) + ")", 0.0};
}

inline std::vector<Vector> measurements_for(const StateSpaceModel& model, RandomSource& rs, Index k) {
    const Matrix Lq = sampling_factor(model.Q);
    const Matrix Lr = sampling_factor(model.R);
    Vector x = rs.vector(model.dim());
    std::vector<Vector> Y;
    for (Index i = 0; i < k; ++i) {
        x = model.Phi * x + Lq * rs.vector(model.dim());
        Y.push_back(model.H * x + Lr * rs.vector(model.meas_dim()));
    }
    return Y;
}

}  // namespace detail

/// Batch estimate vs recursive KF endpoint on random systems.
inline CheckResult check_batch_equivalence(Index systems = 20, Index k = 50, double tol = 1e-8,
                                           std::uint64_t seed = 101) {
    return detail::timed("batch_recursive_equivalence", [&] {
        double worst = 0.0;
        for (Index s = 0; s < systems; ++s) {
            RandomSource rs(hash_combine(seed, static_cast<std::uint64_t>(s)));
            const StateSpaceModel model = random_state_space(rs);
            const GaussianBelief prior{rs.vector(model.dim()), rs.spd(model.dim())};
            const auto Y = detail::measurements_for(model, rs, k);
            GaussianBelief b = prior;
            for (const auto& y : Y) b = kf_step(b, model, y);
            const Vector batch = batch_kf_estimate(model, k, prior.mean, prior.cov, Y);
            worst = std::max(worst, max_abs(batch - b.mean));
        }
        return detail::bound(worst, tol, "batch vs recursive");
    });
}

/// M* H G = I_p on random systems.
inline CheckResult check_sise_input_gain(Index systems = 100, double tol = 1e-12, std::uint64_t seed = 202) {
    return detail::timed("sise_input_gain_identity", [&] {
        double worst = 0.0;
        for (Index s = 0; s < systems; ++s) {
            RandomSource rs(hash_combine(seed, static_cast<std::uint64_t>(s)));
            const LinearSystem sys = random_linear_system(rs);
            const GaussianBelief xb{rs.vector(sys.n()), rs.spd(sys.n())};
            const SiseGains g = sise_gains(xb, sys);
            const Matrix I = Matrix::Identity(sys.p(), sys.p());
            worst = std::max(worst, max_abs(g.input_gain * sys.H() * sys.G() - I));
        }
        return detail::bound(worst, tol, "M* H G - I");
    });
}

struct IdentityRunStats {
    double gain_complement = 0.0;  // max |(I - K H) - (I + P H^T R^-1 H)^-1|
    double information = 0.0;      // max relative |P+^-1 - (P-^-1 + H^T R^-1 H)|
};

/// Runs filters with the given covariance update and tracks both identities.
inline IdentityRunStats kalman_identity_run(Index systems, Index steps, const CovarianceUpdate& update,
                                            std::uint64_t seed) {
    IdentityRunStats st;
    for (Index s = 0; s < systems; ++s) {
        RandomSource rs(hash_combine(seed, static_cast<std::uint64_t>(s)));
        const StateSpaceModel model = random_state_space(rs);
        const auto Y = detail::measurements_for(model, rs, steps);
        const Index q = model.dim();
        const Matrix I = Matrix::Identity(q, q);
        const Matrix info = model.H.transpose() * model.R.llt().solve(model.H);
        GaussianBelief b{Vector::Zero(q), rs.spd(q)};
        for (const auto& y : Y) {
            const GaussianBelief pred = kf_predict(b, model.Phi, model.Q);
            const auto llt = factor_innovation(model.H * pred.cov * model.H.transpose() + model.R);
            const Matrix K = kalman_gain(pred.cov, model.H, llt);
            const Matrix post = update(pred.cov, K, model.H, model.R);

            const Matrix complement = (I + pred.cov * info).partialPivLu().solve(I);
            st.gain_complement = std::max(st.gain_complement, max_abs((I - K * model.H) - complement));

            const Matrix rhs = pred.cov.llt().solve(I) + info;
            const Matrix lhs = post.llt().solve(I);
            st.information = std::max(st.information, max_abs(lhs - rhs) / max_abs(rhs));

            b.mean = pred.mean + K * (y - model.H * pred.mean);
            b.cov = post;
        }
    }
    return st;
}

inline CheckResult check_gain_complement(const CovarianceUpdate& update, Index systems = 50, Index steps = 20,
                                         double tol = 1e-9, std::uint64_t seed = 303) {
    return detail::timed("gain_complement_identity", [&] {
        return detail::bound(kalman_identity_run(systems, steps, update, seed).gain_complement, tol,
                             "(I - K H) vs (I + P H^T R^-1 H)^-1");
    });
}

inline CheckResult check_information_identity(const CovarianceUpdate& update, Index systems = 50, Index steps = 20,
                                              double tol = 1e-8, std::uint64_t seed = 303) {
    return detail::timed("information_identity", [&] {
        return detail::bound(kalman_identity_run(systems, steps, update, seed).information, tol,
                             "relative information-form");
    });
}

/**
 * @brief P^f >= P^t >= P and monotonicity in dQ for 0 <= dQ1 <= dQ2.
 *
 * Each triple (P_prev, Q, dQ) yields dQ1 = a1 dQ and dQ2 = a2 dQ with
 * 0 <= a1 <= a2. The true covariance is not monotone along arbitrary nested
 * pairs whose measurement-space images do not commute.
 */
inline CheckResult check_covariance_orderings(Index triples = 50, double tol = 1e-9, std::uint64_t seed = 404) {
    return detail::timed("covariance_orderings", [&] {
        double worst = std::numeric_limits<double>::infinity();
        for (Index s = 0; s < triples; ++s) {
            RandomSource rs(hash_combine(seed, static_cast<std::uint64_t>(s)));
            StateSpaceModel model = random_state_space(rs);
            const Index q = model.dim();
            const Matrix P_prev = rs.spd(q);
            const Matrix dQ = rs.psd(q, rs.integer(1, q));
            const double a1 = 2.0 * rs.uniform();
            const double a2 = a1 + 2.0 * rs.uniform();
            const Matrix dQ1 = a1 * dQ;
            const Matrix dQ2 = a2 * dQ;
            const CovarianceTriple t1 = covariance_triple_step(model, P_prev, dQ1);
            const CovarianceTriple t2 = covariance_triple_step(model, P_prev, dQ2);
            for (const Matrix& diff : {Matrix(t1.filter_calc - t1.true_cov), Matrix(t1.true_cov - t1.ideal),
                                       Matrix(t2.filter_calc - t2.true_cov), Matrix(t2.true_cov - t2.ideal),
                                       Matrix(t2.true_cov - t1.true_cov), Matrix(t2.filter_calc - t1.filter_calc)}) {
                worst = std::min(worst, min_eigenvalue(diff));
            }
        }
        return CheckResult{"", worst >= -tol, "smallest eigenvalue of ordered differences " + detail::fmt(worst) +
                                                  " (limit -" + detail::fmt(tol) + ")", 0.0};
    });
}

/// P^t - P against the closed form on square invertible H.
inline CheckResult check_true_excess_closed_form(Index instances = 50, double tol = 1e-8, std::uint64_t seed = 505) {
    return detail::timed("true_covariance_closed_form", [&] {
        double worst = 0.0;
        for (Index s = 0; s < instances; ++s) {
            RandomSource rs(hash_combine(seed, static_cast<std::uint64_t>(s)));
            const Index q = rs.integer(1, 3);
            StateSpaceModel model{rs.contraction(q, 0.95), rs.matrix(q, q) + 2.0 * Matrix::Identity(q, q), rs.spd(q),
                                  rs.spd(q)};
            const Matrix P_prev = rs.spd(q);
            const Matrix dQ = rs.psd(q, rs.integer(1, q));
            const CovarianceTriple t = covariance_triple_step(model, P_prev, dQ);
            const Matrix closed = true_excess_closed_form(model, t.prior, dQ);
            worst = std::max(worst, max_abs((t.true_cov - t.ideal) - closed));
        }
        return detail::bound(worst, tol, "P^t - P vs closed form");
    });
}

/// One step with dQ = 1e12 I removes at least 99.99% of an initial bias.
inline CheckResult check_infinite_convergence_rate(Index instances = 20, std::uint64_t seed = 606) {
    return detail::timed("infinite_convergence_rate", [&] {
        double worst = 0.0;
        for (Index s = 0; s < instances; ++s) {
            RandomSource rs(hash_combine(seed, static_cast<std::uint64_t>(s)));
            const Index q = rs.integer(1, 3);
            // m >= q and full column rank H makes H^T R^-1 H positive definite
            StateSpaceModel model{rs.contraction(q, 0.95), rs.matrix(q + 1, q), rs.spd(q), rs.spd(q + 1)};
            const Vector b0 = rs.vector(q);
            const Matrix Qu = model.Q + 1e12 * Matrix::Identity(q, q);
            const auto seq = bias_propagation(model, Qu, b0, rs.spd(q), 1);
            worst = std::max(worst, seq[1].norm() / b0.norm());
        }
        return detail::bound(worst, 1e-4, "remaining bias fraction");
    });
}

/// SISE, NKF-DOB and KF-DOB agree at D = e^20 D*.
inline CheckResult check_family_identity(std::uint64_t seed = 1, Index steps = kDefaultSteps, double d_tol = 1e-3,
                                         double cov_tol = 1e-2) {
    return detail::timed("estimator_family_identity", [&] {
        const LinearSystem sys = default_tracking_system();
        const GaussianBelief init{Vector::Zero(2), 1e-2 * Matrix::Identity(2, 2)};
        const IdentitySummary s = identity_check(sys, default_profile(), steps, seed, std::exp(20.0),
                                                 Matrix::Constant(1, 1, kDefaultNominalD), init);
        const bool pass = s.max_d_dev <= d_tol && s.max_cov_rel_dev <= cov_tol;
        return CheckResult{"", pass,
                           "max |d_hat difference| " + detail::fmt(s.max_d_dev) + " (limit " + detail::fmt(d_tol) +
                               "), max relative covariance difference " + detail::fmt(s.max_cov_rel_dev) +
                               " (limit " + detail::fmt(cov_tol) + ")",
                           0.0};
    });
}

struct ReductionStats {
    double mkc_vs_kf = 0.0;
    double imm_vs_kf = 0.0;
    double simplex = 0.0;
};

/// Wide-kernel MKCKF-DOB and single-model IMMKF-DOB against KF-DOB; IMM simplex drift.
inline ReductionStats reduction_run(Index steps, std::uint64_t seed) {
    const LinearSystem sys = default_tracking_system();
    const GaussianBelief init{Vector::Zero(2), 1e-2 * Matrix::Identity(2, 2)};
    const Matrix D = Matrix::Constant(1, 1, kDefaultNominalD);
    const Trajectory traj = simulate_truth(sys, default_profile(), steps, seed, init);

    MkcConfig wide = MkcConfig::for_system(sys, kWideBandwidth);
    ReductionStats st;
    GaussianBelief kf = kf_dob_initial_belief(init, D);
    GaussianBelief mkc = kf;
    ImmState single = immkf_dob_initial_state(init, {D}, Matrix::Ones(1, 1), Vector::Ones(1));
    Matrix P(2, 2);
    P << 0.98, 0.02, 0.5, 0.5;
    const std::vector<Matrix> pair{D, std::exp(5.0) * D};
    ImmState two = immkf_dob_initial_state(init, pair, P, Vector::Constant(2, 0.5));
    for (const auto& y : traj.measurements) {
        const KfDobStep k = kf_dob_step(kf, sys, D, y);
        const MkcStep m = mkckf_dob_step(mkc, sys, D, y, wide);
        const ImmDobStep i1 = immkf_dob_step(single, sys, {D}, sys.Q(), sys.R(), y);
        const ImmDobStep i2 = immkf_dob_step(two, sys, pair, sys.Q(), sys.R(), y);
        st.mkc_vs_kf = std::max({st.mkc_vs_kf, max_abs(m.belief.mean - k.belief.mean), max_abs(m.belief.cov - k.belief.cov)});
        st.imm_vs_kf = std::max({st.imm_vs_kf, max_abs(i1.fused.mean - k.belief.mean), max_abs(i1.fused.cov - k.belief.cov)});
        const Vector& mu = i2.state.mode_probs;
        st.simplex = std::max({st.simplex, std::abs(mu.sum() - 1.0), std::max(0.0, -mu.minCoeff())});
        kf = k.belief;
        mkc = m.belief;
        single = i1.state;
        two = i2.state;
    }
    return st;
}

inline CheckResult check_reductions(Index steps = 300, std::uint64_t seed = 11) {
    return detail::timed("estimator_reductions", [&] {
        const ReductionStats st = reduction_run(steps, seed);
        const bool pass = st.mkc_vs_kf <= 1e-6 && st.imm_vs_kf == 0.0 && st.simplex <= 1e-12;
        return CheckResult{"", pass,
                           "wide-kernel MKCKF vs KF-DOB " + detail::fmt(st.mkc_vs_kf) + " (limit 1e-06), single-model "
                           "IMM vs KF-DOB " + detail::fmt(st.imm_vs_kf) + " (must be 0), simplex drift " +
                               detail::fmt(st.simplex) + " (limit 1e-12)",
                           0.0};
    });
}

inline std::vector<double> default_eta_grid() {
    return {1.0, std::exp(1.0), std::exp(2.0), std::exp(3.0), std::exp(20.0)};
}

/**
 * @brief Windowed bias^2 nonincreasing and variance nondecreasing in eta.
 *
 * An adjacent pair counts as an inversion when it breaks the order by more
 * than `slack` relative; at most one inversion per series is tolerated.
 */
inline CheckResult check_bias_variance_sweep(Index trials, unsigned threads, double slack, std::uint64_t seed = 1) {
    return detail::timed("bias_variance_tradeoff", [&] {
        MonteCarloConfig cfg;
        cfg.trials = trials;
        cfg.threads = threads;
        cfg.base_seed = seed;
        cfg.eta_grid = default_eta_grid();
        const MonteCarloReport rep = run_monte_carlo(cfg);
        std::vector<double> bias, var;
        for (const auto& row : rep.sweep) {
            bias.push_back(row.loss.bias_sq);
            var.push_back(row.loss.variance);
        }
        Index bias_inv = 0, var_inv = 0;
        for (std::size_t i = 1; i < bias.size(); ++i) {
            if (bias[i] > bias[i - 1] * (1.0 + slack)) ++bias_inv;
            if (var[i] < var[i - 1] * (1.0 - slack)) ++var_inv;
        }
        Index failures = 0;
        for (const auto& e : rep.estimators) failures += e.failures;
        const bool pass = bias_inv <= 1 && var_inv <= 1 && failures == 0;
        return CheckResult{"", pass,
                           std::to_string(trials) + " trials: bias^2 inversions " + std::to_string(bias_inv) +
                               ", variance inversions " + std::to_string(var_inv) + " (at most 1 each, slack " +
                               detail::fmt(slack) + "), failed trials " + std::to_string(failures),
                           0.0};
    });
}

inline std::vector<CheckResult> run_verify(const VerifyOptions& opt) {
    std::vector<CheckResult> out;
    out.push_back(check_batch_equivalence());
    out.push_back(check_sise_input_gain());
    out.push_back(check_gain_complement(opt.update));
    out.push_back(check_information_identity(opt.update));
    out.push_back(check_covariance_orderings());
    out.push_back(check_true_excess_closed_form());
    out.push_back(check_infinite_convergence_rate());
    out.push_back(check_family_identity());
    out.push_back(check_reductions());
    // 0.1 relative at 100 trials, scaled as 1/sqrt(K)
    const double slack = 1.0 / std::sqrt(static_cast<double>(std::max<Index>(opt.trials, 1)));
    out.push_back(check_bias_variance_sweep(opt.trials, opt.threads, slack));
    return out;
}

}  // namespace doblab
