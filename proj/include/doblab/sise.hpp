#pragma once

// Simultaneous input and state estimation: an unbiased minimum-variance
// filter that uses no model for the disturbance at all.

#include "doblab/core_model.hpp"
#include "doblab/kalman.hpp"

namespace doblab {

struct SiseState {
    GaussianBelief x_belief;
    /// Estimate of d_{k-1} produced at step k; empty before the first step.
    Vector last_d;
    Matrix last_d_cov;

    bool has_disturbance() const { return last_d.size() > 0; }
};

inline SiseState sise_initial_state(const GaussianBelief& x_belief) { return {x_belief, Vector(), Matrix()}; }

/// Intermediate quantities of one SISE step, exposed for identity checks.
struct SiseGains {
    GaussianBelief predicted;
    Matrix R_tilde;       // H P_{k|k-1} H^T + R
    Matrix input_gain;    // M*_k
    Matrix state_gain;    // K*_k = P_{k|k-1} H^T R_tilde^{-1}
    Matrix d_cov;         // (G^T H^T R_tilde^{-1} H G)^{-1}
};

inline SiseGains sise_gains(const GaussianBelief& x_belief, const LinearSystem& sys) {
    detail::require_length(x_belief.mean, sys.n(), "x mean");
    detail::require_shape(x_belief.cov, sys.n(), sys.n(), "x covariance");
    const Matrix& H = sys.H();
    const Matrix HG = H * sys.G();

    SiseGains g;
    g.predicted = kf_predict(x_belief, sys.F(), sys.Q());
    g.R_tilde = symmetric_part(H * g.predicted.cov * H.transpose() + sys.R());
    const auto r_llt = factor_innovation(g.R_tilde);

    const Matrix Rinv_HG = r_llt.solve(HG);
    const Matrix info = symmetric_part(HG.transpose() * Rinv_HG);  // G^T H^T R~^{-1} H G
    Eigen::LLT<Matrix> info_llt(info);
    if (info_llt.info() != Eigen::Success || !(info_llt.rcond() > 1e-14)) {
        throw NumericalError("disturbance unobservable: G^T H^T R~^{-1} H G is singular");
    }
    g.input_gain = info_llt.solve(Rinv_HG.transpose());
    g.state_gain = kalman_gain(g.predicted.cov, H, r_llt);
    g.d_cov = symmetric_part(info_llt.solve(Matrix::Identity(sys.p(), sys.p())));
    return g;
}

/**
 * @brief One SISE step: time update, unknown-input estimate, measurement update.
 *
 * The posterior covariance is
 *   (I - K* H) [ (I - G M* H) P (I - G M* H)^T + G M* R M*^T G^T ] + K* R M*^T G^T
 * evaluated literally and then symmetrized.
 */
inline SiseState sise_step(const SiseState& s, const LinearSystem& sys, const Vector& y) {
    detail::require_length(y, sys.m(), "measurement");
    const SiseGains g = sise_gains(s.x_belief, sys);
    const Matrix& G = sys.G();
    const Matrix& H = sys.H();
    const Matrix& R = sys.R();
    const Matrix& M = g.input_gain;
    const Matrix& K = g.state_gain;
    const Matrix& P = g.predicted.cov;
    const Index n = sys.n();
    const Matrix I = Matrix::Identity(n, n);

    SiseState out;
    out.last_d = M * (y - H * g.predicted.mean);
    const Vector x_star = g.predicted.mean + G * out.last_d;
    out.x_belief.mean = x_star + K * (y - H * x_star);

    const Matrix A = I - G * M * H;
    const Matrix P_star = A * P * A.transpose() + G * M * R * M.transpose() * G.transpose();
    out.x_belief.cov = symmetric_part((I - K * H) * P_star + K * R * M.transpose() * G.transpose());
    out.last_d_cov = g.d_cov;
    return out;
}

}  // namespace doblab
