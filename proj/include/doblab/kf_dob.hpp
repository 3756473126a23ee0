#pragma once

// Kalman-filter disturbance observers: the augmented KF-DOB, its partitioned
// block form, and the "native" NKF-DOB that keeps no disturbance dynamics.

#include "doblab/core_model.hpp"
#include "doblab/kalman.hpp"

namespace doblab {

/// Output shared by the disturbance observers.
struct DobStep {
    GaussianBelief belief;
    Vector d_hat;
    Matrix d_cov;
};

struct KfDobStep : DobStep {
    /// Covariance of d_{k-1} given y_1..y_k, i.e. d_cov minus the random-walk
    /// increment D that no measurement up to step k can observe.
    Matrix lagged_d_cov;
};

/// Initial [d; x] belief: disturbance mean 0 with covariance D, independent of x.
inline GaussianBelief kf_dob_initial_belief(const GaussianBelief& x_belief, const Matrix& D) {
    const Index p = D.rows();
    GaussianBelief out;
    out.mean = Vector::Zero(p + x_belief.mean.size());
    out.mean.tail(x_belief.mean.size()) = x_belief.mean;
    out.cov = block_diag(D, x_belief.cov);
    return out;
}

/**
 * @brief One KF-DOB step: a plain Kalman step on augment(sys, D).
 *
 * d_hat and d_cov are the leading p-block of the posterior.
 */
inline KfDobStep kf_dob_step(const GaussianBelief& belief, const LinearSystem& sys, const Matrix& D,
                             const Vector& y) {
    const AugmentedModel aug = augment(sys, D);
    if (belief.mean.size() != aug.Phi.rows()) {
        throw ModelError("kf_dob_step: belief dimension must be p + n");
    }
    const Index p = sys.p();
    KfDobStep out;
    out.belief = kf_step(belief, aug.Phi, aug.Haug, aug.Qaug, sys.R(), y);
    out.d_hat = out.belief.mean.head(p);
    out.d_cov = out.belief.cov.topLeftCorner(p, p);
    out.lagged_d_cov = symmetric_part(out.d_cov - D);
    return out;
}

/// KF-DOB state in partitioned form; Pdx is cov(d, x).
struct PartitionedDobState {
    Vector x;
    Matrix Pxx;
    Vector d;
    Matrix Pdd;
    Matrix Pdx;
};

inline PartitionedDobState partition(const GaussianBelief& joint, Index p) {
    const Index n = joint.mean.size() - p;
    return {joint.mean.tail(n), joint.cov.bottomRightCorner(n, n), joint.mean.head(p),
            joint.cov.topLeftCorner(p, p), joint.cov.topRightCorner(p, n)};
}

inline GaussianBelief join(const PartitionedDobState& s) {
    const Index p = s.d.size();
    const Index n = s.x.size();
    GaussianBelief out;
    out.mean.resize(p + n);
    out.mean << s.d, s.x;
    out.cov.resize(p + n, p + n);
    out.cov << s.Pdd, s.Pdx, s.Pdx.transpose(), s.Pxx;
    return out;
}

/**
 * @brief KF-DOB written block by block.
 *
 * Same filter as kf_dob_step, but the prediction and update are expanded on
 * the (d, x) blocks: gains K^x = Pxx H^T S^{-1} and M^d = Pdx H^T S^{-1} with
 * S = H Pxx H^T + R, and the standard (I - K H) P covariance update.
 */
inline PartitionedDobState kf_dob_partitioned_step(const PartitionedDobState& s, const LinearSystem& sys,
                                                   const Matrix& D, const Vector& y) {
    const Index n = sys.n();
    const Index p = sys.p();
    detail::require_length(s.x, n, "x");
    detail::require_length(s.d, p, "d");
    detail::require_shape(s.Pxx, n, n, "Pxx");
    detail::require_shape(s.Pdd, p, p, "Pdd");
    detail::require_shape(s.Pdx, p, n, "Pdx");
    detail::require_shape(D, p, p, "D");
    detail::require_length(y, sys.m(), "measurement");

    const Matrix& F = sys.F();
    const Matrix& G = sys.G();
    const Matrix& H = sys.H();
    const Matrix Pxd = s.Pdx.transpose();

    const Matrix Pdd_pred = s.Pdd + D;
    const Matrix Pdx_pred = s.Pdd * G.transpose() + s.Pdx * F.transpose();
    const Matrix Pxx_pred = symmetric_part(G * s.Pdd * G.transpose() + F * Pxd * G.transpose() +
                                           G * s.Pdx * F.transpose() + F * s.Pxx * F.transpose() + sys.Q());

    const Matrix S = symmetric_part(H * Pxx_pred * H.transpose() + sys.R());
    const auto llt = factor_innovation(S);
    const Matrix Kx = kalman_gain(Pxx_pred, H, llt);
    const Matrix Md = llt.solve(H * Pdx_pred.transpose()).transpose();

    const Vector innovation = y - H * F * s.x - H * G * s.d;

    PartitionedDobState out;
    out.x = F * s.x + G * s.d + Kx * innovation;
    out.d = s.d + Md * innovation;
    out.Pxx = symmetric_part(Pxx_pred - Kx * H * Pxx_pred);
    out.Pdd = symmetric_part(Pdd_pred - Md * H * Pdx_pred.transpose());
    out.Pdx = Pdx_pred - Md * H * Pxx_pred;
    return out;
}

/// NKF-DOB carries x and the most recent lagged disturbance estimate d_{k-1|k}.
struct NkfDobState {
    GaussianBelief x_belief;
    Vector d;
    Matrix d_cov;
    /// M_k of the last step (empty before the first step).
    Matrix input_gain;
};

/**
 * @brief One NKF-DOB step.
 *
 * The disturbance enters as a fresh N(0, D) input each step, so the joint
 * noise [w_{d,k-1}; w_{x,k}] has covariance [[D, D G^T], [G D, Q]]:
 *
 *   P_{k|k-1}  = G D G^T + F P F^T + Q
 *   M_k        = D G^T H^T (H P_{k|k-1} H^T + R)^{-1}
 *   d_{k-1|k}  = M_k (y_k - H F x)
 *   P^d        = (I - M_k H G) D
 */
inline NkfDobState nkf_dob_step(const NkfDobState& s, const LinearSystem& sys, const Matrix& D, const Vector& y) {
    const Index n = sys.n();
    const Index p = sys.p();
    detail::require_length(s.x_belief.mean, n, "x mean");
    detail::require_shape(s.x_belief.cov, n, n, "x covariance");
    detail::require_shape(D, p, p, "D");
    detail::require_length(y, sys.m(), "measurement");

    const Matrix& F = sys.F();
    const Matrix& G = sys.G();
    const Matrix& H = sys.H();

    const Matrix P_pred =
        symmetric_part(G * D * G.transpose() + F * s.x_belief.cov * F.transpose() + sys.Q());
    const Matrix S = symmetric_part(H * P_pred * H.transpose() + sys.R());
    const auto llt = factor_innovation(S);
    const Matrix K = kalman_gain(P_pred, H, llt);
    const Matrix M = llt.solve(H * G * D).transpose();  // D G^T H^T S^{-1}, D symmetric
    const Vector innovation = y - H * F * s.x_belief.mean;

    NkfDobState out;
    out.x_belief.mean = F * s.x_belief.mean + K * innovation;
    out.x_belief.cov = joseph_update(P_pred, K, H, sys.R());
    out.d = M * innovation;
    out.d_cov = symmetric_part((Matrix::Identity(p, p) - M * H * G) * D);
    out.input_gain = M;
    return out;
}

}  // namespace doblab
