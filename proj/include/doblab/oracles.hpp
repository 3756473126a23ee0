#pragma once

// Batch-form Kalman estimators and covariance-mismatch analysis used as
// independent references for the recursive filters.

#include "doblab/core_model.hpp"
#include "doblab/kalman.hpp"

#include <complex>
#include <vector>

namespace doblab {

inline constexpr Index kBatchMaxSteps = 200;
inline constexpr Index kBatchMaxRows = 2000;

/**
 * @brief Stacked model over steps 1..k.
 *
 *   X_{1,k} = Phi_{1,k} x_0 + G_{1,k} W_{1,k}
 *   Y_{1,k} = H_{1,k} x_0 + D_{1,k} W_{1,k} + V_{1,k}
 *
 * with H_{1,k} = Hbar Phi_{1,k}, D_{1,k} = Hbar G_{1,k}, Hbar = diag(H, ..., H).
 */
struct ExtendedModel {
    Index steps = 0;
    Index dim = 0;
    Index meas_dim = 0;
    Matrix Phi_1k;  // (k q) x q, block i is Phi^i
    Matrix G_1k;    // (k q) x (k q), block (i, j) = Phi^{i-j} for j <= i
    Matrix Hbar_1k;
    Matrix H_1k;
    Matrix D_1k;
    Matrix Q_1k;
    Matrix R_1k;

    /// Last block row of G_{1,k}: [Phi^{k-1}, ..., Phi, I].
    Matrix G_last_row() const { return G_1k.bottomRows(dim); }
    /// Phi^k.
    Matrix phi_k() const { return Phi_1k.bottomRows(dim); }
};

inline ExtendedModel build_extended_model(const StateSpaceModel& model, Index k) {
    if (k < 1) throw ModelError("extended model needs at least one step");
    const Index q = model.dim();
    const Index m = model.meas_dim();
    if (k > kBatchMaxSteps || k * q > kBatchMaxRows) {
        throw ModelError("extended model exceeds the batch oracle size cap");
    }
    ExtendedModel ext;
    ext.steps = k;
    ext.dim = q;
    ext.meas_dim = m;

    std::vector<Matrix> powers(static_cast<std::size_t>(k + 1));
    powers[0] = Matrix::Identity(q, q);
    for (Index i = 1; i <= k; ++i) powers[static_cast<std::size_t>(i)] = model.Phi * powers[static_cast<std::size_t>(i - 1)];

    ext.Phi_1k = Matrix::Zero(k * q, q);
    ext.G_1k = Matrix::Zero(k * q, k * q);
    ext.Hbar_1k = Matrix::Zero(k * m, k * q);
    ext.Q_1k = Matrix::Zero(k * q, k * q);
    ext.R_1k = Matrix::Zero(k * m, k * m);
    for (Index i = 0; i < k; ++i) {
        ext.Phi_1k.block(i * q, 0, q, q) = powers[static_cast<std::size_t>(i + 1)];
        for (Index j = 0; j <= i; ++j) ext.G_1k.block(i * q, j * q, q, q) = powers[static_cast<std::size_t>(i - j)];
        ext.Hbar_1k.block(i * m, i * q, m, q) = model.H;
        ext.Q_1k.block(i * q, i * q, q, q) = model.Q;
        ext.R_1k.block(i * m, i * m, m, m) = model.R;
    }
    ext.H_1k = ext.Hbar_1k * ext.Phi_1k;
    ext.D_1k = ext.Hbar_1k * ext.G_1k;
    return ext;
}

/**
 * @brief Batch estimate of x_k from y_1..y_k given x_0 ~ N(x0_mean, x0_cov).
 *
 *   gain = (Phi^k P0 H_{1,k}^T + G^{rk} Q_{1,k} D^T) (H_{1,k} P0 H_{1,k}^T + D Q D^T + R_{1,k})^{-1}
 *   x_k  = gain Y + (Phi^k - gain H_{1,k}) x0_mean
 *
 * With x0_cov = 0 this is the exact-initial-state estimator.
 */
inline Vector batch_kf_estimate(const StateSpaceModel& model, Index k, const Vector& x0_mean, const Matrix& x0_cov,
                                const std::vector<Vector>& Y) {
    if (static_cast<Index>(Y.size()) != k) throw ModelError("batch_kf_estimate: need exactly k measurements");
    detail::require_length(x0_mean, model.dim(), "x0 mean");
    detail::require_shape(x0_cov, model.dim(), model.dim(), "x0 covariance");
    detail::require_psd(x0_cov, "x0 covariance");
    const ExtendedModel ext = build_extended_model(model, k);
    const Index m = model.meas_dim();

    Vector Ystack(k * m);
    for (Index i = 0; i < k; ++i) {
        detail::require_length(Y[static_cast<std::size_t>(i)], m, "measurement");
        Ystack.segment(i * m, m) = Y[static_cast<std::size_t>(i)];
    }

    const Matrix phi_k = ext.phi_k();
    const Matrix cross = phi_k * x0_cov * ext.H_1k.transpose() + ext.G_last_row() * ext.Q_1k * ext.D_1k.transpose();
    const Matrix gram = symmetric_part(ext.H_1k * x0_cov * ext.H_1k.transpose() +
                                       ext.D_1k * ext.Q_1k * ext.D_1k.transpose() + ext.R_1k);
    Eigen::LDLT<Matrix> ldlt(gram);
    if (ldlt.info() != Eigen::Success || !(ldlt.rcond() > 1e-14) || !ldlt.isPositive()) {
        throw NumericalError("batch_kf_estimate: measurement Gram matrix is singular");
    }
    const Matrix gain = ldlt.solve(cross.transpose()).transpose();
    return gain * Ystack + (phi_k - gain * ext.H_1k) * x0_mean;
}

/// Gains K_1..K_k of the Riccati recursion started from P_{0|0} under (Phi, H, Q, R).
inline std::vector<Matrix> riccati_gains(const StateSpaceModel& model, const Matrix& P0, Index k) {
    std::vector<Matrix> gains;
    gains.reserve(static_cast<std::size_t>(k));
    Matrix P = P0;
    for (Index i = 0; i < k; ++i) {
        const Matrix P_pred = symmetric_part(model.Phi * P * model.Phi.transpose() + model.Q);
        const auto llt = factor_innovation(model.H * P_pred * model.H.transpose() + model.R);
        const Matrix K = kalman_gain(P_pred, model.H, llt);
        P = joseph_update(P_pred, K, model.H, model.R);
        gains.push_back(K);
    }
    return gains;
}

/// Response to measurements (x_h, from 0) and to the initial value (x_s, from x0).
struct ResponseDecomposition {
    std::vector<Vector> measurement_response;  // x^h_1..x^h_k
    std::vector<Vector> initial_response;      // x^s_1..x^s_k
};

/**
 * @brief Splits the KF estimate into x^h_k = (I - K H) Phi x^h_{k-1} + K y_k and
 * x^s_k = (I - K H) Phi x^s_{k-1}; their sum is the KF estimate from x0.
 */
inline ResponseDecomposition response_decomposition(const StateSpaceModel& model, Index k, const Vector& x0,
                                                     const Matrix& P0, const std::vector<Vector>& Y) {
    if (static_cast<Index>(Y.size()) != k) throw ModelError("response_decomposition: need exactly k measurements");
    detail::require_length(x0, model.dim(), "x0");
    const auto gains = riccati_gains(model, P0, k);
    const Index q = model.dim();
    const Matrix I = Matrix::Identity(q, q);
    ResponseDecomposition out;
    Vector xh = Vector::Zero(q);
    Vector xs = x0;
    for (Index i = 0; i < k; ++i) {
        const Matrix& K = gains[static_cast<std::size_t>(i)];
        const Matrix closed = (I - K * model.H) * model.Phi;
        xh = closed * xh + K * Y[static_cast<std::size_t>(i)];
        xs = closed * xs;
        out.measurement_response.push_back(xh);
        out.initial_response.push_back(xs);
    }
    return out;
}

/**
 * @brief Propagation of an initial-mean error through a filter tuned with Q_used.
 *
 * Returns x^b_0..x^b_k with x^b_j = (I - K_j H) Phi x^b_{j-1}, where K_j come
 * from the Riccati recursion driven by Q_used (the model's Q is ignored).
 */
inline std::vector<Vector> bias_propagation(const StateSpaceModel& model, const Matrix& Q_used, const Vector& x0_bias,
                                            const Matrix& P0, Index k) {
    detail::require_length(x0_bias, model.dim(), "x0 bias");
    detail::require_shape(Q_used, model.dim(), model.dim(), "Q_used");
    StateSpaceModel used = model;
    used.Q = Q_used;
    const auto gains = riccati_gains(used, P0, k);
    const Matrix I = Matrix::Identity(model.dim(), model.dim());
    std::vector<Vector> out{x0_bias};
    for (const auto& K : gains) out.push_back((I - K * model.H) * model.Phi * out.back());
    return out;
}

/// C_{gamma,k} = ||x^b_k||^2.
inline std::vector<double> convergence_index(const std::vector<Vector>& bias_seq) {
    if (bias_seq.empty()) throw ModelError("convergence_index: empty sequence");
    std::vector<double> out;
    out.reserve(bias_seq.size());
    for (const auto& b : bias_seq) out.push_back(b.squaredNorm());
    return out;
}

/// Ideal, filter-calculated, and true posterior covariance after one step.
struct CovarianceTriple {
    Matrix ideal;
    Matrix filter_calc;
    Matrix true_cov;
    Matrix ideal_gain;
    Matrix filter_gain;
    Matrix prior;  // true predicted covariance Phi P Phi^T + Q
};

/**
 * @brief One step from a common P_{k-1|k-1} under true Q and used Q + dQ.
 *
 * ideal       : Joseph form with the optimal gain for Q
 * filter_calc : Joseph form with K^f computed from Phi P Phi^T + Q + dQ
 * true_cov    : (I - K^f H)(Phi P Phi^T + Q)(I - K^f H)^T + K^f R K^f^T
 */
inline CovarianceTriple covariance_triple_step(const StateSpaceModel& model, const Matrix& P_prev, const Matrix& dQ) {
    const Index q = model.dim();
    detail::require_shape(P_prev, q, q, "P_prev");
    detail::require_shape(dQ, q, q, "dQ");
    CovarianceTriple out;
    out.prior = symmetric_part(model.Phi * P_prev * model.Phi.transpose() + model.Q);
    const Matrix prior_used = symmetric_part(out.prior + dQ);
    out.ideal_gain = kalman_gain(out.prior, model.H, factor_innovation(model.H * out.prior * model.H.transpose() + model.R));
    out.filter_gain =
        kalman_gain(prior_used, model.H, factor_innovation(model.H * prior_used * model.H.transpose() + model.R));
    out.ideal = joseph_update(out.prior, out.ideal_gain, model.H, model.R);
    out.filter_calc = joseph_update(prior_used, out.filter_gain, model.H, model.R);
    out.true_cov = joseph_update(out.prior, out.filter_gain, model.H, model.R);
    return out;
}

/**
 * @brief Closed form of P^t - P for an invertible H:
 *
 *   C R (A + A B^{-1} A)^{-1} A ((A + A B^{-1} A)^{-1})^T R^T C^T
 *
 * with A = H P_{k|k-1} H^T + R, B = H dQ H^T, C = H^T (H H^T)^{-1}. The inverse
 * (A + A B^{-1} A)^{-1} is evaluated as (A + B)^{-1} B A^{-1}, which is the
 * same matrix when B is invertible and stays defined when it is not.
 */
inline Matrix true_excess_closed_form(const StateSpaceModel& model, const Matrix& prior, const Matrix& dQ) {
    const Matrix& H = model.H;
    const Matrix A = symmetric_part(H * prior * H.transpose() + model.R);
    const Matrix B = symmetric_part(H * dQ * H.transpose());
    const Matrix C = H.transpose() * (H * H.transpose()).ldlt().solve(Matrix::Identity(H.rows(), H.rows()));
    const Matrix A_inv = A.ldlt().solve(Matrix::Identity(A.rows(), A.cols()));
    const Matrix core = Matrix(A + B).partialPivLu().solve(B * A_inv);
    const Matrix left = C * model.R * core;
    return symmetric_part(left * A * left.transpose());
}

/// Spectral radius of (I - K H) Phi for the gain reached after `iters` Riccati steps.
inline double closed_loop_spectral_radius(const StateSpaceModel& model, const Matrix& P0, Index iters = 500) {
    const auto gains = riccati_gains(model, P0, iters);
    const Matrix closed = (Matrix::Identity(model.dim(), model.dim()) - gains.back() * model.H) * model.Phi;
    Eigen::EigenSolver<Matrix> es(closed, false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

/**
 * @brief Steady-state true error covariance of a filter tuned with Q + dQ.
 *
 * Iterates the mismatched gain recursion and the true covariance
 * P^t <- (I - K^f H)(Phi P^t Phi^T + Q)(I - K^f H)^T + K^f R K^f^T together.
 */
inline Matrix steady_state_true_covariance(const StateSpaceModel& model, const Matrix& dQ, const Matrix& P0,
                                           Index iters = 2000) {
    Matrix P_filter = P0;
    Matrix P_true = P0;
    for (Index i = 0; i < iters; ++i) {
        const Matrix prior_used = symmetric_part(model.Phi * P_filter * model.Phi.transpose() + model.Q + dQ);
        const Matrix K =
            kalman_gain(prior_used, model.H, factor_innovation(model.H * prior_used * model.H.transpose() + model.R));
        P_filter = joseph_update(prior_used, K, model.H, model.R);
        const Matrix prior_true = symmetric_part(model.Phi * P_true * model.Phi.transpose() + model.Q);
        P_true = joseph_update(prior_true, K, model.H, model.R);
    }
    return P_true;
}

/// Symmetry precondition: X = I + P^o H^T R^{-1} H and Y = (P^u - P^o) H^T R^{-1} H both symmetric.
inline bool gain_complement_terms_symmetric(const Matrix& prior_o, const Matrix& prior_u, const Matrix& H,
                                            const Matrix& R, double tol = 1e-8) {
    const Matrix info = H.transpose() * R.ldlt().solve(H);
    const Matrix X = Matrix::Identity(prior_o.rows(), prior_o.cols()) + prior_o * info;
    const Matrix Y = (prior_u - prior_o) * info;
    return max_abs(X - X.transpose()) <= tol * std::max(1.0, max_abs(X)) &&
           max_abs(Y - Y.transpose()) <= tol * std::max(1.0, max_abs(Y));
}

}  // namespace doblab
