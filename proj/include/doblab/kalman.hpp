#pragma once

// Standard Kalman recursion used as the building block of every observer.

#include "doblab/core_model.hpp"

#include <sstream>

namespace doblab {

namespace detail {

inline double condition_estimate(const Matrix& s) {
    Eigen::JacobiSVD<Matrix> svd(s);
    const auto& sv = svd.singularValues();
    if (sv.size() == 0) return 0.0;
    const double lo = sv(sv.size() - 1);
    return lo == 0.0 ? std::numeric_limits<double>::infinity() : sv(0) / lo;
}

}  // namespace detail

/// LLT of an innovation covariance; throws NumericalError when S is not
/// safely invertible, reporting its condition number.
inline Eigen::LLT<Matrix> factor_innovation(const Matrix& S) {
    Eigen::LLT<Matrix> llt(symmetric_part(S));
    if (llt.info() != Eigen::Success || !(llt.rcond() > 1e-15)) {
        std::ostringstream os;
        os << "innovation covariance is not invertible (condition estimate "
           << detail::condition_estimate(S) << ")";
        throw NumericalError(os.str());
    }
    return llt;
}

/// K = P H^T S^{-1}, computed as (S^{-1} H P)^T for symmetric P.
inline Matrix kalman_gain(const Matrix& P, const Matrix& H, const Eigen::LLT<Matrix>& S) {
    return S.solve(H * P).transpose();
}

/// (I - K H) P (I - K H)^T + K R K^T, symmetrized.
inline Matrix joseph_update(const Matrix& P, const Matrix& K, const Matrix& H, const Matrix& R) {
    const Matrix A = Matrix::Identity(P.rows(), P.cols()) - K * H;
    return symmetric_part(A * P * A.transpose() + K * R * K.transpose());
}

struct KalmanStep {
    GaussianBelief predicted;
    GaussianBelief posterior;
    Matrix gain;
    Vector innovation;
    Matrix innovation_cov;
};

inline GaussianBelief kf_predict(const GaussianBelief& belief, const Matrix& Phi, const Matrix& Q) {
    return {Phi * belief.mean, symmetric_part(Phi * belief.cov * Phi.transpose() + Q)};
}

/// Measurement update of an already-predicted belief.
inline KalmanStep kf_update(const GaussianBelief& predicted, const Matrix& H, const Matrix& R,
                            const Vector& y) {
    detail::require_length(y, H.rows(), "measurement");
    KalmanStep out;
    out.predicted = predicted;
    out.innovation = y - H * predicted.mean;
    out.innovation_cov = symmetric_part(H * predicted.cov * H.transpose() + R);
    const auto llt = factor_innovation(out.innovation_cov);
    out.gain = kalman_gain(predicted.cov, H, llt);
    out.posterior.mean = predicted.mean + out.gain * out.innovation;
    out.posterior.cov = joseph_update(predicted.cov, out.gain, H, R);
    return out;
}

inline KalmanStep kf_step_detailed(const GaussianBelief& belief, const Matrix& Phi, const Matrix& H,
                                   const Matrix& Q, const Matrix& R, const Vector& y) {
    const Index q = belief.mean.size();
    detail::require_shape(belief.cov, q, q, "belief covariance");
    detail::require_shape(Phi, q, q, "Phi");
    detail::require_shape(Q, q, q, "Q");
    if (H.cols() != q) throw ModelError("H column count does not match the belief dimension");
    detail::require_shape(R, H.rows(), H.rows(), "R");
    return kf_update(kf_predict(belief, Phi, Q), H, R, y);
}

/// One predict + update cycle with a Joseph-form posterior covariance.
inline GaussianBelief kf_step(const GaussianBelief& belief, const Matrix& Phi, const Matrix& H,
                              const Matrix& Q, const Matrix& R, const Vector& y) {
    return kf_step_detailed(belief, Phi, H, Q, R, y).posterior;
}

inline GaussianBelief kf_step(const GaussianBelief& belief, const StateSpaceModel& model, const Vector& y) {
    return kf_step(belief, model.Phi, model.H, model.Q, model.R, y);
}

}  // namespace doblab
