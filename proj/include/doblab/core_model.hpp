#pragma once

// State-space and belief types shared by every estimator in doblab.
//
// Augmented states are always ordered [disturbance; state], i.e. the p
// disturbance channels come first and the n plant states follow.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace doblab {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Thrown when a model, belief, or configuration violates its invariants.
class ModelError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Thrown when a numerical step cannot proceed (singular innovation
/// covariance, failed factorization, unobservable disturbance).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr double kPsdTolerance = 1e-10;
inline constexpr double kCholeskyJitter = 1e-12;

inline Matrix symmetric_part(const Matrix& a) { return 0.5 * (a + a.transpose()); }

inline double max_abs(const Matrix& a) { return a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff(); }

/// Smallest eigenvalue of the symmetric part of `a` (+inf for an empty matrix).
inline double min_eigenvalue(const Matrix& a) {
    if (a.size() == 0) return std::numeric_limits<double>::infinity();
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetric_part(a), Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

// Tolerances scale with the magnitude of the matrix once it exceeds unity;
// for unit-scale covariances they are the absolute 1e-10 used throughout.
inline double scaled_tolerance(const Matrix& a, double tol = kPsdTolerance) {
    return tol * std::max(1.0, max_abs(a));
}

inline bool is_symmetric(const Matrix& a, double tol = kPsdTolerance) {
    return a.rows() == a.cols() && max_abs(a - a.transpose()) <= scaled_tolerance(a, tol);
}

inline bool is_psd(const Matrix& a, double tol = kPsdTolerance) {
    return is_symmetric(a, tol) && min_eigenvalue(a) >= -scaled_tolerance(a, tol);
}

inline bool is_pd(const Matrix& a, double tol = kPsdTolerance) {
    return is_symmetric(a, tol) && min_eigenvalue(a) > scaled_tolerance(a, tol) * 1e-6;
}

namespace detail {

inline std::string shape_string(const Matrix& a) {
    std::ostringstream os;
    os << a.rows() << "x" << a.cols();
    return os.str();
}

inline void require_shape(const Matrix& a, Index rows, Index cols, std::string_view what) {
    if (a.rows() != rows || a.cols() != cols) {
        std::ostringstream os;
        os << what << " has shape " << shape_string(a) << ", expected " << rows << "x" << cols;
        throw ModelError(os.str());
    }
}

inline void require_length(const Vector& v, Index len, std::string_view what) {
    if (v.size() != len) {
        std::ostringstream os;
        os << what << " has length " << v.size() << ", expected " << len;
        throw ModelError(os.str());
    }
}

inline void require_psd(const Matrix& a, std::string_view what) {
    if (!is_symmetric(a)) throw ModelError(std::string(what) + " is not symmetric");
    const double lo = min_eigenvalue(a);
    if (lo < -scaled_tolerance(a)) {
        std::ostringstream os;
        os << what << " is not positive semi-definite (min eigenvalue " << lo << ")";
        throw ModelError(os.str());
    }
}

inline void require_pd(const Matrix& a, std::string_view what) {
    require_psd(a, what);
    Eigen::LLT<Matrix> llt(symmetric_part(a));
    if (llt.info() != Eigen::Success) {
        throw ModelError(std::string(what) + " is not positive definite");
    }
}

inline Index numerical_rank(const Matrix& a) {
    if (a.size() == 0) return 0;
    Eigen::ColPivHouseholderQR<Matrix> qr(a);
    qr.setThreshold(1e-10);
    return qr.rank();
}

}  // namespace detail

/// Block-diagonal composition diag(a, b).
inline Matrix block_diag(const Matrix& a, const Matrix& b) {
    Matrix out = Matrix::Zero(a.rows() + b.rows(), a.cols() + b.cols());
    out.topLeftCorner(a.rows(), a.cols()) = a;
    out.bottomRightCorner(b.rows(), b.cols()) = b;
    return out;
}

/**
 * @brief Time-invariant linear system with an unknown input.
 *
 *   x_k = F x_{k-1} + G d_{k-1} + w_k,   w_k ~ N(0, Q)
 *   y_k = H x_k + v_k,                   v_k ~ N(0, R)
 *
 * Construction validates dimensions, Q PSD, R PD, and that the disturbance
 * is observable through the measurements: rank(H G) = rank(G) = p.
 */
class LinearSystem {
public:
    LinearSystem(Matrix F, Matrix G, Matrix H, Matrix Q, Matrix R)
        : F_(std::move(F)), G_(std::move(G)), H_(std::move(H)), Q_(std::move(Q)), R_(std::move(R)) {
        const Index n = F_.rows();
        if (n == 0) throw ModelError("F must be non-empty");
        detail::require_shape(F_, n, n, "F");
        if (G_.rows() != n || G_.cols() == 0) {
            throw ModelError("G has shape " + detail::shape_string(G_) + ", expected " +
                             std::to_string(n) + "xp with p >= 1");
        }
        if (H_.cols() != n || H_.rows() == 0) {
            throw ModelError("H has shape " + detail::shape_string(H_) + ", expected mx" +
                             std::to_string(n) + " with m >= 1");
        }
        detail::require_shape(Q_, n, n, "Q");
        detail::require_shape(R_, H_.rows(), H_.rows(), "R");
        detail::require_psd(Q_, "Q");
        detail::require_pd(R_, "R");
        const Index p = G_.cols();
        if (detail::numerical_rank(G_) != p) throw ModelError("rank(G) must equal p");
        if (detail::numerical_rank(H_ * G_) != p) {
            throw ModelError("rank(H*G) must equal p: disturbance is not observable");
        }
    }

    const Matrix& F() const { return F_; }
    const Matrix& G() const { return G_; }
    const Matrix& H() const { return H_; }
    const Matrix& Q() const { return Q_; }
    const Matrix& R() const { return R_; }

    Index n() const { return F_.rows(); }
    Index m() const { return H_.rows(); }
    Index p() const { return G_.cols(); }

    /// Copy with replaced noise covariances (validated again).
    LinearSystem with_noise(Matrix Q, Matrix R) const { return {F_, G_, H_, std::move(Q), std::move(R)}; }

private:
    Matrix F_, G_, H_, Q_, R_;
};

/// Generic linear-Gaussian model x_k = Phi x_{k-1} + w_k, y_k = H x_k + v_k.
struct StateSpaceModel {
    Matrix Phi;
    Matrix H;
    Matrix Q;
    Matrix R;

    Index dim() const { return Phi.rows(); }
    Index meas_dim() const { return H.rows(); }
};

/**
 * @brief Disturbance-augmented model for the state [d; x].
 *
 *   Phi  = [[I, 0], [G, F]]
 *   Haug = [0, H]
 *   Qaug = diag(D, Q)
 */
struct AugmentedModel {
    Matrix Phi;
    Matrix Haug;
    Matrix Qaug;
    Index p = 0;
    Index n = 0;

    Matrix F_block() const { return Phi.bottomRightCorner(n, n); }
    Matrix G_block() const { return Phi.bottomLeftCorner(n, p); }
    Matrix H_block() const { return Haug.rightCols(n); }
    Matrix D_block() const { return Qaug.topLeftCorner(p, p); }

    StateSpaceModel with_measurement_noise(const Matrix& R) const { return {Phi, Haug, Qaug, R}; }
};

inline AugmentedModel augment(const LinearSystem& sys, const Matrix& D) {
    const Index n = sys.n();
    const Index p = sys.p();
    detail::require_shape(D, p, p, "D (disturbance covariance block)");
    detail::require_psd(D, "D (disturbance covariance block)");

    AugmentedModel out;
    out.p = p;
    out.n = n;
    out.Phi = Matrix::Zero(p + n, p + n);
    out.Phi.topLeftCorner(p, p).setIdentity();
    out.Phi.bottomLeftCorner(n, p) = sys.G();
    out.Phi.bottomRightCorner(n, n) = sys.F();
    out.Haug = Matrix::Zero(sys.m(), p + n);
    out.Haug.rightCols(n) = sys.H();
    out.Qaug = block_diag(D, sys.Q());
    return out;
}

/// Mean and covariance; the state of every filter in the library.
struct GaussianBelief {
    Vector mean;
    Matrix cov;

    Index dim() const { return mean.size(); }
};

/// Throws ModelError unless cov is square, matches mean, and is symmetric PSD.
inline void validate(const GaussianBelief& b, std::string_view what = "belief") {
    detail::require_shape(b.cov, b.mean.size(), b.mean.size(), std::string(what) + " covariance");
    detail::require_psd(b.cov, std::string(what) + " covariance");
}

/**
 * @brief Lower-triangular factor B with B * B^T = A.
 *
 * A numerically semi-definite input gets a single 1e-12 * I jitter before the
 * factorization is retried. Non-symmetric or indefinite input throws.
 */
inline Matrix cholesky_factor(const Matrix& a) {
    if (a.rows() != a.cols()) throw ModelError("cholesky_factor: matrix is not square");
    if (!is_symmetric(a)) throw ModelError("cholesky_factor: matrix is not symmetric");
    const Matrix sym = symmetric_part(a);
    Eigen::LLT<Matrix> llt(sym);
    if (llt.info() != Eigen::Success) {
        llt.compute(sym + kCholeskyJitter * Matrix::Identity(a.rows(), a.cols()));
        if (llt.info() != Eigen::Success) {
            std::ostringstream os;
            os << "cholesky_factor: matrix is indefinite (most negative eigenvalue "
               << min_eigenvalue(sym) << ")";
            throw NumericalError(os.str());
        }
    }
    return llt.matrixL();
}

}  // namespace doblab
