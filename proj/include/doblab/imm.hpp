#pragma once

// Interacting multiple models. IMMKF-DOB runs a bank of KF-DOBs that share
// Phi and H and differ only in the disturbance covariance D_j.

#include "doblab/core_model.hpp"
#include "doblab/kalman.hpp"

#include <cmath>
#include <numbers>
#include <vector>

namespace doblab {

struct ImmState {
    std::vector<GaussianBelief> beliefs;
    Vector mode_probs;
    Matrix transition;  // row-stochastic, transition(i, j) = P(i -> j)

    Index models() const { return static_cast<Index>(beliefs.size()); }

    void validate() const {
        const Index q = models();
        if (q == 0) throw ModelError("ImmState: at least one model is required");
        detail::require_length(mode_probs, q, "mode_probs");
        detail::require_shape(transition, q, q, "transition");
        if (mode_probs.minCoeff() < 0.0 || std::abs(mode_probs.sum() - 1.0) > 1e-12) {
            throw ModelError("ImmState: mode_probs must lie in the probability simplex");
        }
        for (Index i = 0; i < q; ++i) {
            if (transition.row(i).minCoeff() < 0.0 || std::abs(transition.row(i).sum() - 1.0) > 1e-12) {
                throw ModelError("ImmState: transition rows must be probability vectors");
            }
        }
    }
};

struct ImmStep {
    ImmState state;
    GaussianBelief fused;
    Vector likelihoods;
    /// All likelihoods underflowed; mode probabilities were reset to uniform.
    bool underflow = false;
};

inline constexpr double kMixingFloor = 1e-300;

/// N(e; 0, S) with the full (2 pi)^{-m/2} |S|^{-1/2} normalizer.
inline double gaussian_likelihood(const Vector& e, const Eigen::LLT<Matrix>& S) {
    const Matrix L = S.matrixL();
    const Vector z = L.triangularView<Eigen::Lower>().solve(e);
    const double log_det = 2.0 * L.diagonal().array().log().sum();
    const double m = static_cast<double>(e.size());
    return std::exp(-0.5 * z.squaredNorm() - 0.5 * log_det - 0.5 * m * std::log(2.0 * std::numbers::pi));
}

/// Moment-matched Gaussian of a mixture: sum_i w_i (P_i + (x_i - x)(x_i - x)^T).
inline GaussianBelief moment_match(const std::vector<GaussianBelief>& parts, const Vector& weights) {
    const Index dim = parts.front().mean.size();
    GaussianBelief out{Vector::Zero(dim), Matrix::Zero(dim, dim)};
    for (std::size_t i = 0; i < parts.size(); ++i) out.mean += weights(static_cast<Index>(i)) * parts[i].mean;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const Vector dx = parts[i].mean - out.mean;
        out.cov += weights(static_cast<Index>(i)) * (parts[i].cov + dx * dx.transpose());
    }
    out.cov = symmetric_part(out.cov);
    return out;
}

/**
 * @brief One IMM cycle over models (Phi, H, Q_j, R).
 *
 * 1. mixing weights mu_ij = P_ij mu_i / c_j with c_j = sum_i P_ij mu_i (floored at 1e-300)
 * 2. mixed initial moments with the spread-of-means term
 * 3. per-model Kalman step
 * 4. mu_j = Lambda_j c_j / c with Lambda_j the innovation density
 * 5. moment-matched fusion
 */
inline ImmStep imm_step(const ImmState& s, const Matrix& Phi, const Matrix& H, const std::vector<Matrix>& Q_list,
                        const Matrix& R, const Vector& y) {
    s.validate();
    const Index q = s.models();
    if (static_cast<Index>(Q_list.size()) != q) throw ModelError("imm_step: one process covariance per model");

    Vector c_bar = s.transition.transpose() * s.mode_probs;
    c_bar = c_bar.cwiseMax(kMixingFloor);

    std::vector<GaussianBelief> mixed(static_cast<std::size_t>(q));
    for (Index j = 0; j < q; ++j) {
        Vector mix_w(q);
        for (Index i = 0; i < q; ++i) mix_w(i) = s.transition(i, j) * s.mode_probs(i) / c_bar(j);
        mixed[static_cast<std::size_t>(j)] = moment_match(s.beliefs, mix_w);
    }

    ImmStep out;
    out.state.transition = s.transition;
    out.state.beliefs.resize(static_cast<std::size_t>(q));
    out.likelihoods.resize(q);
    for (Index j = 0; j < q; ++j) {
        const auto uj = static_cast<std::size_t>(j);
        const KalmanStep ks = kf_update(kf_predict(mixed[uj], Phi, Q_list[uj]), H, R, y);
        out.state.beliefs[uj] = ks.posterior;
        out.likelihoods(j) = gaussian_likelihood(ks.innovation, factor_innovation(ks.innovation_cov));
    }

    const Vector unnormalized = out.likelihoods.cwiseProduct(c_bar);
    const double c = unnormalized.sum();
    if (c > 0.0 && std::isfinite(c)) {
        out.state.mode_probs = unnormalized / c;
    } else {
        out.state.mode_probs = Vector::Constant(q, 1.0 / static_cast<double>(q));
        out.underflow = true;
    }
    out.fused = moment_match(out.state.beliefs, out.state.mode_probs);
    return out;
}

struct ImmDobStep {
    ImmState state;
    GaussianBelief fused;
    Vector d_hat;
    Matrix d_cov;
    bool underflow = false;
};

/// Initial bank: every model starts at [0; x] with covariance diag(D_j, P_x).
inline ImmState immkf_dob_initial_state(const GaussianBelief& x_belief, const std::vector<Matrix>& D_list,
                                        const Matrix& transition, const Vector& mode_probs) {
    ImmState s;
    s.transition = transition;
    s.mode_probs = mode_probs;
    for (const auto& D : D_list) {
        GaussianBelief b;
        b.mean = Vector::Zero(D.rows() + x_belief.mean.size());
        b.mean.tail(x_belief.mean.size()) = x_belief.mean;
        b.cov = block_diag(D, x_belief.cov);
        s.beliefs.push_back(std::move(b));
    }
    s.validate();
    return s;
}

/// IMMKF-DOB: model j uses process covariance diag(D_j, Q_x) on augment(sys, .).
inline ImmDobStep immkf_dob_step(const ImmState& s, const LinearSystem& sys, const std::vector<Matrix>& D_list,
                                 const Matrix& Q_x, const Matrix& R, const Vector& y) {
    if (static_cast<Index>(D_list.size()) != s.models()) {
        throw ModelError("immkf_dob_step: D_list length must equal the number of models");
    }
    if (D_list.empty()) throw ModelError("immkf_dob_step: at least one model is required");
    detail::require_shape(Q_x, sys.n(), sys.n(), "Q_x");
    detail::require_shape(R, sys.m(), sys.m(), "R");
    const AugmentedModel aug = augment(sys, D_list.front());
    std::vector<Matrix> Q_list;
    Q_list.reserve(D_list.size());
    for (const auto& D : D_list) {
        detail::require_shape(D, sys.p(), sys.p(), "D_j");
        Q_list.push_back(block_diag(D, Q_x));
    }
    for (const auto& b : s.beliefs) {
        if (b.mean.size() != aug.Phi.rows()) throw ModelError("immkf_dob_step: belief dimension must be p + n");
    }

    ImmStep step = imm_step(s, aug.Phi, aug.Haug, Q_list, R, y);
    const Index p = sys.p();
    ImmDobStep out;
    out.d_hat = step.fused.mean.head(p);
    out.d_cov = step.fused.cov.topLeftCorner(p, p);
    out.state = std::move(step.state);
    out.fused = std::move(step.fused);
    out.underflow = step.underflow;
    return out;
}

}  // namespace doblab
