#include "test_support.hpp"

#include "doblab/random_models.hpp"
#include "doblab/verify.hpp"

#include <vector>

using namespace doblab;
using namespace doblab::testing;

namespace {

StateSpaceModel augmented_tracking_model(double D = kDefaultNominalD) {
    const LinearSystem sys = default_tracking_system();
    const AugmentedModel aug = augment(sys, scalar(D));
    return {aug.Phi, aug.Haug, aug.Qaug, sys.R()};
}

Matrix augmented_initial_cov() { return block_diag(nominal_D(), 1e-2 * Matrix::Identity(2, 2)); }

std::vector<Vector> noisy_measurements(const StateSpaceModel& m, RandomSource& rs, Index k) {
    std::vector<Vector> Y;
    Vector x = rs.vector(m.dim());
    const Matrix Lq = sampling_factor(m.Q), Lr = sampling_factor(m.R);
    for (Index i = 0; i < k; ++i) {
        x = m.Phi * x + Lq * rs.vector(m.dim());
        Y.push_back(m.H * x + Lr * rs.vector(m.meas_dim()));
    }
    return Y;
}

struct DirectionTally {
    Index compared = 0;
    Index skipped = 0;
    Index violations = 0;
};

// Bias sequences with Q (o) and Q + dQ (u); instances whose gain-complement
// terms are not symmetric at some step are skipped.
void tally_direction(const StateSpaceModel& model, const Matrix& dQ, const Matrix& P0, const Vector& b0, Index steps,
                     bool u_faster, DirectionTally& t) {
    StateSpaceModel used = model;
    used.Q = model.Q + dQ;
    Matrix Po = P0, Pu = P0;
    for (Index i = 0; i < steps; ++i) {
        const Matrix prior_o = symmetric_part(model.Phi * Po * model.Phi.transpose() + model.Q);
        const Matrix prior_u = symmetric_part(used.Phi * Pu * used.Phi.transpose() + used.Q);
        if (!gain_complement_terms_symmetric(prior_o, prior_u, model.H, model.R)) {
            ++t.skipped;
            return;
        }
        Po = kf_update({Vector::Zero(model.dim()), prior_o}, model.H, model.R, Vector::Zero(model.meas_dim()))
                 .posterior.cov;
        Pu = kf_update({Vector::Zero(model.dim()), prior_u}, model.H, model.R, Vector::Zero(model.meas_dim()))
                 .posterior.cov;
    }
    const auto co = convergence_index(bias_propagation(model, model.Q, b0, P0, steps));
    const auto cu = convergence_index(bias_propagation(model, used.Q, b0, P0, steps));
    ++t.compared;
    for (std::size_t k = 0; k < co.size(); ++k) {
        const double slack = 1e-12 * std::max(co[k], cu[k]);
        if (u_faster ? cu[k] > co[k] + slack : co[k] > cu[k] + slack) ++t.violations;
    }
}

}  // namespace

// ---- extended model and batch estimator --------------------------------------

TEST(ExtendedModel, BlockStructure) {
    RandomSource rs(31);
    const StateSpaceModel m = random_state_space(rs);
    const Index q = m.dim(), k = 6;
    const ExtendedModel ext = build_extended_model(m, k);
    Matrix power = Matrix::Identity(q, q);
    for (Index i = 0; i < k; ++i) {
        power = m.Phi * power;
        EXPECT_LE(max_abs(ext.Phi_1k.block(i * q, 0, q, q) - power), 1e-15);
        for (Index j = i + 1; j < k; ++j) EXPECT_EQ(max_abs(ext.G_1k.block(i * q, j * q, q, q)), 0.0);
        EXPECT_EQ(ext.G_1k.block(i * q, i * q, q, q), Matrix::Identity(q, q));
    }
    EXPECT_EQ(ext.H_1k, ext.Hbar_1k * ext.Phi_1k);
    EXPECT_EQ(ext.D_1k, ext.Hbar_1k * ext.G_1k);
    EXPECT_EQ(ext.phi_k(), ext.Phi_1k.bottomRows(q));
}

TEST(ExtendedModel, RejectsOversizedRequests) {
    RandomSource rs(32);
    const StateSpaceModel m = random_state_space(rs);
    EXPECT_THROW(build_extended_model(m, 0), ModelError);
    EXPECT_THROW(build_extended_model(m, kBatchMaxSteps + 1), ModelError);
    const StateSpaceModel wide{0.5 * Matrix::Identity(20, 20), Matrix::Identity(20, 20), Matrix::Identity(20, 20),
                               Matrix::Identity(20, 20)};
    EXPECT_THROW(build_extended_model(wide, 150), ModelError);
}

TEST(BatchKf, SingleStepIsOneKalmanUpdate) {
    RandomSource rs(33);
    for (int i = 0; i < 20; ++i) {
        const StateSpaceModel m = random_state_space(rs);
        const GaussianBelief prior{rs.vector(m.dim()), rs.spd(m.dim())};
        const Vector y = rs.vector(m.meas_dim());
        const GaussianBelief post = kf_step(prior, m, y);
        EXPECT_LE(max_abs(batch_kf_estimate(m, 1, prior.mean, prior.cov, {y}) - post.mean), 1e-10);
    }
}

TEST(BatchKf, NoiseFreeExactInitialStateIsPropagated) {
    const Matrix Phi = mat({{0.9, 0.2}, {-0.1, 0.8}});
    const StateSpaceModel m{Phi, mat({{1.0, 0.5}}), 1e-12 * Matrix::Identity(2, 2), scalar(1e-12)};
    const Vector x0 = vec({1.0, -2.0});
    std::vector<Vector> Y;
    Vector x = x0;
    for (int k = 0; k < 10; ++k) {
        x = Phi * x;
        Y.push_back(m.H * x);
    }
    EXPECT_LE(max_abs(batch_kf_estimate(m, 10, x0, Matrix::Zero(2, 2), Y) - x), 1e-8);
}

TEST(BatchKf, MatchesRecursiveFilterOnTwoStateSystem) {
    RandomSource rs(34);
    const StateSpaceModel m{rs.contraction(2, 0.95), rs.matrix(1, 2), rs.spd(2), rs.spd(1)};
    const GaussianBelief prior{rs.vector(2), rs.spd(2)};
    const auto Y = noisy_measurements(m, rs, 20);
    GaussianBelief b = prior;
    for (const auto& y : Y) b = kf_step(b, m, y);
    EXPECT_LE(max_abs(batch_kf_estimate(m, 20, prior.mean, prior.cov, Y) - b.mean), 1e-8);
}

TEST(BatchKf, SingularGramIsReported) {
    const StateSpaceModel m{Matrix::Identity(2, 2), mat({{1.0, 0.0}}), Matrix::Zero(2, 2), scalar(0.0)};
    EXPECT_THROW(batch_kf_estimate(m, 2, vec({0, 0}), Matrix::Zero(2, 2), {vec({1}), vec({1})}), NumericalError);
}

TEST(BatchKf, RejectsWrongMeasurementCount) {
    RandomSource rs(35);
    const StateSpaceModel m = random_state_space(rs);
    EXPECT_THROW(batch_kf_estimate(m, 3, Vector::Zero(m.dim()), rs.spd(m.dim()), {Vector::Zero(m.meas_dim())}),
                 ModelError);
}

// ---- response decomposition --------------------------------------------------

TEST(ResponseDecomposition, ZeroInitialStateHasNoInitialResponse) {
    RandomSource rs(36);
    const StateSpaceModel m = random_state_space(rs);
    const auto Y = noisy_measurements(m, rs, 15);
    const auto r = response_decomposition(m, 15, Vector::Zero(m.dim()), rs.spd(m.dim()), Y);
    for (const auto& xs : r.initial_response) EXPECT_EQ(max_abs(xs), 0.0);
}

TEST(ResponseDecomposition, ZeroMeasurementsHaveNoMeasurementResponse) {
    RandomSource rs(37);
    const StateSpaceModel m = random_state_space(rs);
    const std::vector<Vector> Y(15, Vector::Zero(m.meas_dim()));
    const auto r = response_decomposition(m, 15, rs.vector(m.dim()), rs.spd(m.dim()), Y);
    for (const auto& xh : r.measurement_response) EXPECT_EQ(max_abs(xh), 0.0);
}

TEST(ResponseDecomposition, SuperpositionMatchesRecursiveFilter) {
    RandomSource rs(38);
    for (int i = 0; i < 10; ++i) {
        const StateSpaceModel m = random_state_space(rs);
        const GaussianBelief prior{rs.vector(m.dim()), rs.spd(m.dim())};
        const auto Y = noisy_measurements(m, rs, 50);
        const auto r = response_decomposition(m, 50, prior.mean, prior.cov, Y);
        GaussianBelief b = prior;
        double worst = 0.0;
        for (std::size_t k = 0; k < Y.size(); ++k) {
            b = kf_step(b, m, Y[k]);
            worst = std::max(worst, max_abs(r.measurement_response[k] + r.initial_response[k] - b.mean));
        }
        EXPECT_LE(worst, 1e-9);
    }
}

TEST(ResponseDecomposition, InitialResponseDecaysOnTrackingSystem) {
    const StateSpaceModel m = augmented_tracking_model();
    const Matrix P0 = augmented_initial_cov();
    ASSERT_LT(closed_loop_spectral_radius(m, P0), 1.0);
    const Vector x0 = vec({8.0, 1.0, -0.5});
    const std::vector<Vector> Y(200, Vector::Zero(2));
    const auto r = response_decomposition(m, 200, x0, P0, Y);
    EXPECT_LE(r.initial_response.back().norm(), 1e-3 * x0.norm());
}

TEST(ClosedLoop, TrackingFiltersAreStable) {
    const LinearSystem sys = default_tracking_system();
    EXPECT_LT(closed_loop_spectral_radius({sys.F(), sys.H(), sys.Q(), sys.R()}, 1e-2 * Matrix::Identity(2, 2)), 1.0);
    EXPECT_LT(closed_loop_spectral_radius(augmented_tracking_model(), augmented_initial_cov()), 1.0);
}

// ---- bias propagation and convergence index ----------------------------------

TEST(BiasPropagation, ZeroInitialBiasStaysZero) {
    const StateSpaceModel m = augmented_tracking_model();
    const auto seq = bias_propagation(m, m.Q, Vector::Zero(3), augmented_initial_cov(), 30);
    ASSERT_EQ(seq.size(), 31u);
    for (const auto& b : seq) EXPECT_EQ(max_abs(b), 0.0);
}

TEST(BiasPropagation, HugeCovarianceRemovesBiasInOneStep) {
    RandomSource rs(39);
    for (int i = 0; i < 20; ++i) {
        const Index q = rs.integer(1, 3);
        const StateSpaceModel m{rs.contraction(q, 0.95), rs.matrix(q + 1, q), rs.spd(q), rs.spd(q + 1)};
        const Vector b0 = rs.vector(q);
        const auto seq = bias_propagation(m, m.Q + 1e12 * Matrix::Identity(q, q), b0, rs.spd(q), 1);
        EXPECT_LE(seq[1].norm(), 1e-4 * b0.norm());
    }
}

TEST(BiasPropagation, LargerDisturbanceCovarianceConvergesFaster) {
    const StateSpaceModel m = augmented_tracking_model();
    const Matrix P0 = augmented_initial_cov();
    const Vector b0 = vec({8.0, 0.0, 0.0});
    auto Q_for = [&](double eta) { return block_diag(scalar(eta * kDefaultNominalD), m.Q.bottomRightCorner(2, 2)); };
    const auto c0 = convergence_index(bias_propagation(m, Q_for(1.0), b0, P0, 300));
    const auto c3 = convergence_index(bias_propagation(m, Q_for(std::exp(3.0)), b0, P0, 300));
    for (std::size_t k = 1; k < c0.size(); ++k) EXPECT_LE(c3[k], c0[k]) << "step " << k;
}

TEST(ConvergenceIndex, Values) {
    const auto zero = convergence_index({Vector::Zero(2), Vector::Zero(2)});
    EXPECT_EQ(zero, (std::vector<double>{0.0, 0.0}));
    const auto unit = convergence_index({vec({0.6, 0.8}), vec({0.0, 0.0})});
    EXPECT_NEAR(unit[0], 1.0, 1e-15);
    EXPECT_THROW(convergence_index({}), ModelError);
}

TEST(ConvergenceIndex, ScalarChainByHand) {
    // P0 = 1, Q = R = 1: gains 2/3 then 5/8
    const StateSpaceModel m{scalar(1.0), scalar(1.0), scalar(1.0), scalar(1.0)};
    const auto c = convergence_index(bias_propagation(m, m.Q, vec({3.0}), scalar(1.0), 2));
    ASSERT_EQ(c.size(), 3u);
    EXPECT_NEAR(c[0], 9.0, 1e-14);
    EXPECT_NEAR(c[1], 1.0, 1e-14);
    EXPECT_NEAR(c[2], 9.0 / 64.0, 1e-14);
}

TEST(ConvergenceIndex, OverstatedCovarianceConvergesNoSlowerOnDiagonalFamily) {
    RandomSource rs(40);
    DirectionTally up, down;
    for (int i = 0; i < 50; ++i) {
        const Index q = rs.integer(1, 3);
        Vector phi(q), qd(q), pd(q), dq(q);
        for (Index j = 0; j < q; ++j) {
            phi(j) = 0.5 + 0.6 * rs.uniform();
            qd(j) = 0.1 + rs.uniform();
            pd(j) = 0.1 + rs.uniform();
            dq(j) = rs.uniform() * qd(j) * 0.9;
        }
        const StateSpaceModel m{phi.asDiagonal(), Matrix::Identity(q, q), qd.asDiagonal(),
                                (0.2 + rs.uniform()) * Matrix::Identity(q, q)};
        const Matrix P0 = pd.asDiagonal();
        const Vector b0 = rs.vector(q);
        tally_direction(m, Matrix(dq.asDiagonal()), P0, b0, 40, true, up);
        tally_direction(m, -Matrix(dq.asDiagonal()), P0, b0, 40, false, down);
    }
    EXPECT_EQ(up.skipped, 0);
    EXPECT_EQ(down.skipped, 0);
    EXPECT_EQ(up.violations, 0);
    EXPECT_EQ(down.violations, 0);
}

TEST(ConvergenceIndex, DirectionOnTrackingSystemWhereSymmetryHolds) {
    const StateSpaceModel m = augmented_tracking_model();
    const Matrix P0 = augmented_initial_cov();
    DirectionTally up, down;
    for (double eta : {std::exp(1.0), std::exp(3.0), std::exp(5.0)}) {
        const Matrix dQ = block_diag(scalar((eta - 1.0) * kDefaultNominalD), Matrix::Zero(2, 2));
        for (const Vector& b0 : {vec({8.0, 0.0, 0.0}), vec({-3.0, 0.1, 0.2})}) {
            tally_direction(m, dQ, P0, b0, 100, true, up);
            tally_direction(m, -dQ / eta, P0, b0, 100, false, down);
        }
    }
    RecordProperty("instances_compared", static_cast<int>(up.compared + down.compared));
    RecordProperty("instances_skipped", static_cast<int>(up.skipped + down.skipped));
    EXPECT_EQ(up.compared + up.skipped, 6);
    EXPECT_EQ(up.violations, 0);
    EXPECT_EQ(down.violations, 0);
}

// ---- covariance triple ------------------------------------------------------

TEST(CovarianceTriple, NoMismatchGivesEqualCovariances) {
    RandomSource rs(41);
    const StateSpaceModel m = random_state_space(rs);
    const CovarianceTriple t = covariance_triple_step(m, rs.spd(m.dim()), Matrix::Zero(m.dim(), m.dim()));
    EXPECT_LE(max_abs(t.ideal - t.filter_calc), 1e-12);
    EXPECT_LE(max_abs(t.ideal - t.true_cov), 1e-12);
}

TEST(CovarianceTriple, OverstatedCovarianceOrdering) {
    RandomSource rs(42);
    for (int i = 0; i < 30; ++i) {
        const StateSpaceModel m = random_state_space(rs);
        const CovarianceTriple t = covariance_triple_step(m, rs.spd(m.dim()), 0.5 * m.Q);
        EXPECT_GE(min_eigenvalue(t.filter_calc - t.true_cov), -1e-12);
        EXPECT_GE(min_eigenvalue(t.true_cov - t.ideal), -1e-12);
        EXPECT_TRUE(is_psd(t.ideal) && is_psd(t.filter_calc) && is_psd(t.true_cov));
    }
}

TEST(CovarianceTriple, MonotoneInMismatch) {
    RandomSource rs(43);
    for (int i = 0; i < 30; ++i) {
        const StateSpaceModel m = random_state_space(rs);
        const Matrix P = rs.spd(m.dim());
        const CovarianceTriple t1 = covariance_triple_step(m, P, 0.2 * m.Q);
        const CovarianceTriple t2 = covariance_triple_step(m, P, 0.8 * m.Q);
        EXPECT_GE(min_eigenvalue(t2.true_cov - t1.true_cov), -1e-12);
        EXPECT_GE(min_eigenvalue(t2.filter_calc - t1.filter_calc), -1e-12);
    }
}

TEST(CovarianceTriple, ScaledMismatchOrderingsOnRandomTriples) {
    const CheckResult r = check_covariance_orderings(50, 1e-9);
    EXPECT_TRUE(r.pass) << r.detail;
}

TEST(CovarianceTriple, TrueCovarianceNeedNotGrowAlongNonProportionalMismatch) {
    // dQ1 <= dQ2 but H dQ1 H^T and H dQ2 H^T do not commute
    const StateSpaceModel m{Matrix::Identity(2, 2), Matrix::Identity(2, 2), Matrix::Identity(2, 2),
                            Matrix::Identity(2, 2)};
    const Matrix P_prev = Matrix::Zero(2, 2);
    const Matrix dQ1 = mat({{1.0, 0.0}, {0.0, 0.0}});
    const Matrix dQ2 = dQ1 + 10.0 * mat({{0.5, 0.5}, {0.5, 0.5}});
    ASSERT_GE(min_eigenvalue(dQ2 - dQ1), 0.0);
    const CovarianceTriple t1 = covariance_triple_step(m, P_prev, dQ1);
    const CovarianceTriple t2 = covariance_triple_step(m, P_prev, dQ2);
    EXPECT_GE(min_eigenvalue(t2.filter_calc - t1.filter_calc), -1e-12);
    EXPECT_LT(min_eigenvalue(t2.true_cov - t1.true_cov), -1e-6);
}

TEST(CovarianceTriple, TrueExcessMatchesClosedFormForSquareH) {
    RandomSource rs(44);
    for (int i = 0; i < 50; ++i) {
        const Index q = rs.integer(1, 3);
        const StateSpaceModel m{rs.contraction(q, 0.95), rs.matrix(q, q) + 2.0 * Matrix::Identity(q, q), rs.spd(q),
                                rs.spd(q)};
        const Matrix dQ = rs.psd(q, rs.integer(1, q));
        const CovarianceTriple t = covariance_triple_step(m, rs.spd(q), dQ);
        EXPECT_LE(max_abs((t.true_cov - t.ideal) - true_excess_closed_form(m, t.prior, dQ)), 1e-8);
    }
}

TEST(CovarianceTriple, TrueExcessMatchesClosedFormInMeasurementSpace) {
    RandomSource rs(45);
    for (int i = 0; i < 50; ++i) {
        const Index q = rs.integer(2, 4);
        const Index m_dim = rs.integer(1, q - 1);
        const StateSpaceModel m{rs.contraction(q, 0.95), rs.matrix(m_dim, q), rs.spd(q), rs.spd(m_dim)};
        const Matrix dQ = rs.psd(q, rs.integer(1, q));
        const CovarianceTriple t = covariance_triple_step(m, rs.spd(q), dQ);
        const Matrix closed = true_excess_closed_form(m, t.prior, dQ);
        EXPECT_LE(max_abs(m.H * (t.true_cov - t.ideal - closed) * m.H.transpose()), 1e-8);
    }
}

// ---- disturbance-covariance endpoint -----------------------------------------

TEST(HugeDisturbanceCovariance, RemovesJumpBiasInOneStep) {
    const StateSpaceModel m = augmented_tracking_model();
    const Matrix Qu = m.Q + block_diag(scalar(1e12), Matrix::Zero(2, 2));
    // start from the settled covariance of the filter tuned with Qu
    Matrix P = augmented_initial_cov();
    for (int i = 0; i < 50; ++i) {
        const Matrix prior = symmetric_part(m.Phi * P * m.Phi.transpose() + Qu);
        P = kf_update({Vector::Zero(3), prior}, m.H, m.R, Vector::Zero(2)).posterior.cov;
    }
    for (double jump : {8.0, -11.0, 5.0}) {
        const auto seq = bias_propagation(m, Qu, vec({jump, 0.0, 0.0}), P, 1);
        EXPECT_LE(std::abs(seq[1](0)), 1e-3 * std::abs(jump));
    }
}

TEST(HugeDisturbanceCovariance, InflatingStateNoiseRaisesSteadyStateCovariance) {
    const StateSpaceModel m = augmented_tracking_model();
    const Matrix P0 = augmented_initial_cov();
    const Matrix base = block_diag(scalar(1e12), Matrix::Zero(2, 2));
    const Matrix P_base = steady_state_true_covariance(m, base, P0);
    const Matrix P_more = steady_state_true_covariance(m, base + block_diag(scalar(0.0), 1e-3 * Matrix::Identity(2, 2)), P0);
    const Matrix diff = (P_more - P_base).bottomRightCorner(2, 2);
    EXPECT_GT(min_eigenvalue(diff), 0.0);
    EXPECT_GT(P_more.trace(), P_base.trace());
}

TEST(GainComplementTerms, SymmetryCheck) {
    const Matrix H = Matrix::Identity(2, 2);
    const Matrix R = 0.5 * Matrix::Identity(2, 2);
    EXPECT_TRUE(gain_complement_terms_symmetric(mat({{1, 0}, {0, 2}}), mat({{2, 0}, {0, 3}}), H, R));
    EXPECT_FALSE(gain_complement_terms_symmetric(mat({{1, 0.5}, {0.5, 2}}), mat({{1, 0.5}, {0.5, 2}}),
                                                 H, mat({{1, 0}, {0, 4}})));
}
