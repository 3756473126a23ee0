#include "test_support.hpp"

#include <string>

using namespace doblab;
using namespace doblab::testing;

namespace {

LinearSystem tracking() { return default_tracking_system(0.1, 3.0, 1.0); }

}  // namespace

TEST(Augment, PlacesTransitionBlocksDisturbanceFirst) {
    const LinearSystem sys = default_tracking_system(0.1);
    const AugmentedModel aug = augment(sys, scalar(1.0));
    const Matrix expected = mat({{1, 0, 0}, {0.005, 1, 0.1}, {0.1, 0, 1}});
    EXPECT_LE(max_abs(aug.Phi - expected), 1e-15);
}

TEST(Augment, PadsObservationWithZeroColumns) {
    const AugmentedModel aug = augment(default_tracking_system(), scalar(1.0));
    EXPECT_EQ(aug.Haug, mat({{0, 1, 0}, {0, 0, 1}}));
}

TEST(Augment, ProcessCovarianceIsBlockDiagonal) {
    const LinearSystem sys(mat({{1, 0.1}, {0, 1}}), mat({{0.005}, {0.1}}), Matrix::Identity(2, 2),
                           mat({{3, 0}, {0, 4}}), Matrix::Identity(2, 2));
    const AugmentedModel aug = augment(sys, scalar(2.0));
    EXPECT_EQ(aug.Qaug, mat({{2, 0, 0}, {0, 3, 0}, {0, 0, 4}}));
}

TEST(Augment, BlocksRecoverTheInputs) {
    RandomSource rs(7);
    for (int i = 0; i < 20; ++i) {
        const LinearSystem sys = random_linear_system(rs);
        const Matrix D = rs.spd(sys.p());
        const AugmentedModel aug = augment(sys, D);
        EXPECT_EQ(aug.F_block(), sys.F());
        EXPECT_EQ(aug.G_block(), sys.G());
        EXPECT_EQ(aug.H_block(), sys.H());
        EXPECT_EQ(aug.D_block(), D);
        EXPECT_EQ(aug.Phi.topLeftCorner(sys.p(), sys.p()), Matrix::Identity(sys.p(), sys.p()));
        EXPECT_EQ(aug.Phi.topRightCorner(sys.p(), sys.n()), Matrix::Zero(sys.p(), sys.n()));
        EXPECT_EQ(aug.Haug.leftCols(sys.p()), Matrix::Zero(sys.m(), sys.p()));
    }
}

TEST(Augment, RejectsMisshapenDisturbanceCovariance) {
    try {
        augment(tracking(), Matrix::Identity(2, 2));
        FAIL() << "expected ModelError";
    } catch (const ModelError& e) {
        EXPECT_NE(std::string(e.what()).find("D (disturbance covariance block)"), std::string::npos) << e.what();
    }
}

TEST(Augment, RejectsIndefiniteDisturbanceCovariance) { EXPECT_THROW(augment(tracking(), scalar(-1.0)), ModelError); }

TEST(LinearSystem, RejectsInconsistentBlocks) {
    const Matrix F = Matrix::Identity(2, 2);
    const Matrix G = mat({{0.005}, {0.1}});
    const Matrix H = Matrix::Identity(2, 2);
    EXPECT_THROW(LinearSystem(F, G, H, Matrix::Identity(3, 3), Matrix::Identity(2, 2)), ModelError);
    EXPECT_THROW(LinearSystem(F, G, H, Matrix::Identity(2, 2), Matrix::Identity(3, 3)), ModelError);
    EXPECT_THROW(LinearSystem(F, mat({{1, 2, 3}}), H, Matrix::Identity(2, 2), Matrix::Identity(2, 2)), ModelError);
}

TEST(LinearSystem, RequiresPositiveDefiniteMeasurementNoise) {
    const Matrix G = mat({{0.005}, {0.1}});
    EXPECT_THROW(LinearSystem(Matrix::Identity(2, 2), G, Matrix::Identity(2, 2), Matrix::Identity(2, 2),
                              mat({{1, 0}, {0, 0}})),
                 ModelError);
    EXPECT_THROW(LinearSystem(Matrix::Identity(2, 2), G, Matrix::Identity(2, 2), mat({{1, 2}, {0, 1}}),
                              Matrix::Identity(2, 2)),
                 ModelError);
}

TEST(LinearSystem, RequiresObservableDisturbance) {
    // H only sees the first state, which G never excites.
    const Matrix G = mat({{0.0}, {1.0}});
    const Matrix H = mat({{1.0, 0.0}});
    EXPECT_THROW(LinearSystem(Matrix::Identity(2, 2), G, H, Matrix::Identity(2, 2), scalar(1.0)), ModelError);
    EXPECT_THROW(LinearSystem(Matrix::Identity(2, 2), mat({{1, 2}, {2, 4}}), Matrix::Identity(2, 2),
                              Matrix::Identity(2, 2), Matrix::Identity(2, 2)),
                 ModelError);
}

TEST(LinearSystem, TrackingModelIsValid) {
    const LinearSystem sys = default_tracking_system();
    EXPECT_EQ(sys.n(), 2);
    EXPECT_EQ(sys.m(), 2);
    EXPECT_EQ(sys.p(), 1);
}

TEST(GaussianBelief, ValidateChecksShapeAndDefiniteness) {
    EXPECT_NO_THROW(validate(GaussianBelief{Vector::Zero(2), Matrix::Identity(2, 2)}));
    EXPECT_THROW(validate(GaussianBelief{Vector::Zero(3), Matrix::Identity(2, 2)}), ModelError);
    EXPECT_THROW(validate(GaussianBelief{Vector::Zero(2), mat({{1, 0}, {0, -1}})}), ModelError);
    EXPECT_THROW(validate(GaussianBelief{Vector::Zero(2), mat({{1, 0.5}, {0, 1}})}), ModelError);
}

TEST(PsdHelpers, ToleranceAbsorbsRoundoff) {
    EXPECT_TRUE(is_psd(mat({{1, 0}, {0, -5e-11}})));
    EXPECT_FALSE(is_psd(mat({{1, 0}, {0, -1e-8}})));
    EXPECT_TRUE(is_symmetric(mat({{1, 1 + 5e-11}, {1, 1}})));
}

TEST(CholeskyFactor, IdentityMapsToIdentity) {
    EXPECT_EQ(cholesky_factor(Matrix::Identity(3, 3)), Matrix::Identity(3, 3));
}

TEST(CholeskyFactor, DiagonalGivesSquareRoots) {
    EXPECT_LE(max_abs(cholesky_factor(mat({{4, 0}, {0, 9}})) - mat({{2, 0}, {0, 3}})), 1e-15);
}

TEST(CholeskyFactor, ReconstructsSeededSpdMatrices) {
    RandomSource rs(11);
    for (int i = 0; i < 100; ++i) {
        const Index dim = rs.integer(1, 6);
        const Matrix A = rs.spd(dim, 1e-3);
        const Matrix B = cholesky_factor(A);
        EXPECT_LE(max_abs(B * B.transpose() - A), 1e-10 * (1 + max_abs(A)));
        EXPECT_EQ(Matrix(B.triangularView<Eigen::StrictlyUpper>()), Matrix::Zero(dim, dim));
        EXPECT_GE(B.diagonal().minCoeff(), 0.0);
    }
}

TEST(CholeskyFactor, RefactoringAProductIsIdempotent) {
    RandomSource rs(12);
    for (int i = 0; i < 100; ++i) {
        const Index dim = rs.integer(1, 6);
        const Matrix B0 = cholesky_factor(rs.spd(dim));
        const Matrix A = B0 * B0.transpose();
        const Matrix B = cholesky_factor(A);
        EXPECT_LE(max_abs(B * B.transpose() - A), 1e-10 * (1 + max_abs(A)));
        EXPECT_LE(max_abs(B - B0), 1e-10 * (1 + max_abs(B0)));
    }
}

TEST(CholeskyFactor, SemiDefiniteInputIsRegularized) {
    const Matrix A = mat({{1, 1}, {1, 1}});
    const Matrix B = cholesky_factor(A);
    EXPECT_LE(max_abs(B * B.transpose() - A), 1e-10 * 2);
}

TEST(CholeskyFactor, RejectsNonSymmetricInput) {
    EXPECT_THROW(cholesky_factor(mat({{1, 0.5}, {0, 1}})), ModelError);
    EXPECT_THROW(cholesky_factor(Matrix::Identity(2, 3)), ModelError);
}

TEST(CholeskyFactor, IndefiniteInputReportsMostNegativeEigenvalue) {
    try {
        cholesky_factor(mat({{1, 0}, {0, -2}}));
        FAIL() << "expected NumericalError";
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("-2"), std::string::npos) << e.what();
    }
}
