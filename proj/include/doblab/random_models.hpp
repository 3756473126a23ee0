#pragma once

// Seeded random matrices and systems for property checks.

#include "doblab/core_model.hpp"
#include "doblab/scenario.hpp"

#include <cstdint>

namespace doblab {

/// Deterministic stream of normals and uniforms keyed by a seed.
class RandomSource {
public:
    explicit RandomSource(std::uint64_t seed) : rng_(seed) {}

    double normal() { return rng_.normal(NoiseStream::Process, counter_++, 0); }
    double uniform() { return rng_.uniform(NoiseStream::Initial, counter_++); }
    Index integer(Index lo, Index hi) { return lo + static_cast<Index>(uniform() * static_cast<double>(hi - lo + 1)); }

    Matrix matrix(Index rows, Index cols) {
        Matrix out(rows, cols);
        for (Index j = 0; j < cols; ++j) {
            for (Index i = 0; i < rows; ++i) out(i, j) = normal();
        }
        return out;
    }

    Vector vector(Index size) { return matrix(size, 1); }

    /// A A^T / dim + floor I.
    Matrix spd(Index dim, double floor = 0.1) {
        const Matrix A = matrix(dim, dim);
        return symmetric_part(A * A.transpose() / static_cast<double>(dim) + floor * Matrix::Identity(dim, dim));
    }

    /// Rank-deficient PSD matrix of the given rank.
    Matrix psd(Index dim, Index rank) {
        const Matrix A = matrix(dim, rank);
        return symmetric_part(A * A.transpose() / static_cast<double>(std::max<Index>(rank, 1)));
    }

    /// Random matrix rescaled to spectral norm `radius`.
    Matrix contraction(Index dim, double radius) {
        const Matrix A = matrix(dim, dim);
        Eigen::JacobiSVD<Matrix> svd(A);
        return A * (radius / svd.singularValues()(0));
    }

private:
    CounterRng rng_;
    std::uint64_t counter_ = 0;
};

/// (Phi, H, Q, R) with n in [1, 3], m in [1, n], ||Phi|| = 0.95.
inline StateSpaceModel random_state_space(RandomSource& rs, Index max_dim = 3) {
    const Index n = rs.integer(1, max_dim);
    const Index m = rs.integer(1, n);
    return {rs.contraction(n, 0.95), rs.matrix(m, n), rs.spd(n), rs.spd(m)};
}

/// Random system with rank(H G) = rank(G) = p; n in [2, 4], m in [p, n].
inline LinearSystem random_linear_system(RandomSource& rs) {
    for (;;) {
        const Index n = rs.integer(2, 4);
        const Index p = rs.integer(1, n - 1);
        const Index m = rs.integer(p, n);
        try {
            return LinearSystem(rs.contraction(n, 0.98), rs.matrix(n, p), rs.matrix(m, n), rs.spd(n, 0.01),
                                rs.spd(m, 0.05));
        } catch (const ModelError&) {
            // rank-deficient draw; try again
        }
    }
}

}  // namespace doblab
