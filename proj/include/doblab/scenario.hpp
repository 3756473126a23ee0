#pragma once

// Ground truth for the tracking scenario: counter-based Gaussian streams,
// step-plus-noise disturbance profiles, and seeded trajectory simulation.

#include "doblab/core_model.hpp"
#include "doblab/format.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <ostream>
#include <vector>

namespace doblab {

/// SplitMix64 finalizer; a bijective 64-bit mix.
constexpr std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
    return splitmix64(a ^ splitmix64(b + 0x632BE59BD9B4E019ULL));
}

/// Seed of Monte Carlo trial `index`.
constexpr std::uint64_t trial_seed(std::uint64_t base_seed, std::uint64_t index) {
    return hash_combine(base_seed, index);
}

enum class NoiseStream : std::uint64_t { Initial = 1, Process = 2, Measurement = 3, Disturbance = 4 };

/**
 * @brief Counter-based standard normal source.
 *
 * Draw (stream, step, component) is a pure function of the seed, so draws
 * never depend on how many other draws were taken before them.
 */
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t seed() const { return seed_; }

    /// Uniform in (0, 1) with 53-bit resolution.
    double uniform(NoiseStream stream, std::uint64_t counter) const {
        const std::uint64_t key = hash_combine(seed_, static_cast<std::uint64_t>(stream));
        const std::uint64_t bits = splitmix64(key + counter * 0xD1B54A32D192ED03ULL);
        return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
    }

    double normal(NoiseStream stream, std::uint64_t step, std::uint64_t component) const {
        const std::uint64_t counter = (step << 8) | (component & 0xFF);
        const double u1 = uniform(stream, 2 * counter);
        const double u2 = uniform(stream, 2 * counter + 1);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// L z with z standard normal; L a lower Cholesky-type factor.
    Vector gaussian(NoiseStream stream, std::uint64_t step, const Matrix& L) const {
        Vector z(L.cols());
        for (Index i = 0; i < z.size(); ++i) z(i) = normal(stream, step, static_cast<std::uint64_t>(i));
        return L * z;
    }

private:
    std::uint64_t seed_;
};

/// Factor for sampling: zero matrix maps to a zero factor, otherwise Cholesky.
inline Matrix sampling_factor(const Matrix& cov) {
    if (cov.size() == 0 || max_abs(cov) == 0.0) return Matrix::Zero(cov.rows(), cov.cols());
    return cholesky_factor(cov);
}

struct Segment {
    Index start = 0;
    double level = 0.0;
};

/// Piecewise-constant level on closed-left intervals plus white noise N(0, noise_cov).
struct DisturbanceProfile {
    std::vector<Segment> segments;
    Matrix noise_cov;

    Index dim() const { return noise_cov.rows(); }

    void validate() const {
        if (segments.empty() || segments.front().start != 0) {
            throw ModelError("DisturbanceProfile: first segment must start at step 0");
        }
        for (std::size_t i = 0; i < segments.size(); ++i) {
            if (!std::isfinite(segments[i].level)) throw ModelError("DisturbanceProfile: levels must be finite");
            if (i > 0 && segments[i].start <= segments[i - 1].start) {
                throw ModelError("DisturbanceProfile: segment starts must be strictly increasing");
            }
        }
        if (noise_cov.rows() < 1) throw ModelError("DisturbanceProfile: noise_cov must be at least 1x1");
        detail::require_psd(noise_cov, "DisturbanceProfile noise_cov");
    }

    double level_at(Index k) const {
        double level = segments.front().level;
        for (const auto& s : segments) {
            if (s.start > k) break;
            level = s.level;
        }
        return level;
    }

    /// True when the step-signal level at k equals the level at k - 1.
    bool constant_at(Index k) const { return k <= 0 || level_at(k) == level_at(k - 1); }
};

inline constexpr Index kDefaultSteps = 2000;
inline constexpr double kDefaultSampleTime = 0.1;
inline constexpr double kDefaultProcessNoise = 1e-4;
inline constexpr double kDefaultMeasurementNoise = 1e-2;
inline constexpr double kDefaultNominalD = 1e-4;

/// Levels cycling {0, 5, -3, 8}; jumps every 300 steps with one moved to step 1260.
inline DisturbanceProfile default_profile(double noise_var = kDefaultNominalD) {
    const std::vector<Index> starts{0, 300, 600, 900, 1260, 1560, 1860};
    const double levels[] = {0.0, 5.0, -3.0, 8.0};
    DisturbanceProfile profile;
    for (std::size_t i = 0; i < starts.size(); ++i) profile.segments.push_back({starts[i], levels[i % 4]});
    profile.noise_cov = Matrix::Constant(1, 1, noise_var);
    return profile;
}

/// d = level(k) 1 + w_d with w_d drawn from the disturbance stream at index k.
inline Vector sample_disturbance(const DisturbanceProfile& profile, Index k, const CounterRng& rng) {
    if (k < 0) throw ModelError("sample_disturbance: step index must be nonnegative");
    Vector d = Vector::Constant(profile.dim(), profile.level_at(k));
    if (max_abs(profile.noise_cov) > 0.0) {
        d += rng.gaussian(NoiseStream::Disturbance, static_cast<std::uint64_t>(k), cholesky_factor(profile.noise_cov));
    }
    return d;
}

/// Constant-velocity tracking model driven by an acceleration disturbance.
inline LinearSystem default_tracking_system(double T = kDefaultSampleTime, double q_x = kDefaultProcessNoise,
                                            double r = kDefaultMeasurementNoise) {
    if (!(T > 0.0)) throw ModelError("default_tracking_system: T must be positive");
    Matrix F(2, 2);
    F << 1.0, T, 0.0, 1.0;
    Matrix G(2, 1);
    G << T * T / 2.0, T;
    return LinearSystem(F, G, Matrix::Identity(2, 2), q_x * Matrix::Identity(2, 2), r * Matrix::Identity(2, 2));
}

/// Noise actually injected into the truth; defaults to the model's Q and R.
struct TruthNoise {
    Matrix Q;
    Matrix R;
};

/**
 * @brief Simulated run of length `steps`.
 *
 * Entry i (step k = i + 1) holds x_k, y_k and d_{k-1}, the disturbance that
 * drives the transition into x_k and is therefore first visible in y_k.
 */
struct Trajectory {
    Vector x0;
    std::vector<Vector> states;
    std::vector<Vector> disturbances;
    std::vector<Vector> measurements;
    std::uint64_t seed = 0;
    double sample_time = kDefaultSampleTime;

    Index steps() const { return static_cast<Index>(states.size()); }
};

inline Trajectory simulate_truth(const LinearSystem& sys, const DisturbanceProfile& profile, Index steps,
                                 std::uint64_t seed, const GaussianBelief& initial,
                                 const std::optional<TruthNoise>& noise = std::nullopt,
                                 double sample_time = kDefaultSampleTime) {
    if (steps < 1) throw ModelError("simulate_truth: steps must be at least 1");
    profile.validate();
    if (profile.dim() != sys.p()) throw ModelError("simulate_truth: profile dimension must equal p");
    validate(initial, "initial condition");
    detail::require_length(initial.mean, sys.n(), "initial mean");

    const Matrix& Q = noise ? noise->Q : sys.Q();
    const Matrix& R = noise ? noise->R : sys.R();
    detail::require_shape(Q, sys.n(), sys.n(), "truth Q");
    detail::require_shape(R, sys.m(), sys.m(), "truth R");
    const Matrix Lq = sampling_factor(Q);
    const Matrix Lr = sampling_factor(R);
    const Matrix L0 = sampling_factor(initial.cov);

    const CounterRng rng(seed);
    Trajectory out;
    out.seed = seed;
    out.sample_time = sample_time;
    out.x0 = initial.mean + rng.gaussian(NoiseStream::Initial, 0, L0);
    out.states.reserve(static_cast<std::size_t>(steps));
    out.disturbances.reserve(static_cast<std::size_t>(steps));
    out.measurements.reserve(static_cast<std::size_t>(steps));

    Vector x = out.x0;
    for (Index k = 1; k <= steps; ++k) {
        const auto uk = static_cast<std::uint64_t>(k);
        Vector d = sample_disturbance(profile, k - 1, rng);
        x = sys.F() * x + sys.G() * d + rng.gaussian(NoiseStream::Process, uk, Lq);
        out.measurements.push_back(sys.H() * x + rng.gaussian(NoiseStream::Measurement, uk, Lr));
        out.states.push_back(x);
        out.disturbances.push_back(std::move(d));
    }
    return out;
}

/// Writes `step,t,d_true,x1,x2,y1,y2`; requires p = 1, n = 2, m = 2.
inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
    if (traj.steps() > 0 && (traj.disturbances[0].size() != 1 || traj.states[0].size() != 2 ||
                             traj.measurements[0].size() != 2)) {
        throw ModelError("write_trajectory_csv: the CSV layout needs p = 1, n = 2, m = 2");
    }
    os << "step,t,d_true,x1,x2,y1,y2\n";
    for (Index i = 0; i < traj.steps(); ++i) {
        const auto ui = static_cast<std::size_t>(i);
        const Index k = i + 1;
        os << k << ',' << format_real(static_cast<double>(k) * traj.sample_time) << ','
           << format_real(traj.disturbances[ui](0)) << ',' << format_real(traj.states[ui](0)) << ','
           << format_real(traj.states[ui](1)) << ',' << format_real(traj.measurements[ui](0)) << ','
           << format_real(traj.measurements[ui](1)) << '\n';
    }
}

}  // namespace doblab
