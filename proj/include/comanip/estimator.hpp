#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include <json.hpp>

#include "comanip/body_models.hpp"
#include "comanip/intent_ds.hpp"
#include "comanip/rotmath.hpp"
#include "comanip/types.hpp"

namespace comanip {

/// Process-noise std-dev band. The value at confidence c is
/// (1 - c) * (low + (1 - c) * (high - low)): the outer factor is the
/// confidence prefactor, the inner term slides from low (c = 1) to high (c = 0).
struct NoiseBand {
    double low = 0.0;
    double high = 0.0;

    double std_at(double c) const { return (1.0 - c) * (low + (1.0 - c) * (high - low)); }
};

struct Bounds {
    double lo = -1.0;
    double hi = -0.1;

    bool contains(double a) const { return a >= lo && a <= hi; }
};

/// Active task dimensions, world axes. 1 = estimated and controlled, 0 = locked.
struct TaskMask {
    Vec3 pos = Vec3::Ones();
    Vec3 rot = Vec3::Ones();
};

struct FilterConfig {
    int n_particles = 300;
    double eta1 = 0.5;  // velocity residual, position filter
    double eta2 = 0.5;  // acceleration residual, position filter
    double eta3 = 0.5;  // angular velocity residual
    double eta4 = 0.5;  // angular acceleration residual
    double eta5 = 1.5;  // ellipsoid decay, 1/m^2
    NoiseBand eta6{3e-4, 4e-3};    // Cartesian dynamics and attractor
    NoiseBand eta7{2e-4, 8.5e-3};  // rotational dynamics
    NoiseBand eta8{2e-4, 8.5e-3};  // rotational attractor, rad
    /// Common scale on the eta-weighted squared residuals.
    double likelihood_precision = 1.0;
    Bounds a_bounds_pos{-0.6, -0.4};
    Bounds a_bounds_rot{-0.9, -0.6};
    double ascent_pos = 0.41;  // 1/s
    double ascent_rot = 0.49;
    double resample_threshold = 0.5;  // resample when N_eff < threshold * N
    std::uint64_t rng_seed = 1;

    // prior
    Vec3 prior_pos_lo = Vec3(0.5, -0.3, 0.0);
    Vec3 prior_pos_hi = Vec3(1.0, 0.3, 0.6);
    Vec3 prior_rpy_lo = Vec3::Constant(-0.7);
    Vec3 prior_rpy_hi = Vec3::Constant(0.7);
    int prior_feasibility_tries = 50;

    TaskMask mask;
    /// One scalar for all three rotational dynamics entries.
    bool tied_rot_dynamics = false;

    /// Throws ConfigError on invalid values.
    void validate() const;
    nlohmann::json to_json() const;
    static FilterConfig from_json(const nlohmann::json& j);
};

struct ConfidenceState {
    double c = 0.0;
    double d = 0.41;  // ascent rate, 1/s
    double e = 0.0;   // last tracking error
};

struct Observation {
    Pose x;
    Vec3 v_lin = Vec3::Zero();
    Vec3 a_lin = Vec3::Zero();
    Vec3 omega = Vec3::Zero();
    Vec3 alpha = Vec3::Zero();
    Vec3 human_hand_pos = Vec3::Zero();
};

struct PosParticle {
    PosDsParams state;
    double weight = 0.0;
};

struct RotParticle {
    RotDsParams state;
    double weight = 0.0;
};

// ---------------------------------------------------------------------------
// Observation models

/// A_o * d/dt vec(q * conj(q*)) for constant q*, with q* taken on the
/// hemisphere that makes scalar(q * conj(q*)) >= 0.
Vec3 alpha_hat(const RotDsParams& params, const UnitQuaternion& q, const Vec3& omega);

/// -(eta1 |v - v_hat|^2 + eta2 |a - a_hat|^2) * likelihood_precision, masked.
double log_weigh(const PosDsParams& p, const Observation& obs, const FilterConfig& cfg);
double log_weigh(const RotDsParams& p, const Observation& obs, const FilterConfig& cfg);
inline double weigh(const PosDsParams& p, const Observation& obs, const FilterConfig& cfg)
{
    return std::exp(log_weigh(p, obs, cfg));
}
inline double weigh(const RotDsParams& p, const Observation& obs, const FilterConfig& cfg)
{
    return std::exp(log_weigh(p, obs, cfg));
}

// ---------------------------------------------------------------------------
// Filter stages

/// Zero-dynamics prediction. E is the human manipulability ellipsoid; each
/// particle's attractor noise has covariance sigma^2 * local_ellipsoid(E, p*, hand).
/// Throws std::invalid_argument if E is not SPD.
void predict(std::vector<PosParticle>& particles, const ConfidenceState& conf, const Mat3& E, const Vec3& hand,
             const FilterConfig& cfg, std::mt19937_64& rng);
void predict(std::vector<RotParticle>& particles, const ConfidenceState& conf, const FilterConfig& cfg,
             std::mt19937_64& rng);

bool dynamics_in_bounds(const PosDsParams& p, const FilterConfig& cfg);
bool dynamics_in_bounds(const RotDsParams& p, const FilterConfig& cfg);

/// Object CoM goal implied by a paired particle.
inline Pose goal_pose(const PosDsParams& p, const RotDsParams& r) { return {p.attractor, r.attractor}; }

/// Zeroes both paired weights when the dynamics leave a_bounds or the goal
/// fails the oracle (slot = particle index). A null oracle skips the goal check.
void trim(PosParticle& p, RotParticle& r, FeasibilityOracle* oracle, std::size_t slot, const FilterConfig& cfg);

/// Systematic resampling. Returns source indices. Throws EstimatorDiverged
/// when no weight is positive.
std::vector<std::size_t> resample_indices(const std::vector<double>& weights, std::mt19937_64& rng);

double effective_sample_size(const std::vector<double>& normalized_weights);

PosDsParams estimate(const std::vector<PosParticle>& particles);
RotDsParams estimate(const std::vector<RotParticle>& particles);

/// e = |v_est - v_actual|; c <- clip(c + dt (d - e), 0, 1). Throws on dt <= 0.
ConfidenceState update_confidence(const ConfidenceState& conf, const Vec3& v_actual, const Vec3& v_est, double dt);

// ---------------------------------------------------------------------------

/// First-order low-pass filtered finite difference of a sampled 3-vector.
class DerivativeFilter {
public:
    DerivativeFilter(double dt, double cutoff_hz);
    Vec3 update(const Vec3& value);
    void reset();

private:
    double dt_;
    double alpha_;
    bool primed_ = false;
    Vec3 last_ = Vec3::Zero();
    Vec3 out_ = Vec3::Zero();
};

struct FilterSnapshot {
    DsIntent estimate;
    ConfidenceState conf_pos;
    ConfidenceState conf_rot;
    double n_eff_pos = 0.0;
    double n_eff_rot = 0.0;
    std::size_t step = 0;
    std::size_t reinitializations = 0;
    /// Running audit counters: published estimates failing check_gas, and
    /// surviving particles whose dynamics or stored IK witness fail an
    /// independent re-check after trimming.
    std::size_t gas_violations = 0;
    std::size_t infeasible_survivors = 0;
};

/// Paired position and rotation particle filters. Particle i of one filter
/// is matched with particle i of the other for goal feasibility trimming.
class DualParticleFilter {
public:
    /// oracle may be null (no goal trimming). It must outlive the filter.
    DualParticleFilter(FilterConfig cfg, FeasibilityOracle* oracle);

    /// Samples the prior, confidences to zero.
    void reset();

    /// predict -> weigh -> trim -> normalize -> estimate -> confidence ->
    /// resample (if N_eff is low). On total weight loss the prior is
    /// resampled and EstimatorDiverged is rethrown after the reset.
    const FilterSnapshot& step(const Observation& obs, const Mat3& E, double dt);

    /// Live change of the confidence ascent rates. Throws ConfigError unless both are > 0.
    void set_ascent_rates(double pos, double rot);

    const FilterSnapshot& snapshot() const { return snap_; }
    const std::vector<PosParticle>& pos_particles() const { return pos_; }
    const std::vector<RotParticle>& rot_particles() const { return rot_; }
    const FilterConfig& config() const { return cfg_; }

    /// State dump. Particle lists are decimated to at most max_particles.
    nlohmann::json to_json(std::size_t max_particles = 256) const;

private:
    void sample_prior_particle(std::size_t i);
    void normalize_and_estimate(const Observation& obs, double dt);
    void audit_survivors();

    FilterConfig cfg_;
    FeasibilityOracle* oracle_;
    std::mt19937_64 rng_;
    std::vector<PosParticle> pos_;
    std::vector<RotParticle> rot_;
    std::vector<double> log_w_pos_;
    std::vector<double> log_w_rot_;
    std::vector<Pose> verified_goal_;
    std::vector<char> verified_ok_;
    FilterSnapshot snap_;
};

nlohmann::json to_json(const DsIntent& intent);

}  // namespace comanip
