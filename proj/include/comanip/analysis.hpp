#pragma once

#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "comanip/control.hpp"
#include "comanip/intent_ds.hpp"
#include "comanip/types.hpp"

namespace comanip {

// ---------------------------------------------------------------------------
// Apparent impedance

/// -c diag(lambda) diag(a_hat).
Mat3 apparent_stiffness(double c, const Vec3& lambda, const Vec3& a_hat);

/// Jacobian d u_h' / d x_dot of the closed loop: c diag(lambda) +
/// (diag(lambda) residual) grad_c^T, residual = x_dot - f_hat(x).
Mat3 apparent_damping(double c, const Vec3& lambda, const Vec3& residual, const Vec3& grad_c);

/// d c / d x_dot of the clipped confidence integrator, accumulated online:
/// every unclipped update adds -dt * residual / |residual|, a clip resets it.
class ConfidenceGradient {
public:
    /// c_unclipped is c + dt (d - e) before the clip to [0, 1].
    void update(const Vec3& residual, double dt, double c_unclipped);
    void reset() { grad_ = Vec3::Zero(); }
    const Vec3& value() const { return grad_; }

private:
    Vec3 grad_ = Vec3::Zero();
};

// ---------------------------------------------------------------------------
// Energy

/// Storage function terms. Cartesian part: W = 1/2 v^T M v + 1/2 e^T K e with
/// K = -c Lambda A_hat. The rotational analogue uses the rotation vector
/// phi = 2 log(q * conj(q_hat*)) with stiffness -c Lambda_o A_o_hat / 2.
struct EnergyLedger {
    double W = 0.0;       // J
    double W_dot = 0.0;   // W, analytic
    double E_d = 0.0;     // v^T Lambda v (lin + rot), W
    double E_p = 0.0;     // e^T Lambda A_hat e (lin + rot), J, <= 0
    double input_power = 0.0;      // v^T u_h'
    double passivity_margin = 0.0; // v^T u_h' - W_dot
};

struct EnergyInputs {
    Mat6 M = Mat6::Identity();
    Pose x;
    Twist v = Twist::Zero();
    DsIntent estimate;
    double c_p = 0.0;
    double c_o = 0.0;
    double c_dot_p = 0.0;
    double c_dot_o = 0.0;
    Wrench u_h = Wrench::Zero();
    TaskMask mask;
};

/// Throws std::invalid_argument when M is not SPD or the stiffness is not PSD.
EnergyLedger energy_audit(const EnergyInputs& in, const ImpedanceGains& gains);

/// Potential part of the storage function only (for finite-difference checks).
double storage_potential(const EnergyInputs& in, const ImpedanceGains& gains);

// ---------------------------------------------------------------------------
// Trajectory records and metrics

/// One control tick. Wrenches are at the object CoM, world frame.
struct TickRecord {
    double t = 0.0;
    double dt = 0.0;
    Pose x;
    Twist v = Twist::Zero();
    Wrench u_h = Wrench::Zero();    // human wrench applied this tick
    Wrench u_ds = Wrench::Zero();   // impedance (or admittance tracking) term
    Wrench u_lock = Wrench::Zero();
    Wrench f_net = Wrench::Zero();  // total wrench in the force balance
    double c_p = 0.0;
    double c_o = 0.0;
    DsIntent estimate;
    bool estimator_tick = false;
    EnergyLedger energy;
    VecX theta;
};

enum class TrialStatus { completed, timeout, fault };
std::string to_string(TrialStatus s);
TrialStatus trial_status_from_string(const std::string& s);

struct CompletionThresholds {
    double pos = 0.13;            // m
    double rot = 35.0 * std::numbers::pi / 180.0;  // rad
    double vel = 0.1;             // norm of (v, omega)

    bool satisfied(const Pose& x, const Twist& v, const Pose& goal) const;
};

struct TrialMetrics {
    double completion_time = 0.0;  // s
    double lin_impulse = 0.0;      // N s
    double ang_impulse = 0.0;      // N m s
    double avg_force = 0.0;        // N
    double avg_torque = 0.0;       // N m
    TrialStatus status = TrialStatus::timeout;

    nlohmann::json to_json() const;
    static TrialMetrics from_json(const nlohmann::json& j);
};

/// Completion is the first record meeting every threshold. Impulses are
/// rectangle sums of |f_h| and |tau_h| over the records before it. A log
/// without completion is a timeout with completion_time = horizon.
TrialMetrics compute_metrics(const std::vector<TickRecord>& log, const Pose& goal, const CompletionThresholds& th,
                             double horizon);

// ---------------------------------------------------------------------------
// Quantiles

struct QuantileRow {
    std::size_t n = 0;
    double min = 0.0;
    double q1 = 0.0;
    double median = 0.0;
    double q3 = 0.0;
    double max = 0.0;
    std::vector<double> outliers;  // outside [q1 - 1.5 iqr, q3 + 1.5 iqr]
};

/// Linear interpolation between order statistics (position p (n - 1)).
double quantile(std::vector<double> values, double p);

/// min / max are taken over the non-outlier values (boxplot whiskers).
QuantileRow quantile_row(const std::vector<double>& values);

}  // namespace comanip
