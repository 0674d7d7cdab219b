#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "comanip/analysis.hpp"
#include "comanip/body_models.hpp"
#include "comanip/control.hpp"
#include "comanip/estimator.hpp"
#include "comanip/intent_ds.hpp"

namespace comanip {

enum class ControllerKind { proposed, admittance, fixed_goal_ds };
std::string to_string(ControllerKind k);
/// Throws ConfigError for unknown names.
ControllerKind controller_from_string(const std::string& s);

/// Pose as written in scenario files (xyz + roll/pitch/yaw), kept in that
/// form so files round-trip exactly.
struct PoseSpec {
    Vec3 xyz = Vec3::Zero();
    Vec3 rpy = Vec3::Zero();

    Pose pose() const { return {xyz, UnitQuaternion::from_rpy(rpy.x(), rpy.y(), rpy.z())}; }
    bool operator==(const PoseSpec&) const = default;
};

/// Hidden intent switched on at time t.
struct HumanGoal {
    double t = 0.0;
    PoseSpec goal;
    Vec3 a_pos = Vec3::Constant(-0.5);
    Vec3 a_rot = Vec3::Constant(-0.75);

    DsIntent intent() const;
    bool operator==(const HumanGoal&) const = default;
};

/// Synthetic human: a velocity-tracking controller on its own hidden DS.
struct HumanPolicy {
    Vec3 k_lin = Vec3::Constant(60.0);  // N s/m
    Vec3 k_rot = Vec3::Constant(6.0);   // N m s/rad
    double f_max = 30.0;                // N
    double tau_max = 5.0;               // N m
    std::vector<HumanGoal> schedule{HumanGoal{}};

    /// Entry with the largest t <= time (the first entry before it starts).
    const HumanGoal& active(double time) const;
    void validate() const;
    bool operator==(const HumanPolicy&) const = default;
};

/// sat(K_h (f_hidden(x) - v)) on the task dimensions. Force and torque are
/// clamped by norm to f_max and tau_max.
Wrench human_wrench(const Pose& x, const Twist& v, const DsIntent& hidden, const HumanPolicy& policy,
                    const TaskMask& mask);

/// M = M_l(q) + G_r^T M_r G_r and g = G_r^T g_r + g_l at the object pose.
struct CombinedDynamics {
    Mat6 M;
    Wrench g;
    Mat6 G_r;   // CoM twist -> robot contact twist
    Wrench g_r;
    Wrench g_l;
    Mat6 M_l;
};
CombinedDynamics combined_dynamics(const RigidObject& object, const Vec6& robot_mass, const Pose& x);

struct SimState {
    Pose x;
    Twist v = Twist::Zero();
    VecX theta;
    VecX theta_dot;
    double t = 0.0;
    DsIntent hidden_intent;
    HumanArm human_arm;
};

struct SimModel {
    SerialChain robot;
    RigidObject object;
    Vec6 robot_mass = (Vec6() << 5.0, 5.0, 5.0, 0.5, 0.5, 0.5).finished();
    double shadow_tolerance = 0.05;  // m
};

/// Semi-implicit Euler on M v_dot = G_r^T u_r + u_h - g, then the shadow arm
/// and the human arm track the new contact poses. u_r is the realized robot
/// contact wrench. Throws SimFault when the shadow arm loses the end
/// effector or the state turns non-finite, std::invalid_argument for a bad dt.
SimState step(const SimModel& model, const SimState& s, const Wrench& u_r, const Wrench& u_h, double dt);

/// Net wrench in the force balance of step().
Wrench net_wrench(const CombinedDynamics& dyn, const Wrench& u_r, const Wrench& u_h);

// ---------------------------------------------------------------------------

struct Scenario {
    std::string name = "default";
    PoseSpec start{Vec3(0.78, 0.0, 0.3), Vec3::Zero()};
    double horizon = 20.0;    // s
    double dt = 0.005;        // control period, s
    int estimator_decimation = 10;
    TaskMask mask;
    LockConfig lock;          // lock.mask mirrors mask
    HumanPolicy human;
    double object_mass = 4.5;
    Vec3 object_inertia = Vec3(0.0075, 0.0975, 0.0975);
    PoseSpec robot_grasp{Vec3(-0.25, 0.0, 0.0), Vec3(0.0, std::numbers::pi, 0.0)};
    PoseSpec human_grasp{Vec3(0.25, 0.0, 0.0), Vec3::Zero()};
    Vec6 robot_mass = (Vec6() << 5.0, 5.0, 5.0, 0.5, 0.5, 0.5).finished();
    std::string robot_chain = "robot_iiwa_like.json";
    std::string human_chain = "human_arm.json";
    double velocity_noise = 0.01;  // m/s and rad/s, std-dev
    std::uint64_t seed = 1;
    ControllerKind controller = ControllerKind::proposed;
    FilterConfig filter;
    ImpedanceGains gains;
    AdmittanceParams admittance;
    double eta9 = 0.1;
    CompletionThresholds completion;
    double shadow_tolerance = 0.05;
    Vec3 fixed_a_pos = Vec3::Constant(-0.5);
    Vec3 fixed_a_rot = Vec3::Constant(-0.75);

    /// Throws ConfigError.
    void validate() const;
    nlohmann::json to_json() const;
    /// Relative chain paths are resolved against base_dir.
    static Scenario from_json(const nlohmann::json& j, const std::string& base_dir = ".");
    static Scenario load(const std::string& path);

    RigidObject rigid_object() const;
    Pose goal_at(double t) const { return human.active(t).goal.pose(); }
};

// ---------------------------------------------------------------------------
// Intent sources

struct IntentEstimate {
    DsIntent intent;
    double c_p = 0.0;
    double c_o = 0.0;
    double c_dot_p = 0.0;
    double c_dot_o = 0.0;
    Vec3 grad_c_p = Vec3::Zero();
};

/// Supplies the DS estimate and confidences to the impedance controller.
class IntentSource {
public:
    virtual ~IntentSource() = default;
    /// Called every estimator tick (or every control tick if every_tick()).
    virtual IntentEstimate update(const Observation& obs, const Mat3& E, double t, double dt) = 0;
    virtual bool every_tick() const { return false; }
    virtual const DualParticleFilter* filter() const { return nullptr; }
    virtual std::size_t divergences() const { return 0; }
    virtual void set_ascent_rates(double, double) {}
};

/// Dual particle filter with the IK feasibility oracle on the robot chain.
class ParticleIntentSource : public IntentSource {
public:
    ParticleIntentSource(const FilterConfig& cfg, const SerialChain& robot, const Pose& robot_grasp,
                         const IkConfig& ik = {});
    IntentEstimate update(const Observation& obs, const Mat3& E, double t, double dt) override;
    const DualParticleFilter* filter() const override { return &filter_; }
    std::size_t divergences() const override { return divergences_; }
    void set_ascent_rates(double pos, double rot) override { filter_.set_ascent_rates(pos, rot); }

private:
    FeasibilityOracle oracle_;
    DualParticleFilter filter_;
    ConfidenceGradient grad_;
    IntentEstimate last_;
    std::size_t divergences_ = 0;
};

/// Confidence c(t) = clip(c0 + rate (t - t0)^+, 0, 1).
struct ConfidenceRamp {
    double c0 = 1.0;
    double rate = 0.0;  // 1/s
    double t0 = 0.0;

    double value(double t) const;
    double derivative(double t) const;
};

/// Known intent with scripted confidences (fixed-goal baseline and
/// controlled energy experiments).
class FixedIntentSource : public IntentSource {
public:
    FixedIntentSource(std::function<DsIntent(double)> intent, ConfidenceRamp c_p, ConfidenceRamp c_o,
                      bool every_tick = true);
    IntentEstimate update(const Observation& obs, const Mat3& E, double t, double dt) override;
    bool every_tick() const override { return every_tick_; }

private:
    std::function<DsIntent(double)> intent_;
    ConfidenceRamp c_p_;
    ConfidenceRamp c_o_;
    bool every_tick_;
};

/// The source a scenario's controller implies (null for admittance).
std::unique_ptr<IntentSource> make_intent_source(const Scenario& sc, const SerialChain& robot);

// ---------------------------------------------------------------------------

/// Closed-loop episode stepped one control tick at a time.
class Simulation {
public:
    /// source == nullptr picks make_intent_source(sc). Throws ConfigError
    /// when the start pose has no IK solution.
    explicit Simulation(Scenario sc, std::unique_ptr<IntentSource> source = nullptr);
    Simulation(const Simulation&) = delete;
    Simulation& operator=(const Simulation&) = delete;

    /// Advances one control period. human_override replaces the synthetic
    /// human wrench (used by the service). Returns the record of the state
    /// at the start of the tick.
    const TickRecord& tick(const Wrench* human_override = nullptr);

    const SimState& state() const { return state_; }
    const Scenario& scenario() const { return sc_; }
    const SimModel& model() const { return model_; }
    const IntentEstimate& estimate() const { return est_; }
    const IntentSource* source() const { return source_.get(); }
    const TickRecord& last() const { return last_; }
    std::size_t ticks() const { return ticks_; }
    std::size_t estimator_steps() const { return est_steps_; }
    Mat3 human_ellipsoid() const;
    /// Live parameter changes (validated, throw ConfigError).
    void set_gains(const ImpedanceGains& gains);
    void set_ascent_rates(double pos, double rot);
    Pose goal() const { return sc_.goal_at(state_.t); }
    bool at_goal() const;

private:
    Observation observe();

    Scenario sc_;
    SimModel model_;
    std::unique_ptr<IntentSource> source_;
    SimState state_;
    IntentEstimate est_;
    TickRecord last_;
    JointLimitConfig limits_;
    std::mt19937_64 noise_rng_;
    DerivativeFilter acc_;
    DerivativeFilter alpha_;
    Twist v_desired_ = Twist::Zero();  // admittance state
    Twist a_prev_ = Twist::Zero();
    std::size_t ticks_ = 0;
    std::size_t est_steps_ = 0;
};

// ---------------------------------------------------------------------------

struct EpisodeResult {
    std::string scenario;
    ControllerKind controller = ControllerKind::proposed;
    std::uint64_t seed = 0;
    std::vector<TickRecord> log;
    TrialMetrics metrics;
    Pose goal;
    std::string fault;
    std::size_t estimator_steps = 0;
    std::size_t reinitializations = 0;
    std::size_t gas_violations = 0;
    std::size_t infeasible_survivors = 0;

    nlohmann::json summary() const;
};

/// Runs until completion, horizon, or fault. SimFault ends the episode with
/// status fault; particle-filter divergence is counted and the filter
/// restarts from its prior.
EpisodeResult run_episode(const Scenario& sc, std::unique_ptr<IntentSource> source = nullptr);

/// One row per control tick, fixed column order, %.17g numbers.
void write_csv(const std::vector<TickRecord>& log, std::ostream& out);
std::vector<TickRecord> read_csv(std::istream& in);
std::string csv_header(int dof);

}  // namespace comanip
