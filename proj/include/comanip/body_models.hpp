#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "comanip/rotmath.hpp"
#include "comanip/types.hpp"

namespace comanip {

enum class JointType { Revolute, Prismatic };

struct Joint {
    std::string name;
    JointType type = JointType::Revolute;
    Vec3 axis = Vec3::UnitZ();  // in the joint frame, unit length
    Pose origin;                // parent frame -> joint frame at zero position
    double limit_lo = -3.14;    // rad (or m)
    double limit_hi = 3.14;
};

/// Serial kinematic chain loaded from a JSON table. Immutable after load.
class SerialChain {
public:
    SerialChain() = default;
    SerialChain(std::string name, Pose base, std::vector<Joint> joints, Pose tool, VecX nominal,
                VecX margin_lo, VecX margin_hi);

    static SerialChain from_json(const nlohmann::json& j);
    static SerialChain load(const std::string& path);
    nlohmann::json to_json() const;

    const std::string& name() const { return name_; }
    int dof() const { return static_cast<int>(joints_.size()); }
    const std::vector<Joint>& joints() const { return joints_; }
    const Pose& base() const { return base_; }
    const Pose& tool() const { return tool_; }
    const VecX& nominal() const { return nominal_; }
    VecX lower() const;
    VecX upper() const;
    const VecX& margin_lo() const { return margin_lo_; }
    const VecX& margin_hi() const { return margin_hi_; }

    bool within_limits(const VecX& theta, double tol = 0.0) const;
    VecX clamp(const VecX& theta) const;

    /// Upper bound on the distance from the first joint origin to the tool
    /// point, used to reject targets before running IK.
    double reach() const { return reach_; }
    Vec3 first_joint_position() const;

private:
    std::string name_;
    Pose base_;
    std::vector<Joint> joints_;
    Pose tool_;
    VecX nominal_;
    VecX margin_lo_;
    VecX margin_hi_;
    double reach_ = 0.0;
};

Pose fk(const SerialChain& chain, const VecX& theta);

/// Geometric Jacobian (6 x n), world frame, reference point at the tool.
MatX jacobian(const SerialChain& chain, const VecX& theta);

/// FK and Jacobian in one pass.
void fk_jacobian(const SerialChain& chain, const VecX& theta, Pose& pose, MatX& jac);

/// (theta - lower, theta - upper).
std::pair<VecX, VecX> joint_limit_distances(const SerialChain& chain, const VecX& theta);

/// 6-vector pose error target (-) current: [dp; rotation vector].
Vec6 pose_error(const Pose& target, const Pose& current);

// ---------------------------------------------------------------------------
// Rigid object and grasps

struct RigidObject {
    double mass = 4.5;                                   // kg
    Mat3 inertia = Vec3(0.0075, 0.0975, 0.0975).asDiagonal();  // kg m^2, body frame
    Pose robot_grasp;  // robot contact frame expressed in the object CoM frame
    Pose human_grasp;  // human contact frame expressed in the object CoM frame

    /// World-frame 6x6 mass/inertia at CoM pose.
    Mat6 mass_matrix(const UnitQuaternion& q) const;
    /// Generalized gravity wrench (+m g z), at the CoM.
    Wrench gravity() const;

    Pose robot_contact(const Pose& com) const { return com.compose(robot_grasp); }
    Pose human_contact(const Pose& com) const { return com.compose(human_grasp); }
    Pose com_from_robot_contact(const Pose& contact) const { return contact.compose(robot_grasp.inverse()); }
};

/// Transposed grasp matrix G^T: wrench at a contact point -> wrench at the
/// CoM. r = p_contact - p_com in world coordinates.
Mat6 grasp_transpose(const Vec3& r);
/// G: CoM twist -> contact twist.
Mat6 grasp(const Vec3& r);

// ---------------------------------------------------------------------------
// Human arm and manipulability

struct HumanArm {
    SerialChain chain;
    VecX theta;

    Vec3 hand_position() const { return fk(chain, theta).p; }
};

/// J_pos J_pos^T (3x3), symmetrized, plus 1e-9 I.
Mat3 manipulability(const HumanArm& arm);

/// (1 - mu) I + mu E with mu = exp(-decay |p_star - x_h|^2).
Mat3 local_ellipsoid(const Mat3& E, const Vec3& p_star, const Vec3& hand, double decay);

// ---------------------------------------------------------------------------
// Inverse kinematics

struct IkConfig {
    int n_seeds = 8;
    int max_iterations = 200;
    double pos_tol = 1e-3;   // m
    double rot_tol = 1e-2;   // rad
    double damping = 0.05;
    double max_step = 0.3;   // rad per iteration
    std::uint64_t seed = 7;
    bool position_only = false;
};

struct IkResult {
    bool converged = false;
    VecX theta;
    double pos_error = 0.0;
    double rot_error = 0.0;
    int iterations = 0;
};

/// Damped least-squares IK from a single seed; joints clamped to limits.
IkResult solve_ik(const SerialChain& chain, const Pose& target, const VecX& seed, const IkConfig& cfg);

/// Multi-seed DLS IK: warm start (if given), nominal, then random in-limit
/// seeds. Returns the first converged solution or the best failure.
IkResult ik_solve_multi(const SerialChain& chain, const Pose& target, const IkConfig& cfg,
                        const VecX* warm_start = nullptr);

/// True iff ik_solve_multi converges with all joints within limits.
bool ik_feasible(const SerialChain& chain, const Pose& target, const IkConfig& cfg = {});

/// Re-checks a stored IK witness against its target.
bool verify_witness(const SerialChain& chain, const Pose& target, const VecX& witness, const IkConfig& cfg);

/// Goal feasibility for object CoM poses: maps the goal through the robot
/// grasp and runs the multi-seed IK, keeping the last witness per slot so
/// repeated queries for slowly moving goals converge in a few iterations.
class FeasibilityOracle {
public:
    FeasibilityOracle(const SerialChain* chain, Pose robot_grasp, IkConfig cfg);

    bool check(const Pose& object_goal, std::size_t slot);
    bool check(const Pose& object_goal);
    const VecX* witness(std::size_t slot) const;
    /// Reorders warm starts after a resampling step.
    void remap_slots(const std::vector<std::size_t>& source_index);
    Pose end_effector_target(const Pose& object_goal) const { return object_goal.compose(robot_grasp_); }
    const SerialChain& chain() const { return *chain_; }
    const IkConfig& config() const { return cfg_; }
    std::size_t queries() const { return queries_; }

private:
    const SerialChain* chain_;
    Pose robot_grasp_;
    IkConfig cfg_;
    std::vector<std::optional<VecX>> witnesses_;
    std::size_t queries_ = 0;
};

/// One differential-IK tracking step toward a (slowly moving) target: two
/// damped Newton iterations on the pose error plus a null-space pull toward
/// the nominal posture. position_only tracks just the tool point.
struct TrackResult {
    VecX theta;
    VecX theta_dot;
    double pos_error = 0.0;
    double rot_error = 0.0;
};
TrackResult track_step(const SerialChain& chain, const VecX& theta, const Pose& target, double dt,
                       bool position_only = false, double null_gain = 1.0);

}  // namespace comanip
