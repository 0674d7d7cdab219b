#pragma once

#include <json.hpp>

#include "comanip/body_models.hpp"
#include "comanip/estimator.hpp"
#include "comanip/types.hpp"

namespace comanip {

/// Diagonal damping gains; the applied damping is c * Lambda.
struct ImpedanceGains {
    Vec3 lambda_p = Vec3::Constant(85.0);  // N s/m
    Vec3 lambda_o = Vec3::Constant(13.0);  // N m s/rad

    void validate() const;
};

struct JointLimitConfig {
    double eta9 = 0.1;  // N m rad^2
    VecX margin_lo;     // rad, per joint
    VecX margin_hi;

    static JointLimitConfig from_chain(const SerialChain& chain, double eta9 = 0.1)
    {
        return {eta9, chain.margin_lo(), chain.margin_hi()};
    }
};

/// -blockdiag(c_p Lambda_p, c_o Lambda_o) (v_actual - v_est).
Wrench u_ds(const Twist& v_actual, const Twist& v_est, double c_p, double c_o, const ImpedanceGains& gains);

/// g_r + G_r^{-T} (g_l + u_ds). G_r is the CoM-twist -> contact-twist grasp
/// matrix. Throws std::invalid_argument when G_r is singular.
Wrench desired_wrench(const Wrench& u_ds, const Wrench& g_r, const Wrench& g_l, const Mat6& G_r);

/// Repulsive torque inside the safety margins, zero elsewhere. Positive
/// (away from the lower limit) near the lower limit, negative near the upper.
VecX joint_limit_torque(const SerialChain& chain, const VecX& theta, const JointLimitConfig& cfg);

/// -(theta - theta_N) - theta_dot.
VecX nullspace_torque(const VecX& theta, const VecX& theta_dot, const VecX& theta_nominal);

/// N = I - J^T (J^T)^+.
MatX nullspace_projector(const MatX& jac);

/// tau_lim + N tau_N + J^T u_r_d, evaluated at the chain configuration.
VecX total_torque(const SerialChain& chain, const VecX& theta, const VecX& theta_dot, const Wrench& u_r_d,
                  const JointLimitConfig& cfg);
VecX total_torque(const MatX& jac, const VecX& theta, const VecX& theta_dot, const VecX& theta_nominal,
                  const VecX& tau_lim, const Wrench& u_r_d);

/// Task-space wrench produced by a joint torque: (J^T)^+ tau.
Wrench realized_wrench(const MatX& jac, const VecX& tau);

// ---------------------------------------------------------------------------
// Admittance baseline

struct AdmittanceParams {
    double mass_lin = 10.0;
    double mass_rot = 2.0;
    double damping_lin = 30.0;
    double damping_rot = 5.0;
    double v_max = 0.8;  // m/s and rad/s
    double a_max = 1.0;  // m/s^2 and rad/s^2

    void validate() const;
};

/// One step of M v_dot = u_ext - D v with acceleration and velocity clamps
/// (applied to the norms of the linear and angular parts separately).
Twist admittance_step(const Twist& v, const Wrench& u_ext, const AdmittanceParams& params, double dt);

// ---------------------------------------------------------------------------
// Locked task dimensions

/// Stiff spring-damper holding the dimensions not in the task mask: height
/// at z_height, and zero pitch and yaw (roll is left free).
struct LockConfig {
    TaskMask mask;
    double z_height = 0.3;
    double k_lin = 2000.0;
    double d_lin = 275.0;
    double k_rot = 100.0;
    double d_rot = 15.0;
};

Wrench lock_wrench(const Pose& x, const Twist& v, const LockConfig& cfg);

inline Twist mask_twist(const Twist& v, const TaskMask& m) { return stack(m.pos.cwiseProduct(v.head<3>()), m.rot.cwiseProduct(v.tail<3>())); }

}  // namespace comanip
