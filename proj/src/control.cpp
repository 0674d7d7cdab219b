#include "comanip/control.hpp"

#include <algorithm>
#include <cmath>

#include "comanip/errors.hpp"
#include "comanip/linalg.hpp"

namespace comanip {

namespace {

constexpr double kMinLimitDistance = 1e-4;

Vec3 clamp_norm(const Vec3& v, double limit)
{
    const double n = v.norm();
    return n > limit ? Vec3(v * (limit / n)) : v;
}

}  // namespace

void ImpedanceGains::validate() const
{
    if ((lambda_p.array() <= 0.0).any() || (lambda_o.array() <= 0.0).any()) {
        throw ConfigError("impedance gains must be positive");
    }
}

Wrench u_ds(const Twist& v_actual, const Twist& v_est, double c_p, double c_o, const ImpedanceGains& gains)
{
    const Twist e = v_actual - v_est;
    return stack(-c_p * gains.lambda_p.cwiseProduct(e.head<3>()), -c_o * gains.lambda_o.cwiseProduct(e.tail<3>()));
}

Wrench desired_wrench(const Wrench& u_ds, const Wrench& g_r, const Wrench& g_l, const Mat6& G_r)
{
    const Mat6 gt = G_r.transpose();
    const Eigen::FullPivLU<Mat6> lu(gt);
    if (!lu.isInvertible()) throw std::invalid_argument("desired_wrench: singular grasp matrix");
    return g_r + lu.solve(g_l + u_ds);
}

VecX joint_limit_torque(const SerialChain& chain, const VecX& theta, const JointLimitConfig& cfg)
{
    const auto [d_lo, d_hi] = joint_limit_distances(chain, theta);
    VecX tau = VecX::Zero(theta.size());
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
        if (d_lo[i] <= cfg.margin_lo[i]) {
            const double d = std::max(d_lo[i], kMinLimitDistance);
            tau[i] += cfg.eta9 * (1.0 / d - 1.0 / cfg.margin_lo[i]) / (d * d);
        }
        if (std::abs(d_hi[i]) <= cfg.margin_hi[i] || d_hi[i] > 0.0) {
            const double d = std::max(std::abs(std::min(d_hi[i], 0.0)), kMinLimitDistance);
            tau[i] -= cfg.eta9 * (1.0 / d - 1.0 / cfg.margin_hi[i]) / (d * d);
        }
    }
    return tau;
}

VecX nullspace_torque(const VecX& theta, const VecX& theta_dot, const VecX& theta_nominal)
{
    return -(theta - theta_nominal) - theta_dot;
}

MatX nullspace_projector(const MatX& jac)
{
    const MatX jt = jac.transpose();
    return MatX::Identity(jac.cols(), jac.cols()) - jt * pinv(jt);
}

VecX total_torque(const MatX& jac, const VecX& theta, const VecX& theta_dot, const VecX& theta_nominal,
                  const VecX& tau_lim, const Wrench& u_r_d)
{
    return tau_lim + nullspace_projector(jac) * nullspace_torque(theta, theta_dot, theta_nominal) +
           jac.transpose() * u_r_d;
}

VecX total_torque(const SerialChain& chain, const VecX& theta, const VecX& theta_dot, const Wrench& u_r_d,
                  const JointLimitConfig& cfg)
{
    return total_torque(jacobian(chain, theta), theta, theta_dot, chain.nominal(),
                        joint_limit_torque(chain, theta, cfg), u_r_d);
}

Wrench realized_wrench(const MatX& jac, const VecX& tau)
{
    return pinv(jac.transpose()) * tau;
}

// ---------------------------------------------------------------------------

void AdmittanceParams::validate() const
{
    for (double x : {mass_lin, mass_rot, damping_lin, damping_rot, v_max, a_max}) {
        if (!(x > 0.0)) throw ConfigError("admittance parameters must be positive");
    }
}

Twist admittance_step(const Twist& v, const Wrench& u_ext, const AdmittanceParams& p, double dt)
{
    Vec3 a_lin = (u_ext.head<3>() - p.damping_lin * v.head<3>()) / p.mass_lin;
    Vec3 a_rot = (u_ext.tail<3>() - p.damping_rot * v.tail<3>()) / p.mass_rot;
    a_lin = clamp_norm(a_lin, p.a_max);
    a_rot = clamp_norm(a_rot, p.a_max);
    return stack(clamp_norm(v.head<3>() + dt * a_lin, p.v_max), clamp_norm(v.tail<3>() + dt * a_rot, p.v_max));
}

// ---------------------------------------------------------------------------

Wrench lock_wrench(const Pose& x, const Twist& v, const LockConfig& cfg)
{
    const Vec3 lock_p = Vec3::Ones() - cfg.mask.pos;
    const Vec3 lock_r = Vec3::Ones() - cfg.mask.rot;
    const Vec3 target_p(x.p.x(), x.p.y(), cfg.z_height);
    const Vec3 f = lock_p.cwiseProduct(cfg.k_lin * (target_p - x.p) - cfg.d_lin * v.head<3>());

    const Vec3 rpy = x.q.to_rpy();
    const Vec3 target_rpy(cfg.mask.rot.x() > 0.0 ? rpy.x() : 0.0, cfg.mask.rot.y() > 0.0 ? rpy.y() : 0.0,
                          cfg.mask.rot.z() > 0.0 ? rpy.z() : 0.0);
    const UnitQuaternion target_q = UnitQuaternion::from_rpy(target_rpy.x(), target_rpy.y(), target_rpy.z());
    const Vec3 err = omega_between(target_q, x.q, 1.0);
    const Vec3 t = lock_r.cwiseProduct(cfg.k_rot * err - cfg.d_rot * v.tail<3>());
    return stack(f, t);
}

}  // namespace comanip
