#pragma once

#include "comanip/rotmath.hpp"
#include "comanip/types.hpp"

namespace comanip {

/// Linear Cartesian DS x_dot = A (x - p*), A diagonal.
struct PosDsParams {
    Vec3 a_diag = Vec3::Constant(-0.5);  // 1/s
    Vec3 attractor = Vec3::Zero();       // m
};

/// Rotational DS omega = A k_q log(q * conj(q*)), A diagonal.
struct RotDsParams {
    Vec3 a_diag = Vec3::Constant(-0.75);  // 1/s
    UnitQuaternion attractor;
};

Vec3 eval_pos(const PosDsParams& params, const Vec3& x);

/// |vec(q * conj(q*))| / arccos(scalar(q * conj(q*))), with the removable
/// singularity at q == q* mapped to 1.
double k_q(const UnitQuaternion& q, const UnitQuaternion& q_star);

/// A_o k_q log(q * conj(q*)).
Vec3 eval_rot(const RotDsParams& params, const UnitQuaternion& q);

/// Closed form of eval_rot via the k_q identity: A_o vec(q * conj(q*)).
Vec3 eval_rot_vec_form(const RotDsParams& params, const UnitQuaternion& q);

/// Strictly negative diagonal. The stored matrices are diagonal, so the
/// symmetry condition on A_o holds by construction.
bool check_gas(const PosDsParams& params);
bool check_gas(const RotDsParams& params);

/// Position/orientation pair of estimated or hidden intent.
struct DsIntent {
    PosDsParams pos;
    RotDsParams rot;
};

inline Twist eval_ds(const DsIntent& intent, const Vec3& x, const UnitQuaternion& q)
{
    return stack(eval_pos(intent.pos, x), eval_rot(intent.rot, q));
}

}  // namespace comanip
