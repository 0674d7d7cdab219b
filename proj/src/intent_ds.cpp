#include "comanip/intent_ds.hpp"

#include <algorithm>
#include <cmath>

namespace comanip {

Vec3 eval_pos(const PosDsParams& params, const Vec3& x)
{
    return params.a_diag.cwiseProduct(x - params.attractor);
}

double k_q(const UnitQuaternion& q, const UnitQuaternion& q_star)
{
    const UnitQuaternion d = q * q_star.conj();
    if (d.s() > 1.0 - 1e-12) return 1.0;
    const double n = d.u().norm();
    return n / std::atan2(n, d.s());
}

Vec3 eval_rot(const RotDsParams& params, const UnitQuaternion& q)
{
    const UnitQuaternion d = q * params.attractor.conj();
    return params.a_diag.cwiseProduct(k_q(q, params.attractor) * log_map(d));
}

Vec3 eval_rot_vec_form(const RotDsParams& params, const UnitQuaternion& q)
{
    const UnitQuaternion d = q * params.attractor.conj();
    return params.a_diag.cwiseProduct(d.u());
}

bool check_gas(const PosDsParams& params)
{
    return params.a_diag.allFinite() && (params.a_diag.array() < 0.0).all();
}

bool check_gas(const RotDsParams& params)
{
    return params.a_diag.allFinite() && (params.a_diag.array() < 0.0).all();
}

}  // namespace comanip
