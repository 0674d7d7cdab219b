#pragma once

#include <Eigen/Dense>

namespace comanip {

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using VecX = Eigen::VectorXd;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using MatX = Eigen::MatrixXd;

// Stacked [linear; angular]. Twists are (v, omega), wrenches are (f, tau),
// both in world coordinates unless stated otherwise.
using Twist = Vec6;
using Wrench = Vec6;

inline constexpr double kGravity = 9.81;

inline Vec3 linear(const Vec6& v) { return v.head<3>(); }
inline Vec3 angular(const Vec6& v) { return v.tail<3>(); }

inline Vec6 stack(const Vec3& lin, const Vec3& ang)
{
    Vec6 out;
    out << lin, ang;
    return out;
}

}  // namespace comanip
