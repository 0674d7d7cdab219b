#pragma once

#include <stdexcept>

#include "comanip/types.hpp"

namespace comanip {

/// Skew-symmetric cross-product matrix, skew(a) * b == a.cross(b).
Mat3 skew(const Vec3& u);

/// Unit quaternion [s, u] with the double cover resolved: s >= 0, and when
/// s == 0 the first nonzero component of u is positive. Every constructor
/// renormalizes, so instances are always on S^3.
class UnitQuaternion {
public:
    UnitQuaternion() : s_(1.0), u_(Vec3::Zero()) {}

    /// Throws std::invalid_argument for a (numerically) zero 4-vector.
    UnitQuaternion(double s, const Vec3& u);

    static UnitQuaternion identity() { return {}; }
    static UnitQuaternion from_axis_angle(const Vec3& axis, double angle);
    /// Intrinsic Z-Y-X composition: Rz(yaw) * Ry(pitch) * Rx(roll).
    static UnitQuaternion from_rpy(double roll, double pitch, double yaw);
    static UnitQuaternion from_matrix(const Mat3& rot);
    /// Keeps the given bits (values read back from a log). Throws
    /// std::invalid_argument unless the norm is within 1e-12 of one and s >= 0.
    static UnitQuaternion from_stored(double s, const Vec3& u);

    double s() const { return s_; }
    const Vec3& u() const { return u_; }
    Vec4 coeffs() const { return Vec4(s_, u_.x(), u_.y(), u_.z()); }

    UnitQuaternion conj() const;
    Mat3 to_matrix() const;
    /// (roll, pitch, yaw) matching from_rpy.
    Vec3 to_rpy() const;

    /// Rotation angle in [0, pi] between this and other.
    double angle_to(const UnitQuaternion& other) const;

    bool operator==(const UnitQuaternion& o) const { return s_ == o.s_ && u_ == o.u_; }

private:
    double s_;
    Vec3 u_;
};

/// Partitioned product [s1 s2 - u1.u2, s1 u2 + s2 u1 + S(u1) u2].
UnitQuaternion quat_mul(const UnitQuaternion& q1, const UnitQuaternion& q2);
inline UnitQuaternion operator*(const UnitQuaternion& a, const UnitQuaternion& b) { return quat_mul(a, b); }

/// Geometric logarithm arccos(s) u/|u|; zero on the |u| < 1e-12 branch.
/// With the canonical sign the result norm is at most pi/2.
Vec3 log_map(const UnitQuaternion& q);

/// exp(omega dt / 2). Throws std::domain_error if |omega dt / 2| > pi.
UnitQuaternion exp_map(const Vec3& omega, double dt);

/// Angular velocity that rotates q2 onto q1 in dt: 2 log(q1 * conj(q2)) / dt.
Vec3 omega_between(const UnitQuaternion& q1, const UnitQuaternion& q2, double dt);

/// Quaternion propagation (s_dot, u_dot) = (-u.w / 2, (s I - S(u)) w / 2).
Vec4 propagate(const UnitQuaternion& q, const Vec3& omega);

/// exp(omega dt / 2) * q.
UnitQuaternion integrate(const UnitQuaternion& q, const Vec3& omega, double dt);

/// q2 flipped, if needed, into the hemisphere of q1 (raw 4-vector, not
/// canonicalized). Used where sign-consistent coordinates are required.
Vec4 aligned_coeffs(const UnitQuaternion& reference, const UnitQuaternion& q);

/// Rigid pose: position + orientation, world frame.
struct Pose {
    Vec3 p = Vec3::Zero();
    UnitQuaternion q;

    /// this * other (other expressed in this frame).
    Pose compose(const Pose& other) const { return {p + q.to_matrix() * other.p, q * other.q}; }
    Pose inverse() const
    {
        const UnitQuaternion qi = q.conj();
        return {-(qi.to_matrix() * p), qi};
    }
};

}  // namespace comanip
