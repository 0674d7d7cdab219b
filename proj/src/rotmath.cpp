#include "comanip/rotmath.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace comanip {

namespace {

constexpr double kZeroVectorNorm = 1e-12;

}  // namespace

Mat3 skew(const Vec3& u)
{
    Mat3 m;
    m << 0.0, -u.z(), u.y(),
        u.z(), 0.0, -u.x(),
        -u.y(), u.x(), 0.0;
    return m;
}

UnitQuaternion UnitQuaternion::from_stored(double s, const Vec3& u)
{
    const double n2 = s * s + u.squaredNorm();
    if (!(std::abs(n2 - 1.0) <= 2e-12) || s < 0.0) throw std::invalid_argument("UnitQuaternion: stored value is not canonical");
    UnitQuaternion q;
    q.s_ = s;
    q.u_ = u;
    return q;
}

UnitQuaternion::UnitQuaternion(double s, const Vec3& u)
{
    const double n = std::sqrt(s * s + u.squaredNorm());
    if (!(n > 1e-300) || !std::isfinite(n)) {
        throw std::invalid_argument("UnitQuaternion: zero or non-finite quaternion");
    }
    s_ = s / n;
    u_ = u / n;

    bool flip = s_ < 0.0;
    if (s_ == 0.0) {
        for (int i = 0; i < 3; ++i) {
            if (u_[i] != 0.0) {
                flip = u_[i] < 0.0;
                break;
            }
        }
    }
    if (flip) {
        s_ = -s_;
        u_ = -u_;
    }
    // -0.0 would break bitwise equality of otherwise identical values
    if (s_ == 0.0) s_ = 0.0;
}

UnitQuaternion UnitQuaternion::from_axis_angle(const Vec3& axis, double angle)
{
    const double n = axis.norm();
    if (n < kZeroVectorNorm) return {};
    return {std::cos(angle / 2.0), axis / n * std::sin(angle / 2.0)};
}

UnitQuaternion UnitQuaternion::from_rpy(double roll, double pitch, double yaw)
{
    const auto qx = from_axis_angle(Vec3::UnitX(), roll);
    const auto qy = from_axis_angle(Vec3::UnitY(), pitch);
    const auto qz = from_axis_angle(Vec3::UnitZ(), yaw);
    return qz * qy * qx;
}

UnitQuaternion UnitQuaternion::from_matrix(const Mat3& rot)
{
    const Eigen::Quaterniond e(rot);
    return {e.w(), Vec3(e.x(), e.y(), e.z())};
}

UnitQuaternion UnitQuaternion::conj() const
{
    return {s_, -u_};
}

Mat3 UnitQuaternion::to_matrix() const
{
    // R = (s^2 - u.u) I + 2 u u^T + 2 s S(u)
    return (s_ * s_ - u_.squaredNorm()) * Mat3::Identity() + 2.0 * u_ * u_.transpose() + 2.0 * s_ * skew(u_);
}

Vec3 UnitQuaternion::to_rpy() const
{
    const Mat3 r = to_matrix();
    const double pitch = std::asin(std::clamp(-r(2, 0), -1.0, 1.0));
    const double roll = std::atan2(r(2, 1), r(2, 2));
    const double yaw = std::atan2(r(1, 0), r(0, 0));
    return {roll, pitch, yaw};
}

double UnitQuaternion::angle_to(const UnitQuaternion& other) const
{
    const UnitQuaternion d = *this * other.conj();
    return 2.0 * std::atan2(d.u().norm(), d.s());
}

UnitQuaternion quat_mul(const UnitQuaternion& q1, const UnitQuaternion& q2)
{
    const double s = q1.s() * q2.s() - q1.u().dot(q2.u());
    const Vec3 u = q1.s() * q2.u() + q2.s() * q1.u() + skew(q1.u()) * q2.u();
    return {s, u};
}

Vec3 log_map(const UnitQuaternion& q)
{
    const double n = q.u().norm();
    if (n < kZeroVectorNorm) return Vec3::Zero();
    // atan2(|u|, s) == arccos(s) on S^3 but keeps full precision near s = 1
    return std::atan2(n, q.s()) * q.u() / n;
}

UnitQuaternion exp_map(const Vec3& omega, double dt)
{
    const Vec3 half = omega * dt / 2.0;
    const double n = half.norm();
    if (n > std::numbers::pi + 1e-12) {
        throw std::domain_error("exp_map: |omega dt / 2| exceeds pi");
    }
    if (n < kZeroVectorNorm) return {};
    return {std::cos(n), half / n * std::sin(n)};
}

Vec3 omega_between(const UnitQuaternion& q1, const UnitQuaternion& q2, double dt)
{
    if (!(dt > 0.0)) throw std::invalid_argument("omega_between: dt must be positive");
    return 2.0 * log_map(q1 * q2.conj()) / dt;
}

Vec4 propagate(const UnitQuaternion& q, const Vec3& omega)
{
    Vec4 out;
    out[0] = -0.5 * q.u().dot(omega);
    out.tail<3>() = 0.5 * (q.s() * Mat3::Identity() - skew(q.u())) * omega;
    return out;
}

UnitQuaternion integrate(const UnitQuaternion& q, const Vec3& omega, double dt)
{
    return exp_map(omega, dt) * q;
}

Vec4 aligned_coeffs(const UnitQuaternion& reference, const UnitQuaternion& q)
{
    Vec4 c = q.coeffs();
    if (c.dot(reference.coeffs()) < 0.0) c = -c;
    return c;
}

}  // namespace comanip
