#include "comanip/body_models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "comanip/errors.hpp"
#include "comanip/linalg.hpp"

namespace comanip {

namespace {

Vec3 vec3_from(const nlohmann::json& j)
{
    if (!j.is_array() || j.size() != 3) throw ConfigError("expected a 3-element array");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Pose pose_from(const nlohmann::json& j)
{
    Pose p;
    if (j.contains("xyz")) p.p = vec3_from(j.at("xyz"));
    if (j.contains("rpy")) {
        const Vec3 rpy = vec3_from(j.at("rpy"));
        p.q = UnitQuaternion::from_rpy(rpy.x(), rpy.y(), rpy.z());
    }
    return p;
}

nlohmann::json pose_to(const Pose& p)
{
    const Vec3 rpy = p.q.to_rpy();
    return {{"xyz", {p.p.x(), p.p.y(), p.p.z()}}, {"rpy", {rpy.x(), rpy.y(), rpy.z()}}};
}

VecX per_joint(const nlohmann::json& j, std::size_t n, double fallback)
{
    VecX out = VecX::Constant(static_cast<Eigen::Index>(n), fallback);
    if (j.is_null()) return out;
    if (j.is_number()) return VecX::Constant(static_cast<Eigen::Index>(n), j.get<double>());
    if (!j.is_array() || j.size() != n) throw ConfigError("per-joint array has the wrong length");
    for (std::size_t i = 0; i < n; ++i) out[static_cast<Eigen::Index>(i)] = j[i].get<double>();
    return out;
}

// Homogeneous transform of a joint displaced by q along/about its axis.
Pose joint_motion(const Joint& joint, double q)
{
    if (joint.type == JointType::Prismatic) return {joint.axis * q, UnitQuaternion()};
    return {Vec3::Zero(), UnitQuaternion::from_axis_angle(joint.axis, q)};
}

}  // namespace

SerialChain::SerialChain(std::string name, Pose base, std::vector<Joint> joints, Pose tool, VecX nominal,
                         VecX margin_lo, VecX margin_hi)
    : name_(std::move(name)),
      base_(base),
      joints_(std::move(joints)),
      tool_(tool),
      nominal_(std::move(nominal)),
      margin_lo_(std::move(margin_lo)),
      margin_hi_(std::move(margin_hi))
{
    const auto n = static_cast<Eigen::Index>(joints_.size());
    if (n == 0) throw ConfigError("chain '" + name_ + "' has no joints");
    if (nominal_.size() != n || margin_lo_.size() != n || margin_hi_.size() != n) {
        throw ConfigError("chain '" + name_ + "': per-joint vectors do not match the joint count");
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        const Joint& jt = joints_[static_cast<std::size_t>(i)];
        if (!(jt.limit_lo < jt.limit_hi)) throw ConfigError("chain '" + name_ + "': joint limits not ordered");
        if (nominal_[i] < jt.limit_lo || nominal_[i] > jt.limit_hi) {
            throw ConfigError("chain '" + name_ + "': nominal configuration outside limits");
        }
        if (!(margin_lo_[i] > 0.0) || !(margin_hi_[i] > 0.0)) {
            throw ConfigError("chain '" + name_ + "': safety margins must be positive");
        }
    }

    reach_ = tool_.p.norm();
    for (std::size_t i = 0; i < joints_.size(); ++i) {
        if (i > 0) reach_ += joints_[i].origin.p.norm();
        if (joints_[i].type == JointType::Prismatic) {
            reach_ += std::max(std::abs(joints_[i].limit_lo), std::abs(joints_[i].limit_hi));
        }
    }
}

SerialChain SerialChain::from_json(const nlohmann::json& j)
{
    try {
        std::vector<Joint> joints;
        for (const auto& jj : j.at("joints")) {
            Joint jt;
            jt.name = jj.value("name", "joint" + std::to_string(joints.size() + 1));
            const std::string type = jj.value("type", "revolute");
            if (type == "revolute") {
                jt.type = JointType::Revolute;
            } else if (type == "prismatic") {
                jt.type = JointType::Prismatic;
            } else {
                throw ConfigError("unknown joint type '" + type + "'");
            }
            jt.axis = vec3_from(jj.at("axis"));
            if (jt.axis.norm() < 1e-12) throw ConfigError("joint axis must be nonzero");
            jt.axis.normalize();
            jt.origin.p = jj.contains("origin_xyz") ? vec3_from(jj.at("origin_xyz")) : Vec3::Zero();
            if (jj.contains("origin_rpy")) {
                const Vec3 rpy = vec3_from(jj.at("origin_rpy"));
                jt.origin.q = UnitQuaternion::from_rpy(rpy.x(), rpy.y(), rpy.z());
            }
            jt.limit_lo = jj.at("limit_lo").get<double>();
            jt.limit_hi = jj.at("limit_hi").get<double>();
            joints.push_back(jt);
        }
        const std::size_t n = joints.size();
        const Pose base = j.contains("base") ? pose_from(j.at("base")) : Pose{};
        const Pose tool = j.contains("tool") ? pose_from(j.at("tool")) : Pose{};
        VecX nominal = per_joint(j.at("nominal"), n, 0.0);
        VecX mlo = per_joint(j.contains("margin_lo") ? j.at("margin_lo") : nlohmann::json(), n, 0.1);
        VecX mhi = per_joint(j.contains("margin_hi") ? j.at("margin_hi") : nlohmann::json(), n, 0.1);
        return {j.value("name", "chain"), base, std::move(joints), tool, std::move(nominal), std::move(mlo),
                std::move(mhi)};
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("chain description: ") + e.what());
    }
}

SerialChain SerialChain::load(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open chain file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("chain file '" + path + "': " + e.what());
    }
    return from_json(j);
}

nlohmann::json SerialChain::to_json() const
{
    nlohmann::json joints = nlohmann::json::array();
    for (const auto& jt : joints_) {
        const Vec3 rpy = jt.origin.q.to_rpy();
        joints.push_back({{"name", jt.name},
                          {"type", jt.type == JointType::Revolute ? "revolute" : "prismatic"},
                          {"axis", {jt.axis.x(), jt.axis.y(), jt.axis.z()}},
                          {"origin_xyz", {jt.origin.p.x(), jt.origin.p.y(), jt.origin.p.z()}},
                          {"origin_rpy", {rpy.x(), rpy.y(), rpy.z()}},
                          {"limit_lo", jt.limit_lo},
                          {"limit_hi", jt.limit_hi}});
    }
    auto vec = [](const VecX& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    return {{"name", name_},       {"base", pose_to(base_)},         {"tool", pose_to(tool_)},
            {"joints", joints},    {"nominal", vec(nominal_)},       {"margin_lo", vec(margin_lo_)},
            {"margin_hi", vec(margin_hi_)}};
}

VecX SerialChain::lower() const
{
    VecX v(dof());
    for (int i = 0; i < dof(); ++i) v[i] = joints_[static_cast<std::size_t>(i)].limit_lo;
    return v;
}

VecX SerialChain::upper() const
{
    VecX v(dof());
    for (int i = 0; i < dof(); ++i) v[i] = joints_[static_cast<std::size_t>(i)].limit_hi;
    return v;
}

bool SerialChain::within_limits(const VecX& theta, double tol) const
{
    for (int i = 0; i < dof(); ++i) {
        const Joint& jt = joints_[static_cast<std::size_t>(i)];
        if (theta[i] < jt.limit_lo - tol || theta[i] > jt.limit_hi + tol) return false;
    }
    return true;
}

VecX SerialChain::clamp(const VecX& theta) const
{
    VecX out = theta;
    for (int i = 0; i < dof(); ++i) {
        const Joint& jt = joints_[static_cast<std::size_t>(i)];
        out[i] = std::clamp(out[i], jt.limit_lo, jt.limit_hi);
    }
    return out;
}

Vec3 SerialChain::first_joint_position() const
{
    return base_.compose(joints_.front().origin).p;
}

void fk_jacobian(const SerialChain& chain, const VecX& theta, Pose& pose, MatX& jac)
{
    const int n = chain.dof();
    std::vector<Vec3> axes(static_cast<std::size_t>(n));
    std::vector<Vec3> origins(static_cast<std::size_t>(n));
    Pose t = chain.base();
    for (int i = 0; i < n; ++i) {
        const Joint& jt = chain.joints()[static_cast<std::size_t>(i)];
        t = t.compose(jt.origin);
        axes[static_cast<std::size_t>(i)] = t.q.to_matrix() * jt.axis;
        origins[static_cast<std::size_t>(i)] = t.p;
        t = t.compose(joint_motion(jt, theta[i]));
    }
    pose = t.compose(chain.tool());

    jac.resize(6, n);
    for (int i = 0; i < n; ++i) {
        const Vec3& z = axes[static_cast<std::size_t>(i)];
        if (chain.joints()[static_cast<std::size_t>(i)].type == JointType::Prismatic) {
            jac.col(i) << z, Vec3::Zero();
        } else {
            jac.col(i) << z.cross(pose.p - origins[static_cast<std::size_t>(i)]), z;
        }
    }
}

Pose fk(const SerialChain& chain, const VecX& theta)
{
    Pose t = chain.base();
    for (int i = 0; i < chain.dof(); ++i) {
        const Joint& jt = chain.joints()[static_cast<std::size_t>(i)];
        t = t.compose(jt.origin).compose(joint_motion(jt, theta[i]));
    }
    return t.compose(chain.tool());
}

MatX jacobian(const SerialChain& chain, const VecX& theta)
{
    Pose p;
    MatX j;
    fk_jacobian(chain, theta, p, j);
    return j;
}

std::pair<VecX, VecX> joint_limit_distances(const SerialChain& chain, const VecX& theta)
{
    return {theta - chain.lower(), theta - chain.upper()};
}

Vec6 pose_error(const Pose& target, const Pose& current)
{
    return stack(target.p - current.p, omega_between(target.q, current.q, 1.0));
}

// ---------------------------------------------------------------------------

Mat6 RigidObject::mass_matrix(const UnitQuaternion& q) const
{
    const Mat3 r = q.to_matrix();
    Mat6 m = Mat6::Zero();
    m.topLeftCorner<3, 3>() = mass * Mat3::Identity();
    m.bottomRightCorner<3, 3>() = r * inertia * r.transpose();
    return m;
}

Wrench RigidObject::gravity() const
{
    Wrench g = Wrench::Zero();
    g[2] = mass * kGravity;
    return g;
}

Mat6 grasp_transpose(const Vec3& r)
{
    Mat6 g = Mat6::Identity();
    g.bottomLeftCorner<3, 3>() = skew(r);
    return g;
}

Mat6 grasp(const Vec3& r)
{
    return grasp_transpose(r).transpose();
}

// ---------------------------------------------------------------------------

Mat3 manipulability(const HumanArm& arm)
{
    const MatX j = jacobian(arm.chain, arm.theta).topRows(3);
    Mat3 e = j * j.transpose();
    return symmetrize(e) + 1e-9 * Mat3::Identity();
}

Mat3 local_ellipsoid(const Mat3& E, const Vec3& p_star, const Vec3& hand, double decay)
{
    const double mu = std::exp(-decay * (p_star - hand).squaredNorm());
    return (1.0 - mu) * Mat3::Identity() + mu * E;
}

// ---------------------------------------------------------------------------

namespace {

bool within_tolerance(const Vec6& err, const IkConfig& cfg)
{
    const double pe = err.head<3>().norm();
    const double re = cfg.position_only ? 0.0 : err.tail<3>().norm();
    return pe < cfg.pos_tol && re < cfg.rot_tol;
}

}  // namespace

IkResult solve_ik(const SerialChain& chain, const Pose& target, const VecX& seed, const IkConfig& cfg)
{
    IkResult res;
    res.theta = chain.clamp(seed);
    Pose pose;
    MatX jac;
    const int rows = cfg.position_only ? 3 : 6;
    const double lambda2 = cfg.damping * cfg.damping;
    for (int it = 0; it <= cfg.max_iterations; ++it) {
        fk_jacobian(chain, res.theta, pose, jac);
        const Vec6 err = pose_error(target, pose);
        res.pos_error = err.head<3>().norm();
        res.rot_error = err.tail<3>().norm();
        res.iterations = it;
        if (within_tolerance(err, cfg)) {
            res.converged = true;
            return res;
        }
        if (it == cfg.max_iterations) break;
        const MatX j = jac.topRows(rows);
        const VecX e = err.head(rows);
        const MatX jjt = j * j.transpose() + lambda2 * MatX::Identity(rows, rows);
        VecX step = j.transpose() * jjt.ldlt().solve(e);
        const double m = step.cwiseAbs().maxCoeff();
        if (m > cfg.max_step) step *= cfg.max_step / m;
        res.theta = chain.clamp(res.theta + step);
    }
    return res;
}

IkResult ik_solve_multi(const SerialChain& chain, const Pose& target, const IkConfig& cfg, const VecX* warm_start)
{
    IkResult best;
    best.pos_error = std::numeric_limits<double>::infinity();
    best.theta = chain.nominal();

    const Vec3 shoulder = chain.first_joint_position();
    if ((target.p - shoulder).norm() > chain.reach() + cfg.pos_tol) return best;

    auto consider = [&](const VecX& seed) {
        IkResult r = solve_ik(chain, target, seed, cfg);
        if (r.converged || r.pos_error < best.pos_error) best = r;
        return r.converged;
    };

    if (warm_start != nullptr && warm_start->size() == chain.dof() && consider(*warm_start)) return best;
    if (consider(chain.nominal())) return best;

    std::mt19937_64 rng(cfg.seed);
    const VecX lo = chain.lower();
    const VecX hi = chain.upper();
    for (int s = 1; s < cfg.n_seeds; ++s) {
        VecX seed(chain.dof());
        for (int i = 0; i < chain.dof(); ++i) {
            std::uniform_real_distribution<double> u(lo[i], hi[i]);
            seed[i] = u(rng);
        }
        if (consider(seed)) return best;
    }
    return best;
}

bool ik_feasible(const SerialChain& chain, const Pose& target, const IkConfig& cfg)
{
    const IkResult r = ik_solve_multi(chain, target, cfg);
    return r.converged && chain.within_limits(r.theta);
}

bool verify_witness(const SerialChain& chain, const Pose& target, const VecX& witness, const IkConfig& cfg)
{
    if (witness.size() != chain.dof() || !chain.within_limits(witness)) return false;
    return within_tolerance(pose_error(target, fk(chain, witness)), cfg);
}

FeasibilityOracle::FeasibilityOracle(const SerialChain* chain, Pose robot_grasp, IkConfig cfg)
    : chain_(chain), robot_grasp_(robot_grasp), cfg_(cfg)
{
}

bool FeasibilityOracle::check(const Pose& object_goal, std::size_t slot)
{
    if (witnesses_.size() <= slot) witnesses_.resize(slot + 1);
    ++queries_;
    const Pose target = end_effector_target(object_goal);
    auto& w = witnesses_[slot];
    const IkResult r = ik_solve_multi(*chain_, target, cfg_, w ? &*w : nullptr);
    const bool ok = r.converged && chain_->within_limits(r.theta);
    if (ok) w = r.theta;
    return ok;
}

bool FeasibilityOracle::check(const Pose& object_goal)
{
    ++queries_;
    const Pose target = end_effector_target(object_goal);
    const IkResult r = ik_solve_multi(*chain_, target, cfg_);
    return r.converged && chain_->within_limits(r.theta);
}

const VecX* FeasibilityOracle::witness(std::size_t slot) const
{
    if (slot >= witnesses_.size() || !witnesses_[slot]) return nullptr;
    return &*witnesses_[slot];
}

void FeasibilityOracle::remap_slots(const std::vector<std::size_t>& source_index)
{
    std::vector<std::optional<VecX>> next(source_index.size());
    for (std::size_t i = 0; i < source_index.size(); ++i) {
        if (source_index[i] < witnesses_.size()) next[i] = witnesses_[source_index[i]];
    }
    witnesses_ = std::move(next);
}

TrackResult track_step(const SerialChain& chain, const VecX& theta, const Pose& target, double dt,
                       bool position_only, double null_gain)
{
    TrackResult res;
    VecX th = theta;
    Pose pose;
    MatX jac;
    const int rows = position_only ? 3 : 6;
    for (int it = 0; it < 2; ++it) {
        fk_jacobian(chain, th, pose, jac);
        const Vec6 err = pose_error(target, pose);
        const MatX j = jac.topRows(rows);
        const MatX jp = pinv(j, 1e-3);
        VecX step = jp * err.head(rows);
        if (it == 0) {
            const MatX null = MatX::Identity(chain.dof(), chain.dof()) - jp * j;
            step += null * (null_gain * dt * (chain.nominal() - th));
        }
        th = chain.clamp(th + step);
    }
    fk_jacobian(chain, th, pose, jac);
    const Vec6 err = pose_error(target, pose);
    res.pos_error = err.head<3>().norm();
    res.rot_error = position_only ? 0.0 : err.tail<3>().norm();
    res.theta_dot = (th - theta) / dt;
    res.theta = std::move(th);
    return res;
}

}  // namespace comanip
