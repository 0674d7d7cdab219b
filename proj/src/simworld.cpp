#include "comanip/simworld.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <spdlog/spdlog.h>

#include "comanip/errors.hpp"
#include "comanip/linalg.hpp"
#include "json_util.hpp"

namespace comanip {

using detail::reject_unknown;
using detail::to_json_array;
using detail::vec3_from;
using detail::vecx_from;

namespace {

Vec3 clamp_norm(const Vec3& v, double limit)
{
    const double n = v.norm();
    return n > limit ? Vec3(v * (limit / n)) : v;
}

bool finite(const SimState& s)
{
    return s.x.p.allFinite() && s.v.allFinite() && s.theta.allFinite() && std::isfinite(s.x.q.s()) &&
           s.x.q.u().allFinite();
}

nlohmann::json pose_spec_json(const PoseSpec& p) { return {{"xyz", to_json_array(p.xyz)}, {"rpy", to_json_array(p.rpy)}}; }

PoseSpec pose_spec_from(const nlohmann::json& j, const std::string& what)
{
    reject_unknown(j, {"xyz", "rpy"}, what);
    PoseSpec p;
    p.xyz = vec3_from(j.at("xyz"), what + ".xyz");
    if (j.contains("rpy")) p.rpy = vec3_from(j.at("rpy"), what + ".rpy");
    return p;
}

std::string resolve(const std::string& path, const std::string& base_dir)
{
    const std::filesystem::path p(path);
    if (p.is_absolute()) return path;
    return (std::filesystem::path(base_dir) / p).lexically_normal().string();
}

}  // namespace

std::string to_string(ControllerKind k)
{
    switch (k) {
    case ControllerKind::proposed: return "proposed";
    case ControllerKind::admittance: return "admittance";
    case ControllerKind::fixed_goal_ds: return "fixed_goal_ds";
    }
    return "proposed";
}

ControllerKind controller_from_string(const std::string& s)
{
    if (s == "proposed") return ControllerKind::proposed;
    if (s == "admittance") return ControllerKind::admittance;
    if (s == "fixed_goal_ds") return ControllerKind::fixed_goal_ds;
    throw ConfigError("unknown controller '" + s + "' (expected proposed, admittance or fixed_goal_ds)");
}

// ---------------------------------------------------------------------------

DsIntent HumanGoal::intent() const
{
    DsIntent d;
    const Pose g = goal.pose();
    d.pos.a_diag = a_pos;
    d.pos.attractor = g.p;
    d.rot.a_diag = a_rot;
    d.rot.attractor = g.q;
    return d;
}

const HumanGoal& HumanPolicy::active(double time) const
{
    if (schedule.empty()) throw ConfigError("human policy: empty goal schedule");
    const HumanGoal* cur = &schedule.front();
    for (const auto& g : schedule) {
        if (g.t <= time) cur = &g;
    }
    return *cur;
}

void HumanPolicy::validate() const
{
    if ((k_lin.array() < 0.0).any() || (k_rot.array() < 0.0).any()) throw ConfigError("human gains must be >= 0");
    if (!(f_max > 0.0) || !(tau_max > 0.0)) throw ConfigError("human saturations must be positive");
    if (schedule.empty()) throw ConfigError("human policy: empty goal schedule");
    for (std::size_t i = 0; i < schedule.size(); ++i) {
        const auto& g = schedule[i];
        if (i > 0 && g.t < schedule[i - 1].t) throw ConfigError("human policy: schedule must be sorted by t");
        if ((g.a_pos.array() >= 0.0).any() || (g.a_rot.array() >= 0.0).any()) {
            throw ConfigError("human policy: hidden dynamics must be negative definite");
        }
    }
}

Wrench human_wrench(const Pose& x, const Twist& v, const DsIntent& hidden, const HumanPolicy& policy,
                    const TaskMask& mask)
{
    const Twist f = eval_ds(hidden, x.p, x.q);
    const Vec3 force = mask.pos.cwiseProduct(policy.k_lin.cwiseProduct(f.head<3>() - v.head<3>()));
    const Vec3 torque = mask.rot.cwiseProduct(policy.k_rot.cwiseProduct(f.tail<3>() - v.tail<3>()));
    return stack(clamp_norm(force, policy.f_max), clamp_norm(torque, policy.tau_max));
}

CombinedDynamics combined_dynamics(const RigidObject& object, const Vec6& robot_mass, const Pose& x)
{
    CombinedDynamics d;
    const Vec3 r = object.robot_contact(x).p - x.p;
    d.G_r = grasp(r);
    d.M_l = object.mass_matrix(x.q);
    d.M = d.M_l + d.G_r.transpose() * robot_mass.asDiagonal() * d.G_r;
    d.g_r = (Wrench() << 0.0, 0.0, robot_mass[2] * kGravity, 0.0, 0.0, 0.0).finished();
    d.g_l = object.gravity();
    d.g = d.G_r.transpose() * d.g_r + d.g_l;
    return d;
}

Wrench net_wrench(const CombinedDynamics& dyn, const Wrench& u_r, const Wrench& u_h)
{
    return dyn.G_r.transpose() * u_r + u_h - dyn.g;
}

SimState step(const SimModel& model, const SimState& s, const Wrench& u_r, const Wrench& u_h, double dt)
{
    if (!(dt > 0.0 && dt <= 0.01)) throw std::invalid_argument("step: dt must be in (0, 0.01]");
    const CombinedDynamics dyn = combined_dynamics(model.object, model.robot_mass, s.x);
    const Wrench f = net_wrench(dyn, u_r, u_h);

    SimState n = s;
    n.v = s.v + dt * dyn.M.ldlt().solve(f);
    n.x.p = s.x.p + dt * n.v.head<3>();
    n.t = s.t + dt;
    if (!n.v.allFinite() || n.v.head<3>().norm() > 20.0 || n.v.tail<3>().norm() > 100.0) {
        throw SimFault("object velocity diverged at t = " + std::to_string(n.t));
    }
    n.x.q = integrate(s.x.q, n.v.tail<3>(), dt);

    const TrackResult tr = track_step(model.robot, s.theta, model.object.robot_contact(n.x), dt);
    if (tr.pos_error > model.shadow_tolerance) {
        throw SimFault("shadow arm lost the end effector (error " + std::to_string(tr.pos_error) + " m)");
    }
    n.theta = tr.theta;
    n.theta_dot = tr.theta_dot;

    if (n.human_arm.theta.size() > 0) {
        const Pose hand{model.object.human_contact(n.x).p, UnitQuaternion{}};
        n.human_arm.theta = track_step(n.human_arm.chain, s.human_arm.theta, hand, dt, true).theta;
    }
    if (!finite(n)) throw SimFault("non-finite simulation state at t = " + std::to_string(n.t));
    return n;
}

// ---------------------------------------------------------------------------

void Scenario::validate() const
{
    if (!(horizon > 0.0)) throw ConfigError("scenario: horizon must be positive");
    if (!(dt > 0.0 && dt <= 0.01)) throw ConfigError("scenario: dt must be in (0, 0.01]");
    if (estimator_decimation < 1) throw ConfigError("scenario: estimator_decimation must be >= 1");
    if (!(object_mass > 0.0) || (object_inertia.array() <= 0.0).any()) throw ConfigError("scenario: bad object inertia");
    if ((robot_mass.array() <= 0.0).any()) throw ConfigError("scenario: robot_mass must be positive");
    if (velocity_noise < 0.0) throw ConfigError("scenario: velocity_noise must be >= 0");
    if (eta9 < 0.0) throw ConfigError("scenario: eta9 must be >= 0");
    if (!(shadow_tolerance > 0.0)) throw ConfigError("scenario: shadow_tolerance must be positive");
    if ((fixed_a_pos.array() >= 0.0).any() || (fixed_a_rot.array() >= 0.0).any()) {
        throw ConfigError("scenario: fixed dynamics must be negative");
    }
    for (const Vec3* m : {&mask.pos, &mask.rot}) {
        for (int i = 0; i < 3; ++i) {
            if ((*m)[i] != 0.0 && (*m)[i] != 1.0) throw ConfigError("scenario: mask entries must be 0 or 1");
        }
    }
    if (!(completion.pos > 0.0 && completion.rot > 0.0 && completion.vel > 0.0)) {
        throw ConfigError("scenario: completion thresholds must be positive");
    }
    human.validate();
    filter.validate();
    gains.validate();
    admittance.validate();
}

nlohmann::json Scenario::to_json() const
{
    nlohmann::json sched = nlohmann::json::array();
    for (const auto& g : human.schedule) {
        sched.push_back({{"t", g.t},
                         {"goal", pose_spec_json(g.goal)},
                         {"a_pos", to_json_array(g.a_pos)},
                         {"a_rot", to_json_array(g.a_rot)}});
    }
    nlohmann::json f = filter.to_json();
    f.erase("mask_pos");
    f.erase("mask_rot");
    return {
        {"name", name},
        {"start", pose_spec_json(start)},
        {"horizon", horizon},
        {"dt", dt},
        {"estimator_decimation", estimator_decimation},
        {"mask", {{"pos", to_json_array(mask.pos)}, {"rot", to_json_array(mask.rot)}}},
        {"lock",
         {{"z_height", lock.z_height},
          {"k_lin", lock.k_lin},
          {"d_lin", lock.d_lin},
          {"k_rot", lock.k_rot},
          {"d_rot", lock.d_rot}}},
        {"human",
         {{"k_lin", to_json_array(human.k_lin)},
          {"k_rot", to_json_array(human.k_rot)},
          {"f_max", human.f_max},
          {"tau_max", human.tau_max},
          {"schedule", sched}}},
        {"object",
         {{"mass", object_mass},
          {"inertia", to_json_array(object_inertia)},
          {"robot_grasp", pose_spec_json(robot_grasp)},
          {"human_grasp", pose_spec_json(human_grasp)}}},
        {"robot_mass", to_json_array(robot_mass)},
        {"robot_chain", robot_chain},
        {"human_chain", human_chain},
        {"velocity_noise", velocity_noise},
        {"seed", seed},
        {"controller", to_string(controller)},
        {"filter", f},
        {"gains", {{"lambda_p", to_json_array(gains.lambda_p)}, {"lambda_o", to_json_array(gains.lambda_o)}}},
        {"admittance",
         {{"mass_lin", admittance.mass_lin},
          {"mass_rot", admittance.mass_rot},
          {"damping_lin", admittance.damping_lin},
          {"damping_rot", admittance.damping_rot},
          {"v_max", admittance.v_max},
          {"a_max", admittance.a_max}}},
        {"eta9", eta9},
        {"completion", {{"pos", completion.pos}, {"rot", completion.rot}, {"vel", completion.vel}}},
        {"shadow_tolerance", shadow_tolerance},
        {"fixed_a_pos", to_json_array(fixed_a_pos)},
        {"fixed_a_rot", to_json_array(fixed_a_rot)},
    };
}

Scenario Scenario::from_json(const nlohmann::json& j, const std::string& base_dir)
{
    Scenario s;
    try {
        reject_unknown(j,
                       {"name", "start", "horizon", "dt", "estimator_decimation", "mask", "lock", "human", "object",
                        "robot_mass", "robot_chain", "human_chain", "velocity_noise", "seed", "controller", "filter",
                        "gains", "admittance", "eta9", "completion", "shadow_tolerance", "fixed_a_pos", "fixed_a_rot"},
                       "scenario");
        s.name = j.value("name", s.name);
        if (j.contains("start")) s.start = pose_spec_from(j.at("start"), "scenario.start");
        s.horizon = j.value("horizon", s.horizon);
        s.dt = j.value("dt", s.dt);
        s.estimator_decimation = j.value("estimator_decimation", s.estimator_decimation);
        if (j.contains("mask")) {
            const auto& m = j.at("mask");
            reject_unknown(m, {"pos", "rot"}, "scenario.mask");
            if (m.contains("pos")) s.mask.pos = vec3_from(m.at("pos"), "mask.pos");
            if (m.contains("rot")) s.mask.rot = vec3_from(m.at("rot"), "mask.rot");
        }
        if (j.contains("lock")) {
            const auto& l = j.at("lock");
            reject_unknown(l, {"z_height", "k_lin", "d_lin", "k_rot", "d_rot"}, "scenario.lock");
            s.lock.z_height = l.value("z_height", s.lock.z_height);
            s.lock.k_lin = l.value("k_lin", s.lock.k_lin);
            s.lock.d_lin = l.value("d_lin", s.lock.d_lin);
            s.lock.k_rot = l.value("k_rot", s.lock.k_rot);
            s.lock.d_rot = l.value("d_rot", s.lock.d_rot);
        }
        if (j.contains("human")) {
            const auto& h = j.at("human");
            reject_unknown(h, {"k_lin", "k_rot", "f_max", "tau_max", "schedule"}, "scenario.human");
            if (h.contains("k_lin")) s.human.k_lin = vec3_from(h.at("k_lin"), "human.k_lin");
            if (h.contains("k_rot")) s.human.k_rot = vec3_from(h.at("k_rot"), "human.k_rot");
            s.human.f_max = h.value("f_max", s.human.f_max);
            s.human.tau_max = h.value("tau_max", s.human.tau_max);
            if (h.contains("schedule")) {
                s.human.schedule.clear();
                for (const auto& g : h.at("schedule")) {
                    reject_unknown(g, {"t", "goal", "a_pos", "a_rot"}, "human.schedule[]");
                    HumanGoal hg;
                    hg.t = g.value("t", 0.0);
                    hg.goal = pose_spec_from(g.at("goal"), "human.schedule[].goal");
                    if (g.contains("a_pos")) hg.a_pos = vec3_from(g.at("a_pos"), "a_pos");
                    if (g.contains("a_rot")) hg.a_rot = vec3_from(g.at("a_rot"), "a_rot");
                    s.human.schedule.push_back(hg);
                }
            }
        }
        if (j.contains("object")) {
            const auto& o = j.at("object");
            reject_unknown(o, {"mass", "inertia", "robot_grasp", "human_grasp"}, "scenario.object");
            s.object_mass = o.value("mass", s.object_mass);
            if (o.contains("inertia")) s.object_inertia = vec3_from(o.at("inertia"), "object.inertia");
            if (o.contains("robot_grasp")) s.robot_grasp = pose_spec_from(o.at("robot_grasp"), "object.robot_grasp");
            if (o.contains("human_grasp")) s.human_grasp = pose_spec_from(o.at("human_grasp"), "object.human_grasp");
        }
        if (j.contains("robot_mass")) s.robot_mass = vecx_from(j.at("robot_mass"), 6, "robot_mass");
        s.robot_chain = resolve(j.value("robot_chain", s.robot_chain), base_dir);
        s.human_chain = resolve(j.value("human_chain", s.human_chain), base_dir);
        s.velocity_noise = j.value("velocity_noise", s.velocity_noise);
        s.seed = j.value("seed", s.seed);
        if (j.contains("controller")) s.controller = controller_from_string(j.at("controller").get<std::string>());
        if (j.contains("filter")) s.filter = FilterConfig::from_json(j.at("filter"));
        if (j.contains("gains")) {
            const auto& g = j.at("gains");
            reject_unknown(g, {"lambda_p", "lambda_o"}, "scenario.gains");
            if (g.contains("lambda_p")) s.gains.lambda_p = vec3_from(g.at("lambda_p"), "gains.lambda_p");
            if (g.contains("lambda_o")) s.gains.lambda_o = vec3_from(g.at("lambda_o"), "gains.lambda_o");
        }
        if (j.contains("admittance")) {
            const auto& a = j.at("admittance");
            reject_unknown(a, {"mass_lin", "mass_rot", "damping_lin", "damping_rot", "v_max", "a_max"},
                           "scenario.admittance");
            s.admittance.mass_lin = a.value("mass_lin", s.admittance.mass_lin);
            s.admittance.mass_rot = a.value("mass_rot", s.admittance.mass_rot);
            s.admittance.damping_lin = a.value("damping_lin", s.admittance.damping_lin);
            s.admittance.damping_rot = a.value("damping_rot", s.admittance.damping_rot);
            s.admittance.v_max = a.value("v_max", s.admittance.v_max);
            s.admittance.a_max = a.value("a_max", s.admittance.a_max);
        }
        s.eta9 = j.value("eta9", s.eta9);
        if (j.contains("completion")) {
            const auto& c = j.at("completion");
            reject_unknown(c, {"pos", "rot", "vel"}, "scenario.completion");
            s.completion.pos = c.value("pos", s.completion.pos);
            s.completion.rot = c.value("rot", s.completion.rot);
            s.completion.vel = c.value("vel", s.completion.vel);
        }
        s.shadow_tolerance = j.value("shadow_tolerance", s.shadow_tolerance);
        if (j.contains("fixed_a_pos")) s.fixed_a_pos = vec3_from(j.at("fixed_a_pos"), "fixed_a_pos");
        if (j.contains("fixed_a_rot")) s.fixed_a_rot = vec3_from(j.at("fixed_a_rot"), "fixed_a_rot");
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("scenario: ") + e.what());
    }
    s.filter.mask = s.mask;
    s.lock.mask = s.mask;
    s.validate();
    return s;
}

Scenario Scenario::load(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open scenario file " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("scenario " + path + ": " + e.what());
    }
    return from_json(j, std::filesystem::path(path).parent_path().string());
}

RigidObject Scenario::rigid_object() const
{
    RigidObject o;
    o.mass = object_mass;
    o.inertia = object_inertia.asDiagonal();
    o.robot_grasp = robot_grasp.pose();
    o.human_grasp = human_grasp.pose();
    return o;
}

// ---------------------------------------------------------------------------

ParticleIntentSource::ParticleIntentSource(const FilterConfig& cfg, const SerialChain& robot, const Pose& robot_grasp,
                                           const IkConfig& ik)
    : oracle_(&robot, robot_grasp, ik), filter_(cfg, &oracle_)
{
}

IntentEstimate ParticleIntentSource::update(const Observation& obs, const Mat3& E, double, double dt)
{
    const ConfidenceState before = filter_.snapshot().conf_pos;
    const double c_o_before = filter_.snapshot().conf_rot.c;
    bool diverged = false;
    try {
        filter_.step(obs, E, dt);
    } catch (const EstimatorDiverged&) {
        ++divergences_;
        diverged = true;
    }
    const FilterSnapshot& s = filter_.snapshot();
    const TaskMask& mask = filter_.config().mask;
    last_.intent = s.estimate;
    last_.c_p = s.conf_pos.c;
    last_.c_o = s.conf_rot.c;
    last_.c_dot_p = (s.conf_pos.c - before.c) / dt;
    last_.c_dot_o = (s.conf_rot.c - c_o_before) / dt;
    if (diverged) {
        grad_.reset();
        last_.c_dot_p = last_.c_dot_o = 0.0;
    } else {
        const Vec3 residual =
            mask.pos.cwiseProduct(obs.v_lin) - mask.pos.cwiseProduct(eval_pos(s.estimate.pos, obs.x.p));
        grad_.update(residual, dt, before.c + dt * (before.d - residual.norm()));
    }
    last_.grad_c_p = grad_.value();
    return last_;
}

double ConfidenceRamp::value(double t) const { return std::clamp(c0 + rate * std::max(0.0, t - t0), 0.0, 1.0); }

double ConfidenceRamp::derivative(double t) const
{
    if (t < t0) return 0.0;
    const double c = c0 + rate * (t - t0);
    return (c > 0.0 && c < 1.0) ? rate : 0.0;
}

FixedIntentSource::FixedIntentSource(std::function<DsIntent(double)> intent, ConfidenceRamp c_p, ConfidenceRamp c_o,
                                     bool every_tick)
    : intent_(std::move(intent)), c_p_(c_p), c_o_(c_o), every_tick_(every_tick)
{
}

IntentEstimate FixedIntentSource::update(const Observation&, const Mat3&, double t, double)
{
    IntentEstimate e;
    e.intent = intent_(t);
    e.c_p = c_p_.value(t);
    e.c_o = c_o_.value(t);
    e.c_dot_p = c_p_.derivative(t);
    e.c_dot_o = c_o_.derivative(t);
    return e;
}

std::unique_ptr<IntentSource> make_intent_source(const Scenario& sc, const SerialChain& robot)
{
    switch (sc.controller) {
    case ControllerKind::proposed: {
        FilterConfig cfg = sc.filter;
        cfg.mask = sc.mask;
        cfg.rng_seed = sc.seed * 0x9E3779B97F4A7C15ULL + 1;
        return std::make_unique<ParticleIntentSource>(cfg, robot, sc.robot_grasp.pose());
    }
    case ControllerKind::fixed_goal_ds: {
        const HumanPolicy human = sc.human;
        const Vec3 a_pos = sc.fixed_a_pos;
        const Vec3 a_rot = sc.fixed_a_rot;
        auto intent = [human, a_pos, a_rot](double t) {
            DsIntent d = human.active(t).intent();
            d.pos.a_diag = a_pos;
            d.rot.a_diag = a_rot;
            return d;
        };
        return std::make_unique<FixedIntentSource>(intent, ConfidenceRamp{}, ConfidenceRamp{});
    }
    case ControllerKind::admittance: return nullptr;
    }
    return nullptr;
}

// ---------------------------------------------------------------------------

Simulation::Simulation(Scenario sc, std::unique_ptr<IntentSource> source)
    : sc_(std::move(sc)),
      noise_rng_(sc_.seed),
      acc_(sc_.dt * sc_.estimator_decimation, 5.0),
      alpha_(sc_.dt * sc_.estimator_decimation, 5.0)
{
    sc_.validate();
    sc_.lock.mask = sc_.mask;
    model_.robot = SerialChain::load(sc_.robot_chain);
    model_.object = sc_.rigid_object();
    model_.robot_mass = sc_.robot_mass;
    model_.shadow_tolerance = sc_.shadow_tolerance;
    limits_ = JointLimitConfig::from_chain(model_.robot, sc_.eta9);

    state_.x = sc_.start.pose();
    state_.t = 0.0;
    state_.hidden_intent = sc_.human.active(0.0).intent();
    const IkResult ik = ik_solve_multi(model_.robot, model_.object.robot_contact(state_.x), IkConfig{});
    if (!ik.converged) throw ConfigError("scenario start pose is outside the robot workspace");
    state_.theta = ik.theta;
    state_.theta_dot = VecX::Zero(model_.robot.dof());

    state_.human_arm.chain = SerialChain::load(sc_.human_chain);
    IkConfig hcfg;
    hcfg.position_only = true;
    const Pose hand{model_.object.human_contact(state_.x).p, UnitQuaternion{}};
    state_.human_arm.theta = ik_solve_multi(state_.human_arm.chain, hand, hcfg).theta;

    source_ = source ? std::move(source) : make_intent_source(sc_, model_.robot);
}

Mat3 Simulation::human_ellipsoid() const { return manipulability(state_.human_arm); }

void Simulation::set_gains(const ImpedanceGains& gains)
{
    gains.validate();
    sc_.gains = gains;
}

void Simulation::set_ascent_rates(double pos, double rot)
{
    if (source_) source_->set_ascent_rates(pos, rot);
    sc_.filter.ascent_pos = pos;
    sc_.filter.ascent_rot = rot;
}

bool Simulation::at_goal() const { return sc_.completion.satisfied(state_.x, state_.v, goal()); }

Observation Simulation::observe()
{
    Observation o;
    o.x = state_.x;
    Vec3 nv = Vec3::Zero();
    Vec3 nw = Vec3::Zero();
    if (sc_.velocity_noise > 0.0) {
        std::normal_distribution<double> n(0.0, sc_.velocity_noise);
        for (int i = 0; i < 3; ++i) nv[i] = n(noise_rng_);
        for (int i = 0; i < 3; ++i) nw[i] = n(noise_rng_);
    }
    o.v_lin = sc_.mask.pos.cwiseProduct(state_.v.head<3>() + nv);
    o.omega = sc_.mask.rot.cwiseProduct(state_.v.tail<3>() + nw);
    o.a_lin = acc_.update(o.v_lin);
    o.alpha = alpha_.update(o.omega);
    o.human_hand_pos = state_.human_arm.hand_position();
    return o;
}

const TickRecord& Simulation::tick(const Wrench* human_override)
{
    const double dt = sc_.dt;
    state_.hidden_intent = sc_.human.active(state_.t).intent();

    bool est_tick = false;
    if (ticks_ % static_cast<std::size_t>(sc_.estimator_decimation) == 0) {
        const Observation obs = observe();
        if (source_ && !source_->every_tick()) {
            est_ = source_->update(obs, human_ellipsoid(), state_.t, dt * sc_.estimator_decimation);
            est_tick = true;
            ++est_steps_;
        }
    }
    if (source_ && source_->every_tick()) est_ = source_->update(Observation{state_.x}, Mat3::Identity(), state_.t, dt);

    const CombinedDynamics dyn = combined_dynamics(model_.object, model_.robot_mass, state_.x);
    const Twist vm = mask_twist(state_.v, sc_.mask);
    const Wrench u_h = human_override != nullptr
                           ? *human_override
                           : human_wrench(state_.x, state_.v, state_.hidden_intent, sc_.human, sc_.mask);

    Wrench u = Wrench::Zero();
    double c_p = est_.c_p;
    double c_o = est_.c_o;
    if (sc_.controller == ControllerKind::admittance && !source_) {
        const Wrench f_ext = mask_twist(u_h - dyn.M_l * a_prev_, sc_.mask);
        v_desired_ = mask_twist(admittance_step(v_desired_, f_ext, sc_.admittance, dt), sc_.mask);
        u = u_ds(vm, v_desired_, 1.0, 1.0, sc_.gains);
        c_p = c_o = 0.0;
    } else if (source_) {
        const Twist v_hat = mask_twist(eval_ds(est_.intent, state_.x.p, state_.x.q), sc_.mask);
        u = u_ds(vm, v_hat, c_p, c_o, sc_.gains);
    }
    const Wrench u_lock = lock_wrench(state_.x, state_.v, sc_.lock);
    const Wrench u_r_d = desired_wrench(u + u_lock, dyn.g_r, dyn.g_l, dyn.G_r);

    Pose ee;
    MatX jac;
    fk_jacobian(model_.robot, state_.theta, ee, jac);
    const VecX tau = total_torque(jac, state_.theta, state_.theta_dot, model_.robot.nominal(),
                                  joint_limit_torque(model_.robot, state_.theta, limits_), u_r_d);
    const Wrench u_r = realized_wrench(jac, tau);

    TickRecord& r = last_;
    r.t = state_.t;
    r.dt = dt;
    r.x = state_.x;
    r.v = state_.v;
    r.u_h = u_h;
    r.u_ds = u;
    r.u_lock = u_lock;
    r.f_net = net_wrench(dyn, u_r, u_h);
    r.c_p = c_p;
    r.c_o = c_o;
    r.estimate = est_.intent;
    r.estimator_tick = est_tick;
    r.theta = state_.theta;
    EnergyInputs ein;
    ein.M = dyn.M;
    ein.x = state_.x;
    ein.v = state_.v;
    ein.estimate = est_.intent;
    ein.c_p = c_p;
    ein.c_o = c_o;
    ein.c_dot_p = source_ ? est_.c_dot_p : 0.0;
    ein.c_dot_o = source_ ? est_.c_dot_o : 0.0;
    ein.u_h = u_h;
    ein.mask = sc_.mask;
    r.energy = energy_audit(ein, sc_.gains);

    const Twist v0 = state_.v;
    state_ = step(model_, state_, u_r, u_h, dt);
    a_prev_ = (state_.v - v0) / dt;
    ++ticks_;
    return r;
}

// ---------------------------------------------------------------------------

nlohmann::json EpisodeResult::summary() const
{
    const Vec4 q = goal.q.coeffs();
    return {{"scenario", scenario},
            {"controller", to_string(controller)},
            {"seed", seed},
            {"metrics", metrics.to_json()},
            {"goal", {{"xyz", to_json_array(goal.p)}, {"quat", {q[0], q[1], q[2], q[3]}}}},
            {"ticks", log.size()},
            {"estimator_steps", estimator_steps},
            {"reinitializations", reinitializations},
            {"gas_violations", gas_violations},
            {"infeasible_survivors", infeasible_survivors},
            {"fault", fault}};
}

EpisodeResult run_episode(const Scenario& sc, std::unique_ptr<IntentSource> source)
{
    EpisodeResult res;
    res.scenario = sc.name;
    res.controller = sc.controller;
    res.seed = sc.seed;
    Simulation sim(sc, std::move(source));
    const auto n_ticks = static_cast<std::size_t>(std::llround(sc.horizon / sc.dt));
    try {
        while (sim.ticks() < n_ticks) {
            const bool done = sim.at_goal();
            res.log.push_back(sim.tick());
            if (done) break;
        }
    } catch (const SimFault& e) {
        res.fault = e.what();
        spdlog::warn("episode '{}' seed {} faulted: {}", sc.name, sc.seed, e.what());
    }
    res.goal = sc.goal_at(sim.state().t);
    res.metrics = compute_metrics(res.log, res.goal, sc.completion, sc.horizon);
    if (!res.fault.empty()) res.metrics.status = TrialStatus::fault;
    res.estimator_steps = sim.estimator_steps();
    if (const IntentSource* s = sim.source()) {
        if (const DualParticleFilter* f = s->filter()) {
            res.reinitializations = f->snapshot().reinitializations;
            res.gas_violations = f->snapshot().gas_violations;
            res.infeasible_survivors = f->snapshot().infeasible_survivors;
        }
    }
    return res;
}

// ---------------------------------------------------------------------------

namespace {

void put(std::string& line, double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    if (!line.empty()) line += ',';
    line += buf;
}

void put(std::string& line, const Eigen::Ref<const VecX>& v)
{
    for (Eigen::Index i = 0; i < v.size(); ++i) put(line, v[i]);
}

}  // namespace

std::string csv_header(int dof)
{
    std::string h = "t,dt,px,py,pz,qw,qx,qy,qz,vx,vy,vz,wx,wy,wz";
    for (const char* g : {"uh", "uds", "ulock", "fnet"}) {
        for (const char* a : {"fx", "fy", "fz", "tx", "ty", "tz"}) h += std::string(",") + g + "_" + a;
    }
    h += ",c_p,c_o,est_px,est_py,est_pz,est_qw,est_qx,est_qy,est_qz,est_apx,est_apy,est_apz,est_aox,est_aoy,est_aoz";
    h += ",est_tick,W,W_dot,E_d,E_p,input_power,passivity_margin";
    for (int i = 0; i < dof; ++i) h += ",theta" + std::to_string(i);
    return h;
}

void write_csv(const std::vector<TickRecord>& log, std::ostream& out)
{
    const int dof = log.empty() ? 0 : static_cast<int>(log.front().theta.size());
    out << csv_header(dof) << '\n';
    std::string line;
    for (const auto& r : log) {
        line.clear();
        put(line, r.t);
        put(line, r.dt);
        put(line, r.x.p);
        put(line, r.x.q.coeffs());
        put(line, r.v);
        put(line, r.u_h);
        put(line, r.u_ds);
        put(line, r.u_lock);
        put(line, r.f_net);
        put(line, r.c_p);
        put(line, r.c_o);
        put(line, r.estimate.pos.attractor);
        put(line, r.estimate.rot.attractor.coeffs());
        put(line, r.estimate.pos.a_diag);
        put(line, r.estimate.rot.a_diag);
        put(line, r.estimator_tick ? 1.0 : 0.0);
        put(line, r.energy.W);
        put(line, r.energy.W_dot);
        put(line, r.energy.E_d);
        put(line, r.energy.E_p);
        put(line, r.energy.input_power);
        put(line, r.energy.passivity_margin);
        put(line, r.theta);
        out << line << '\n';
    }
}

std::vector<TickRecord> read_csv(std::istream& in)
{
    std::string header;
    if (!std::getline(in, header)) throw ConfigError("trajectory log: missing header");
    const auto n_cols = static_cast<std::size_t>(std::count(header.begin(), header.end(), ',') + 1);
    const std::string base = csv_header(0);
    const int fixed = static_cast<int>(std::count(base.begin(), base.end(), ',') + 1);
    const int dof = static_cast<int>(n_cols) - fixed;
    if (dof < 0 || header != csv_header(dof)) throw ConfigError("trajectory log: unexpected header");

    std::vector<TickRecord> log;
    std::string line;
    std::vector<double> vals;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        vals.clear();
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                vals.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw ConfigError("trajectory log: bad number on line " + std::to_string(line_no));
            }
        }
        if (vals.size() != n_cols) throw ConfigError("trajectory log: wrong column count on line " + std::to_string(line_no));
        std::size_t k = 0;
        auto next = [&]() { return vals[k++]; };
        auto vec = [&](int n) {
            VecX v(n);
            for (int i = 0; i < n; ++i) v[i] = next();
            return v;
        };
        TickRecord r;
        try {
            r.t = next();
            r.dt = next();
            r.x.p = vec(3);
            const VecX q = vec(4);
            r.x.q = UnitQuaternion::from_stored(q[0], q.tail<3>());
            r.v = vec(6);
            r.u_h = vec(6);
            r.u_ds = vec(6);
            r.u_lock = vec(6);
            r.f_net = vec(6);
            r.c_p = next();
            r.c_o = next();
            r.estimate.pos.attractor = vec(3);
            const VecX eq = vec(4);
            r.estimate.rot.attractor = UnitQuaternion::from_stored(eq[0], eq.tail<3>());
            r.estimate.pos.a_diag = vec(3);
            r.estimate.rot.a_diag = vec(3);
            r.estimator_tick = next() != 0.0;
            r.energy.W = next();
            r.energy.W_dot = next();
            r.energy.E_d = next();
            r.energy.E_p = next();
            r.energy.input_power = next();
            r.energy.passivity_margin = next();
            r.theta = vec(dof);
        } catch (const std::invalid_argument& e) {
            throw ConfigError("trajectory log line " + std::to_string(line_no) + ": " + e.what());
        }
        log.push_back(std::move(r));
    }
    return log;
}

}  // namespace comanip
