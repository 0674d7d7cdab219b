#include "comanip/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <spdlog/spdlog.h>

#include "comanip/errors.hpp"
#include "comanip/linalg.hpp"

namespace comanip {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

nlohmann::json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

Vec3 vec_from(const nlohmann::json& j)
{
    if (!j.is_array() || j.size() != 3) throw ConfigError("expected a 3-element array");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Vec3 gaussian3(std::mt19937_64& rng)
{
    std::normal_distribution<double> n(0.0, 1.0);
    const double a = n(rng);
    const double b = n(rng);
    const double c = n(rng);
    return {a, b, c};
}

bool same_pose(const Pose& a, const Pose& b) { return a.p == b.p && a.q == b.q; }

std::vector<double> normalized(const std::vector<double>& log_w)
{
    const double m = *std::max_element(log_w.begin(), log_w.end());
    std::vector<double> w(log_w.size(), 0.0);
    if (m == kNegInf) return w;
    double sum = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] = std::exp(log_w[i] - m);
        sum += w[i];
    }
    for (double& x : w) x /= sum;
    return w;
}

}  // namespace

// ---------------------------------------------------------------------------

void FilterConfig::validate() const
{
    auto fail = [](const std::string& m) { throw ConfigError("filter config: " + m); };
    if (n_particles < 1) fail("n_particles must be >= 1");
    for (double e : {eta1, eta2, eta3, eta4, eta5}) {
        if (!(e >= 0.0)) fail("eta weights must be >= 0");
    }
    for (const NoiseBand& b : {eta6, eta7, eta8}) {
        if (!(b.low >= 0.0) || !(b.high >= 0.0)) fail("noise bands must be >= 0");
    }
    if (!(likelihood_precision > 0.0)) fail("likelihood_precision must be > 0");
    for (const Bounds& b : {a_bounds_pos, a_bounds_rot}) {
        if (!(b.lo < b.hi) || !(b.hi < 0.0)) fail("a_bounds must satisfy lo < hi < 0");
    }
    if (!(ascent_pos > 0.0) || !(ascent_rot > 0.0)) fail("ascent rates must be > 0");
    if (!(resample_threshold > 0.0 && resample_threshold <= 1.0)) fail("resample_threshold must be in (0, 1]");
    if ((prior_pos_lo.array() > prior_pos_hi.array()).any()) fail("prior_pos_lo > prior_pos_hi");
    if ((prior_rpy_lo.array() > prior_rpy_hi.array()).any()) fail("prior_rpy_lo > prior_rpy_hi");
    if (prior_feasibility_tries < 1) fail("prior_feasibility_tries must be >= 1");
    for (int i = 0; i < 3; ++i) {
        if ((mask.pos[i] != 0.0 && mask.pos[i] != 1.0) || (mask.rot[i] != 0.0 && mask.rot[i] != 1.0)) {
            fail("mask entries must be 0 or 1");
        }
    }
}

nlohmann::json FilterConfig::to_json() const
{
    return {{"n_particles", n_particles},
            {"eta1", eta1},
            {"eta2", eta2},
            {"eta3", eta3},
            {"eta4", eta4},
            {"eta5", eta5},
            {"eta6", {eta6.low, eta6.high}},
            {"eta7", {eta7.low, eta7.high}},
            {"eta8", {eta8.low, eta8.high}},
            {"likelihood_precision", likelihood_precision},
            {"a_bounds_pos", {a_bounds_pos.lo, a_bounds_pos.hi}},
            {"a_bounds_rot", {a_bounds_rot.lo, a_bounds_rot.hi}},
            {"ascent_pos", ascent_pos},
            {"ascent_rot", ascent_rot},
            {"resample_threshold", resample_threshold},
            {"rng_seed", rng_seed},
            {"prior_pos_lo", vec_json(prior_pos_lo)},
            {"prior_pos_hi", vec_json(prior_pos_hi)},
            {"prior_rpy_lo", vec_json(prior_rpy_lo)},
            {"prior_rpy_hi", vec_json(prior_rpy_hi)},
            {"prior_feasibility_tries", prior_feasibility_tries},
            {"mask_pos", vec_json(mask.pos)},
            {"mask_rot", vec_json(mask.rot)},
            {"tied_rot_dynamics", tied_rot_dynamics}};
}

FilterConfig FilterConfig::from_json(const nlohmann::json& j)
{
    static const std::vector<std::string> known = {
        "n_particles",  "eta1",         "eta2",         "eta3",          "eta4",
        "eta5",         "eta6",         "eta7",         "eta8",          "likelihood_precision",
        "a_bounds_pos", "a_bounds_rot", "ascent_pos",   "ascent_rot",    "resample_threshold",
        "rng_seed",     "prior_pos_lo", "prior_pos_hi", "prior_rpy_lo",  "prior_rpy_hi",
        "prior_feasibility_tries",      "mask_pos",     "mask_rot",      "tied_rot_dynamics"};
    FilterConfig c;
    try {
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
                throw ConfigError("filter config: unknown key '" + it.key() + "'");
            }
        }
        auto pair = [&](const char* key, double& lo, double& hi) {
            if (!j.contains(key)) return;
            const auto& a = j.at(key);
            if (!a.is_array() || a.size() != 2) throw ConfigError(std::string("filter config: ") + key + " needs 2 values");
            lo = a[0].get<double>();
            hi = a[1].get<double>();
        };
        c.n_particles = j.value("n_particles", c.n_particles);
        c.eta1 = j.value("eta1", c.eta1);
        c.eta2 = j.value("eta2", c.eta2);
        c.eta3 = j.value("eta3", c.eta3);
        c.eta4 = j.value("eta4", c.eta4);
        c.eta5 = j.value("eta5", c.eta5);
        pair("eta6", c.eta6.low, c.eta6.high);
        pair("eta7", c.eta7.low, c.eta7.high);
        pair("eta8", c.eta8.low, c.eta8.high);
        c.likelihood_precision = j.value("likelihood_precision", c.likelihood_precision);
        pair("a_bounds_pos", c.a_bounds_pos.lo, c.a_bounds_pos.hi);
        pair("a_bounds_rot", c.a_bounds_rot.lo, c.a_bounds_rot.hi);
        c.ascent_pos = j.value("ascent_pos", c.ascent_pos);
        c.ascent_rot = j.value("ascent_rot", c.ascent_rot);
        c.resample_threshold = j.value("resample_threshold", c.resample_threshold);
        c.rng_seed = j.value("rng_seed", c.rng_seed);
        if (j.contains("prior_pos_lo")) c.prior_pos_lo = vec_from(j.at("prior_pos_lo"));
        if (j.contains("prior_pos_hi")) c.prior_pos_hi = vec_from(j.at("prior_pos_hi"));
        if (j.contains("prior_rpy_lo")) c.prior_rpy_lo = vec_from(j.at("prior_rpy_lo"));
        if (j.contains("prior_rpy_hi")) c.prior_rpy_hi = vec_from(j.at("prior_rpy_hi"));
        c.prior_feasibility_tries = j.value("prior_feasibility_tries", c.prior_feasibility_tries);
        if (j.contains("mask_pos")) c.mask.pos = vec_from(j.at("mask_pos"));
        if (j.contains("mask_rot")) c.mask.rot = vec_from(j.at("mask_rot"));
        c.tied_rot_dynamics = j.value("tied_rot_dynamics", c.tied_rot_dynamics);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("filter config: ") + e.what());
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------

Vec3 alpha_hat(const RotDsParams& params, const UnitQuaternion& q, const Vec3& omega)
{
    const Vec4 qs = aligned_coeffs(q, params.attractor);
    const double s_star = qs[0];
    const Vec3 u_star = qs.tail<3>();
    const Mat3 m = u_star * q.u().transpose() +
                   (s_star * Mat3::Identity() + skew(u_star)) * (q.s() * Mat3::Identity() - skew(q.u()));
    return params.a_diag.cwiseProduct(0.5 * m * omega);
}

double log_weigh(const PosDsParams& p, const Observation& obs, const FilterConfig& cfg)
{
    const Vec3 dv = cfg.mask.pos.cwiseProduct(obs.v_lin - eval_pos(p, obs.x.p));
    const Vec3 da = cfg.mask.pos.cwiseProduct(obs.a_lin - p.a_diag.cwiseProduct(obs.v_lin));
    return -cfg.likelihood_precision * (cfg.eta1 * dv.squaredNorm() + cfg.eta2 * da.squaredNorm());
}

double log_weigh(const RotDsParams& p, const Observation& obs, const FilterConfig& cfg)
{
    const Vec3 dw = cfg.mask.rot.cwiseProduct(obs.omega - eval_rot(p, obs.x.q));
    const Vec3 da = cfg.mask.rot.cwiseProduct(obs.alpha - alpha_hat(p, obs.x.q, obs.omega));
    return -cfg.likelihood_precision * (cfg.eta3 * dw.squaredNorm() + cfg.eta4 * da.squaredNorm());
}

void predict(std::vector<PosParticle>& particles, const ConfidenceState& conf, const Mat3& E, const Vec3& hand,
             const FilterConfig& cfg, std::mt19937_64& rng)
{
    if (!is_spd(E)) throw std::invalid_argument("predict: manipulability ellipsoid is not SPD");
    const double sigma = cfg.eta6.std_at(conf.c);
    if (sigma == 0.0) return;
    for (PosParticle& pp : particles) {
        const Vec3 za = gaussian3(rng);
        const Vec3 zp = gaussian3(rng);
        pp.state.a_diag += sigma * cfg.mask.pos.cwiseProduct(za);
        const Mat3 m = local_ellipsoid(E, pp.state.attractor, hand, cfg.eta5);
        const Eigen::LLT<Mat3> llt(m);
        pp.state.attractor += sigma * cfg.mask.pos.cwiseProduct(llt.matrixL() * zp);
    }
}

void predict(std::vector<RotParticle>& particles, const ConfidenceState& conf, const FilterConfig& cfg,
             std::mt19937_64& rng)
{
    const double sa = cfg.eta7.std_at(conf.c);
    const double sq = cfg.eta8.std_at(conf.c);
    if (sa == 0.0 && sq == 0.0) return;
    for (RotParticle& rp : particles) {
        const Vec3 za = gaussian3(rng);
        const Vec3 zq = gaussian3(rng);
        if (cfg.tied_rot_dynamics) {
            rp.state.a_diag.array() += sa * za.x();
        } else {
            rp.state.a_diag += sa * cfg.mask.rot.cwiseProduct(za);
        }
        rp.state.attractor = integrate(rp.state.attractor, sq * cfg.mask.rot.cwiseProduct(zq), 1.0);
    }
}

bool dynamics_in_bounds(const PosDsParams& p, const FilterConfig& cfg)
{
    for (int i = 0; i < 3; ++i) {
        if (!cfg.a_bounds_pos.contains(p.a_diag[i])) return false;
    }
    return true;
}

bool dynamics_in_bounds(const RotDsParams& p, const FilterConfig& cfg)
{
    for (int i = 0; i < 3; ++i) {
        if (!cfg.a_bounds_rot.contains(p.a_diag[i])) return false;
    }
    return true;
}

void trim(PosParticle& p, RotParticle& r, FeasibilityOracle* oracle, std::size_t slot, const FilterConfig& cfg)
{
    bool ok = dynamics_in_bounds(p.state, cfg) && dynamics_in_bounds(r.state, cfg);
    if (ok && oracle != nullptr) ok = oracle->check(goal_pose(p.state, r.state), slot);
    if (!ok) {
        p.weight = 0.0;
        r.weight = 0.0;
    }
}

std::vector<std::size_t> resample_indices(const std::vector<double>& weights, std::mt19937_64& rng)
{
    const std::size_t n = weights.size();
    double total = 0.0;
    for (double w : weights) total += std::max(w, 0.0);
    if (n == 0 || !(total > 0.0)) throw EstimatorDiverged("all particle weights are zero");

    std::uniform_real_distribution<double> u(0.0, 1.0 / static_cast<double>(n));
    const double start = u(rng);
    std::vector<std::size_t> idx(n);
    double cumulative = std::max(weights[0], 0.0) / total;
    std::size_t j = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double pos = start + static_cast<double>(i) / static_cast<double>(n);
        while (pos > cumulative && j + 1 < n) {
            ++j;
            cumulative += std::max(weights[j], 0.0) / total;
        }
        idx[i] = j;
    }
    return idx;
}

double effective_sample_size(const std::vector<double>& w)
{
    double sq = 0.0;
    for (double x : w) sq += x * x;
    return sq > 0.0 ? 1.0 / sq : 0.0;
}

PosDsParams estimate(const std::vector<PosParticle>& particles)
{
    PosDsParams out;
    out.a_diag.setZero();
    out.attractor.setZero();
    double total = 0.0;
    for (const auto& p : particles) {
        out.a_diag += p.weight * p.state.a_diag;
        out.attractor += p.weight * p.state.attractor;
        total += p.weight;
    }
    if (!(total > 0.0)) throw EstimatorDiverged("estimate: no weight");
    out.a_diag /= total;
    out.attractor /= total;
    return out;
}

RotDsParams estimate(const std::vector<RotParticle>& particles)
{
    if (particles.empty()) throw EstimatorDiverged("estimate: no particles");
    const auto best = std::max_element(particles.begin(), particles.end(),
                                       [](const RotParticle& a, const RotParticle& b) { return a.weight < b.weight; });
    Vec3 a = Vec3::Zero();
    Vec4 q = Vec4::Zero();
    double total = 0.0;
    for (const auto& p : particles) {
        a += p.weight * p.state.a_diag;
        q += p.weight * aligned_coeffs(best->state.attractor, p.state.attractor);
        total += p.weight;
    }
    if (!(total > 0.0)) throw EstimatorDiverged("estimate: no weight");
    RotDsParams out;
    out.a_diag = a / total;
    out.attractor = UnitQuaternion(q[0], q.tail<3>());
    return out;
}

ConfidenceState update_confidence(const ConfidenceState& conf, const Vec3& v_actual, const Vec3& v_est, double dt)
{
    if (!(dt > 0.0)) throw std::invalid_argument("update_confidence: dt must be positive");
    ConfidenceState out = conf;
    out.e = (v_est - v_actual).norm();
    out.c = std::clamp(conf.c + dt * (conf.d - out.e), 0.0, 1.0);
    return out;
}

// ---------------------------------------------------------------------------

DerivativeFilter::DerivativeFilter(double dt, double cutoff_hz)
    : dt_(dt), alpha_(dt / (dt + 1.0 / (2.0 * std::numbers::pi * cutoff_hz)))
{
    if (!(dt > 0.0) || !(cutoff_hz > 0.0)) throw std::invalid_argument("DerivativeFilter: dt and cutoff must be > 0");
}

Vec3 DerivativeFilter::update(const Vec3& value)
{
    if (!primed_) {
        primed_ = true;
        last_ = value;
        return out_;
    }
    const Vec3 raw = (value - last_) / dt_;
    last_ = value;
    out_ += alpha_ * (raw - out_);
    return out_;
}

void DerivativeFilter::reset()
{
    primed_ = false;
    last_.setZero();
    out_.setZero();
}

// ---------------------------------------------------------------------------

DualParticleFilter::DualParticleFilter(FilterConfig cfg, FeasibilityOracle* oracle)
    : cfg_(std::move(cfg)), oracle_(oracle), rng_(cfg_.rng_seed)
{
    cfg_.validate();
    reset();
}

void DualParticleFilter::sample_prior_particle(std::size_t i)
{
    auto uni = [&](double lo, double hi) {
        std::uniform_real_distribution<double> u(lo, hi);
        return lo == hi ? lo : u(rng_);
    };
    PosDsParams p;
    RotDsParams r;
    bool ok = false;
    for (int attempt = 0; attempt < cfg_.prior_feasibility_tries && !ok; ++attempt) {
        for (int k = 0; k < 3; ++k) {
            p.a_diag[k] = uni(cfg_.a_bounds_pos.lo, cfg_.a_bounds_pos.hi);
            p.attractor[k] = uni(cfg_.prior_pos_lo[k], cfg_.prior_pos_hi[k]);
        }
        if (cfg_.tied_rot_dynamics) {
            r.a_diag.setConstant(uni(cfg_.a_bounds_rot.lo, cfg_.a_bounds_rot.hi));
        } else {
            for (int k = 0; k < 3; ++k) r.a_diag[k] = uni(cfg_.a_bounds_rot.lo, cfg_.a_bounds_rot.hi);
        }
        const double roll = uni(cfg_.prior_rpy_lo.x(), cfg_.prior_rpy_hi.x());
        const double pitch = uni(cfg_.prior_rpy_lo.y(), cfg_.prior_rpy_hi.y());
        const double yaw = uni(cfg_.prior_rpy_lo.z(), cfg_.prior_rpy_hi.z());
        r.attractor = UnitQuaternion::from_rpy(roll, pitch, yaw);
        ok = oracle_ == nullptr || oracle_->check(goal_pose(p, r), i);
    }
    pos_[i] = {p, 1.0};
    rot_[i] = {r, 1.0};
    verified_goal_[i] = goal_pose(p, r);
    verified_ok_[i] = ok ? 1 : 0;
}

void DualParticleFilter::reset()
{
    const auto n = static_cast<std::size_t>(cfg_.n_particles);
    pos_.assign(n, {});
    rot_.assign(n, {});
    verified_goal_.assign(n, Pose{});
    verified_ok_.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) sample_prior_particle(i);
    log_w_pos_.assign(n, 0.0);
    log_w_rot_.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (!verified_ok_[i]) log_w_pos_[i] = log_w_rot_[i] = kNegInf;
    }
    FilterSnapshot next;
    next.reinitializations = snap_.reinitializations;
    next.step = snap_.step;
    next.gas_violations = snap_.gas_violations;
    next.infeasible_survivors = snap_.infeasible_survivors;
    snap_ = next;
    snap_.conf_pos.d = cfg_.ascent_pos;
    snap_.conf_rot.d = cfg_.ascent_rot;

    std::vector<double> wp = normalized(log_w_pos_);
    std::vector<double> wr = normalized(log_w_rot_);
    for (std::size_t i = 0; i < n; ++i) {
        pos_[i].weight = wp[i];
        rot_[i].weight = wr[i];
    }
    if (std::any_of(wp.begin(), wp.end(), [](double w) { return w > 0.0; })) {
        snap_.estimate.pos = estimate(pos_);
        snap_.estimate.rot = estimate(rot_);
    }
}

const FilterSnapshot& DualParticleFilter::step(const Observation& obs, const Mat3& E, double dt)
{
    predict(pos_, snap_.conf_pos, E, obs.human_hand_pos, cfg_, rng_);
    predict(rot_, snap_.conf_rot, cfg_, rng_);

    const std::size_t n = pos_.size();
    for (std::size_t i = 0; i < n; ++i) {
        if (log_w_pos_[i] == kNegInf || log_w_rot_[i] == kNegInf) {
            log_w_pos_[i] = log_w_rot_[i] = kNegInf;
            continue;
        }
        log_w_pos_[i] += log_weigh(pos_[i].state, obs, cfg_);
        log_w_rot_[i] += log_weigh(rot_[i].state, obs, cfg_);

        bool ok = dynamics_in_bounds(pos_[i].state, cfg_) && dynamics_in_bounds(rot_[i].state, cfg_);
        if (ok && oracle_ != nullptr) {
            const Pose goal = goal_pose(pos_[i].state, rot_[i].state);
            if (!same_pose(goal, verified_goal_[i])) {
                verified_ok_[i] = oracle_->check(goal, i) ? 1 : 0;
                verified_goal_[i] = goal;
            }
            ok = verified_ok_[i] != 0;
        }
        if (!ok) log_w_pos_[i] = log_w_rot_[i] = kNegInf;
    }
    audit_survivors();

    try {
        normalize_and_estimate(obs, dt);
    } catch (const EstimatorDiverged& e) {
        ++snap_.reinitializations;
        spdlog::warn("particle filter lost all weight at step {}, resampling the prior", snap_.step);
        reset();
        throw;
    }
    ++snap_.step;
    return snap_;
}

void DualParticleFilter::audit_survivors()
{
    for (std::size_t i = 0; i < pos_.size(); ++i) {
        if (log_w_pos_[i] == kNegInf) continue;
        bool ok = dynamics_in_bounds(pos_[i].state, cfg_) && dynamics_in_bounds(rot_[i].state, cfg_);
        if (ok && oracle_ != nullptr) {
            const VecX* w = oracle_->witness(i);
            const Pose target = oracle_->end_effector_target(goal_pose(pos_[i].state, rot_[i].state));
            ok = w != nullptr && verify_witness(oracle_->chain(), target, *w, oracle_->config());
        }
        if (!ok) ++snap_.infeasible_survivors;
    }
}

void DualParticleFilter::normalize_and_estimate(const Observation& obs, double dt)
{
    const std::size_t n = pos_.size();
    const std::vector<double> wp = normalized(log_w_pos_);
    const std::vector<double> wr = normalized(log_w_rot_);
    for (std::size_t i = 0; i < n; ++i) {
        pos_[i].weight = wp[i];
        rot_[i].weight = wr[i];
    }
    snap_.estimate.pos = estimate(pos_);
    snap_.estimate.rot = estimate(rot_);
    if (!check_gas(snap_.estimate.pos) || !check_gas(snap_.estimate.rot)) ++snap_.gas_violations;

    const Vec3 v_hat = cfg_.mask.pos.cwiseProduct(eval_pos(snap_.estimate.pos, obs.x.p));
    const Vec3 w_hat = cfg_.mask.rot.cwiseProduct(eval_rot(snap_.estimate.rot, obs.x.q));
    snap_.conf_pos = update_confidence(snap_.conf_pos, cfg_.mask.pos.cwiseProduct(obs.v_lin), v_hat, dt);
    snap_.conf_rot = update_confidence(snap_.conf_rot, cfg_.mask.rot.cwiseProduct(obs.omega), w_hat, dt);

    snap_.n_eff_pos = effective_sample_size(wp);
    snap_.n_eff_rot = effective_sample_size(wr);
    const double limit = cfg_.resample_threshold * static_cast<double>(n);
    if (snap_.n_eff_pos < limit) {
        const auto idx = resample_indices(wp, rng_);
        std::vector<PosParticle> next(n);
        std::vector<Pose> goals(n);
        std::vector<char> oks(n);
        for (std::size_t i = 0; i < n; ++i) {
            next[i] = {pos_[idx[i]].state, 1.0 / static_cast<double>(n)};
            goals[i] = verified_goal_[idx[i]];
            oks[i] = verified_ok_[idx[i]];
        }
        pos_ = std::move(next);
        verified_goal_ = std::move(goals);
        verified_ok_ = std::move(oks);
        if (oracle_ != nullptr) oracle_->remap_slots(idx);
        std::fill(log_w_pos_.begin(), log_w_pos_.end(), 0.0);
    }
    if (snap_.n_eff_rot < limit) {
        const auto idx = resample_indices(wr, rng_);
        std::vector<RotParticle> next(n);
        for (std::size_t i = 0; i < n; ++i) next[i] = {rot_[idx[i]].state, 1.0 / static_cast<double>(n)};
        rot_ = std::move(next);
        std::fill(log_w_rot_.begin(), log_w_rot_.end(), 0.0);
    }
}

nlohmann::json to_json(const DsIntent& intent)
{
    const Vec4 q = intent.rot.attractor.coeffs();
    return {{"pos", {{"a_diag", vec_json(intent.pos.a_diag)}, {"attractor", vec_json(intent.pos.attractor)}}},
            {"rot", {{"a_diag", vec_json(intent.rot.a_diag)}, {"attractor", {q[0], q[1], q[2], q[3]}}}}};
}

nlohmann::json DualParticleFilter::to_json(std::size_t max_particles) const
{
    const std::size_t n = pos_.size();
    const std::size_t stride = max_particles == 0 ? n + 1 : std::max<std::size_t>(1, (n + max_particles - 1) / max_particles);
    nlohmann::json pos = nlohmann::json::array();
    nlohmann::json rot = nlohmann::json::array();
    for (std::size_t i = 0; i < n && pos.size() < max_particles; i += stride) {
        const auto& p = pos_[i];
        pos.push_back({p.state.attractor.x(), p.state.attractor.y(), p.state.attractor.z(), p.weight});
        const Vec3 rpy = rot_[i].state.attractor.to_rpy();
        rot.push_back({rpy.x(), rpy.y(), rpy.z(), rot_[i].weight});
    }
    return {{"step", snap_.step},
            {"estimate", comanip::to_json(snap_.estimate)},
            {"c_p", snap_.conf_pos.c},
            {"c_o", snap_.conf_rot.c},
            {"e_p", snap_.conf_pos.e},
            {"e_o", snap_.conf_rot.e},
            {"n_eff_pos", snap_.n_eff_pos},
            {"n_eff_rot", snap_.n_eff_rot},
            {"particles_pos", pos},
            {"particles_rot", rot}};
}

void DualParticleFilter::set_ascent_rates(double pos, double rot)
{
    if (!(pos > 0.0) || !(rot > 0.0)) throw ConfigError("ascent rates must be > 0");
    cfg_.ascent_pos = pos;
    cfg_.ascent_rot = rot;
    snap_.conf_pos.d = pos;
    snap_.conf_rot.d = rot;
}

}  // namespace comanip
