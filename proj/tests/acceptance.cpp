// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "comanip/analysis.hpp"
#include "comanip/control.hpp"
#include "comanip/estimator.hpp"
#include "comanip/harness.hpp"
#include "comanip/intent_ds.hpp"
#include "comanip/rotmath.hpp"
#include "comanip/simworld.hpp"
#include "synthetic.hpp"

using namespace comanip;
namespace fs = std::filesystem;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kDeg = kPi / 180.0;

// Pinned tolerances.
constexpr double kQuatTol = 1e-9;
constexpr double kQuatSeconds = 5.0;
constexpr double kDsFinalLog = 1e-3;
constexpr double kDsFinalPos = 1e-3;  // m
constexpr double kRecoverPos = 0.05;  // m
constexpr double kRecoverRot = 10.0 * kDeg;
constexpr double kRecoverRate = 0.95;
constexpr double kGradientRel = 0.05;
constexpr double kPassivityTol = 1e-9;   // W
constexpr double kInjectionSlack = 1.02;
constexpr double kCompletionRate = 0.95;
constexpr double kBatchSeconds = 600.0;

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v)
{
    std::ostringstream s;
    s << v;
    return s.str();
}

UnitQuaternion random_quat(std::mt19937_64& rng)
{
    std::normal_distribution<double> n(0.0, 1.0);
    return {n(rng), Vec3(n(rng), n(rng), n(rng))};
}

Vec3 uniform_vec(std::mt19937_64& rng, const Vec3& lo, const Vec3& hi)
{
    Vec3 v;
    for (int i = 0; i < 3; ++i) v[i] = std::uniform_real_distribution<double>(lo[i], hi[i])(rng);
    return v;
}

double lyapunov_rot(const UnitQuaternion& q, const UnitQuaternion& q_star)
{
    return (q_star.coeffs() - aligned_coeffs(q_star, q)).squaredNorm();
}

Scenario default_scenario() { return Scenario::load(std::string(COMANIP_SCENARIO_DIR) + "/default.json"); }

ExperimentConfig experiment_config(const fs::path& out)
{
    ExperimentConfig cfg = ExperimentConfig::load(std::string(COMANIP_SCENARIO_DIR) + "/experiment.json");
    cfg.output_dir = out.string();
    return cfg;
}

fs::path scratch_dir(const std::string& name)
{
    const fs::path p = fs::temp_directory_path() / ("comanip_acceptance_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// ---------------------------------------------------------------------------

Outcome quaternion_calculus()
{
    const auto t0 = Clock::now();
    std::mt19937_64 rng(101);
    std::normal_distribution<double> n(0.0, 1.0);
    double round_trip = 0.0;
    double log_exp = 0.0;
    double identities = 0.0;
    double equivalences = 0.0;
    const UnitQuaternion id = UnitQuaternion::identity();
    for (int i = 0; i < 10000; ++i) {
        const UnitQuaternion q1 = random_quat(rng);
        const UnitQuaternion q2 = random_quat(rng);
        const UnitQuaternion q3 = random_quat(rng);

        round_trip = std::max(round_trip, (exp_map(2.0 * log_map(q1), 1.0).coeffs() - q1.coeffs()).norm());
        Vec3 v(n(rng), n(rng), n(rng));
        v *= std::uniform_real_distribution<double>(0.0, kPi / 2.0 - 1e-6)(rng) / v.norm();
        log_exp = std::max(log_exp, (log_map(exp_map(2.0 * v, 1.0)) - v).norm());

        identities = std::max(identities, ((id * q1).coeffs() - q1.coeffs()).norm());
        identities = std::max(identities, ((q1 * q1.conj()).coeffs() - id.coeffs()).norm());
        const double assoc = std::abs(((q1 * q2) * q3).coeffs().dot((q1 * (q2 * q3)).coeffs()));
        identities = std::max(identities, std::abs(assoc - 1.0));
        identities = std::max(identities, ((q1 * q2).to_matrix() - q1.to_matrix() * q2.to_matrix()).norm());

        const UnitQuaternion a = q1 * q2.conj();
        const UnitQuaternion b = q2 * q1.conj();
        equivalences = std::max(equivalences, std::abs(a.s() - b.s()));
        equivalences = std::max(equivalences, (a.u() + b.u()).norm());
        equivalences = std::max(equivalences, (log_map(a) + log_map(b)).norm());
        equivalences = std::max(equivalences, (k_q(q1, q2) * log_map(a) - a.u()).norm());
    }
    const double secs = seconds_since(t0);
    const double worst = std::max({round_trip, log_exp, identities, equivalences});
    return {worst < kQuatTol && secs < kQuatSeconds,
            "1e4 samples, worst round trip " + fmt(round_trip) + ", log/exp " + fmt(log_exp) + ", identities " +
                fmt(identities) + ", equivalences " + fmt(equivalences) + ", " + fmt(secs) + " s"};
}

Outcome ds_convergence()
{
    std::mt19937_64 rng(202);
    std::uniform_real_distribution<double> a_rot(-0.9, -0.6);
    std::uniform_real_distribution<double> a_pos(-0.6, -0.4);
    const double dt = 1e-3;
    const int steps = 30000;
    int rot_ok = 0;
    int pos_ok = 0;
    double worst_rot = 0.0;
    double worst_pos = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        RotDsParams r{Vec3(a_rot(rng), a_rot(rng), a_rot(rng)), random_quat(rng)};
        UnitQuaternion q = random_quat(rng);
        double v_prev = lyapunov_rot(q, r.attractor);
        bool monotone = true;
        for (int i = 0; i < steps; ++i) {
            q = integrate(q, eval_rot(r, q), dt);
            const double v = lyapunov_rot(q, r.attractor);
            monotone = monotone && v <= v_prev + 1e-15;
            v_prev = v;
        }
        const double err = log_map(r.attractor * q.conj()).norm();
        worst_rot = std::max(worst_rot, err);
        rot_ok += monotone && err < kDsFinalLog;

        PosDsParams p{Vec3(a_pos(rng), a_pos(rng), a_pos(rng)), uniform_vec(rng, Vec3::Constant(-1.0), Vec3::Constant(1.0))};
        Vec3 x = uniform_vec(rng, Vec3::Constant(-1.0), Vec3::Constant(1.0));
        double d_prev = (x - p.attractor).squaredNorm();
        monotone = true;
        for (int i = 0; i < steps; ++i) {
            x += dt * eval_pos(p, x);
            const double d = (x - p.attractor).squaredNorm();
            monotone = monotone && d <= d_prev;
            d_prev = d;
        }
        worst_pos = std::max(worst_pos, std::sqrt(d_prev));
        pos_ok += monotone && std::sqrt(d_prev) < kDsFinalPos;
    }
    return {rot_ok == 100 && pos_ok == 100,
            "rotational " + std::to_string(rot_ok) + "/100 (worst |log| " + fmt(worst_rot) + "), cartesian " +
                std::to_string(pos_ok) + "/100 (worst " + fmt(worst_pos) + " m)"};
}

struct RecoveryStats {
    int recovered = 0;
    int runs = 0;
    double worst_pos = 0.0;
    double worst_rot = 0.0;
    std::size_t gas_violations = 0;
    std::size_t infeasible_survivors = 0;
};

// Shared by criteria 3 and 4: the published estimates of these runs are part
// of the invariant audit.
RecoveryStats estimator_runs()
{
    const Scenario sc = default_scenario();
    const SerialChain chain = SerialChain::load(sc.robot_chain);
    FeasibilityOracle oracle(&chain, sc.robot_grasp.pose(), IkConfig{});
    const GoalBox box;
    RecoveryStats st;
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
        std::mt19937_64 rng(9000 + seed);
        FilterConfig cfg = sc.filter;
        cfg.rng_seed = seed;
        DualParticleFilter pf(cfg, &oracle);

        DsIntent hidden;
        const double ap = std::uniform_real_distribution<double>(-0.6, -0.4)(rng);
        const double ao = std::uniform_real_distribution<double>(-0.9, -0.6)(rng);
        const Vec3 goal = uniform_vec(rng, box.lo, box.hi);
        hidden.pos = {Vec3::Constant(ap), Vec3(goal.x(), goal.y(), sc.start.xyz.z())};
        hidden.rot = {Vec3::Constant(ao), UnitQuaternion::from_rpy(goal.z(), 0.0, 0.0)};
        Vec3 start;
        do {
            start = uniform_vec(rng, box.lo, box.hi);
        } while (std::hypot(start.x() - goal.x(), start.y() - goal.y()) < box.min_distance);
        testing::SyntheticStream stream(
            hidden, Pose{Vec3(start.x(), start.y(), sc.start.xyz.z()), UnitQuaternion::from_rpy(start.z(), 0.0, 0.0)},
            0.01, 100 + seed);

        for (int k = 0; k < 200; ++k) {
            const FilterSnapshot& s = pf.step(stream.next(cfg.mask), Mat3::Identity(), 0.05);
            st.gas_violations += !check_gas(s.estimate.pos) || !check_gas(s.estimate.rot);
        }
        const FilterSnapshot& s = pf.snapshot();
        st.gas_violations += s.gas_violations;
        st.infeasible_survivors += s.infeasible_survivors;
        const double dp = (s.estimate.pos.attractor - hidden.pos.attractor).norm();
        const double dr = s.estimate.rot.attractor.angle_to(hidden.rot.attractor);
        st.worst_pos = std::max(st.worst_pos, dp);
        st.worst_rot = std::max(st.worst_rot, dr);
        st.recovered += dp < kRecoverPos && dr < kRecoverRot;
        ++st.runs;
    }
    return st;
}

Outcome estimator_recovery(const RecoveryStats& st)
{
    const double rate = static_cast<double>(st.recovered) / st.runs;
    return {rate >= kRecoverRate, std::to_string(st.recovered) + "/" + std::to_string(st.runs) +
                                      " runs within 0.05 m and 10 deg after 200 steps (worst " + fmt(st.worst_pos) +
                                      " m, " + fmt(st.worst_rot / kDeg) + " deg)"};
}

Outcome invariants(const RecoveryStats& st, const std::vector<BatchSummary>& batches)
{
    std::size_t gas = st.gas_violations;
    std::size_t infeasible = st.infeasible_survivors;
    std::size_t trials = 0;
    for (const auto& b : batches) {
        gas += b.gas_violations;
        infeasible += b.infeasible_survivors;
        trials += b.trials.size();
    }
    return {st.runs > 0 && gas == 0 && infeasible == 0, std::to_string(st.runs) + " estimator runs + " + std::to_string(trials) +
                                             " batch trials: " + std::to_string(gas) + " GAS violations, " +
                                             std::to_string(infeasible) + " infeasible survivors"};
}

// u_h' = -u_ds: the wrench the human supplies on top of the feedforward DS.
Vec3 human_residual(double c, const Vec3& lambda, const Vec3& v, const Vec3& f_hat)
{
    return c * lambda.cwiseProduct(v - f_hat);
}

double rel_error(const Mat3& analytic, const Mat3& fd) { return (analytic - fd).norm() / fd.norm(); }

Outcome gradient_check()
{
    std::mt19937_64 rng(505);
    const ImpedanceGains gains;
    const Vec3 lambda = gains.lambda_p;
    const double dt = 0.05;
    const int history = 20;
    double worst_k = 0.0;
    double worst_d = 0.0;
    int states = 0;
    while (states < 20) {
        PosDsParams est{uniform_vec(rng, Vec3::Constant(-0.6), Vec3::Constant(-0.4)),
                        uniform_vec(rng, Vec3(0.6, -0.3, 0.3), Vec3(0.95, 0.3, 0.3))};
        const Vec3 x = uniform_vec(rng, Vec3(0.6, -0.3, 0.3), Vec3(0.95, 0.3, 0.3));
        const double c0 = std::uniform_real_distribution<double>(0.3, 0.7)(rng);

        // Stiffness at fixed confidence: d u_h' / d x.
        const Vec3 v = uniform_vec(rng, Vec3::Constant(-0.3), Vec3::Constant(0.3));
        const double h = 1e-6;
        Mat3 k_fd;
        for (int j = 0; j < 3; ++j) {
            Vec3 dx = Vec3::Zero();
            dx[j] = h;
            k_fd.col(j) = (human_residual(c0, lambda, v, eval_pos(est, x + dx)) -
                           human_residual(c0, lambda, v, eval_pos(est, x - dx))) /
                          (2.0 * h);
        }
        const Mat3 k = apparent_stiffness(c0, lambda, est.a_diag);

        // Damping through the confidence integrator: d u_h' / d x_dot with the
        // velocity offset held over the whole confidence history.
        std::vector<Vec3> vs(history);
        for (auto& vk : vs) vk = eval_pos(est, x) + uniform_vec(rng, Vec3::Constant(-0.4), Vec3::Constant(0.4));
        auto run = [&](const Vec3& offset, Vec3* grad) {
            ConfidenceState conf{c0, 0.41, 0.0};
            ConfidenceGradient g;
            bool clipped = false;
            for (const Vec3& vk : vs) {
                const Vec3 r = vk + offset - eval_pos(est, x);
                const double raw = conf.c + dt * (conf.d - r.norm());
                clipped = clipped || raw <= 0.0 || raw >= 1.0;
                g.update(r, dt, raw);
                conf = update_confidence(conf, vk + offset, eval_pos(est, x), dt);
            }
            if (grad) *grad = g.value();
            return std::make_pair(human_residual(conf.c, lambda, vs.back() + offset, eval_pos(est, x)),
                                  clipped ? -1.0 : conf.c);
        };
        Vec3 grad;
        const auto [u0, c_end] = run(Vec3::Zero(), &grad);
        if (c_end <= 0.05 || c_end >= 0.95) continue;
        const double hv = 1e-6;
        Mat3 d_fd;
        for (int j = 0; j < 3; ++j) {
            Vec3 dv = Vec3::Zero();
            dv[j] = hv;
            d_fd.col(j) = (run(dv, nullptr).first - run(-dv, nullptr).first) / (2.0 * hv);
        }
        const Vec3 residual = vs.back() - eval_pos(est, x);
        const Mat3 d = apparent_damping(c_end, lambda, residual, grad);

        worst_k = std::max(worst_k, rel_error(k, k_fd));
        worst_d = std::max(worst_d, rel_error(d, d_fd));
        ++states;
    }
    return {worst_k < kGradientRel && worst_d < kGradientRel,
            "20 states, worst relative error stiffness " + fmt(worst_k) + ", damping " + fmt(worst_d)};
}

struct PassiveRun {
    std::vector<TickRecord> log;
    std::vector<double> c_dot_p;
    std::vector<double> c_dot_o;
};

// Zero human wrench; the intent is known and the confidences follow ramps.
PassiveRun passive_run(const DsIntent& intent, ConfidenceRamp c_p, ConfidenceRamp c_o, double horizon)
{
    Scenario sc = default_scenario();
    sc.controller = ControllerKind::fixed_goal_ds;
    sc.horizon = horizon;
    Simulation sim(sc, std::make_unique<FixedIntentSource>([intent](double) { return intent; }, c_p, c_o));
    const Wrench zero = Wrench::Zero();
    PassiveRun out;
    while (sim.state().t < horizon - 1e-12) {
        out.log.push_back(sim.tick(&zero));
        out.c_dot_p.push_back(sim.estimate().c_dot_p);
        out.c_dot_o.push_back(sim.estimate().c_dot_o);
    }
    return out;
}

DsIntent away_intent(const Scenario& sc, const Vec3& goal, double roll)
{
    DsIntent d;
    d.pos = {Vec3(-0.5, -0.45, -0.55), Vec3(goal.x(), goal.y(), sc.start.xyz.z())};
    d.rot = {Vec3::Constant(-0.75), UnitQuaternion::from_rpy(roll, 0.0, 0.0)};
    return d;
}

Outcome passivity()
{
    const Scenario sc = default_scenario();
    const double roll0 = sc.start.rpy.x();

    // (a) saturated or non-rising confidence.
    struct Case {
        ConfidenceRamp p, o;
    };
    const std::vector<Case> cases = {
        {{0.0, 0.0, 0.0}, {0.0, 0.0, 0.0}},
        {{1.0, 0.0, 0.0}, {1.0, 0.0, 0.0}},
        {{1.0, 0.0, 0.0}, {0.0, 0.0, 0.0}},
        {{1.0, -0.41, 1.0}, {1.0, -0.49, 1.5}},
    };
    double worst_a = -std::numeric_limits<double>::infinity();
    std::size_t samples = 0;
    for (const auto& c : cases) {
        const PassiveRun r = passive_run(away_intent(sc, Vec3(0.62, -0.2, 0.0), roll0 - 0.4), c.p, c.o, 4.0);
        for (const auto& rec : r.log) {
            worst_a = std::max(worst_a, rec.energy.W_dot);
            ++samples;
        }
    }
    const bool pass_a = worst_a <= kPassivityTol;

    // (b) 0 -> 1 rise of the position confidence at the ascent rate; the
    // orientation goal equals the start so only the Cartesian storage moves.
    const double rate = sc.filter.ascent_pos;
    const double t_rise = 0.5;
    const double t_sat = t_rise + 1.0 / rate;
    const PassiveRun r =
        passive_run(away_intent(sc, Vec3(0.6, -0.2, 0.0), roll0), {0.0, rate, t_rise}, {1.0, 0.0, 0.0}, t_sat + 1.5);
    double injected = 0.0;
    double bound = -1.0;
    double last_loss = -1.0;
    double first_loss = -1.0;
    for (const auto& rec : r.log) {
        if (bound < 0.0 && rec.t >= t_rise - 1e-12) bound = 0.5 * std::abs(rec.energy.E_p);
        if (rec.energy.W_dot > kPassivityTol) {
            injected += rec.energy.W_dot * rec.dt;
            if (first_loss < 0.0) first_loss = rec.t;
            last_loss = rec.t;
        }
    }
    const bool pass_b = bound > 0.0 && injected <= kInjectionSlack * bound && last_loss > 0.0 && last_loss < t_sat;

    return {pass_a && pass_b, "(a) max W_dot " + fmt(worst_a) + " W over " + std::to_string(samples) +
                                  " samples; (b) injected " + fmt(injected) + " J vs bound " + fmt(bound) +
                                  " J, loss interval [" + fmt(first_loss) + ", " + fmt(last_loss) +
                                  "] s, saturation at " + fmt(t_sat) + " s"};
}

Outcome desk_mirror(const BatchSummary& proposed, const BatchSummary& admittance, double secs)
{
    const bool a = proposed.completion_rate >= kCompletionRate;
    const bool b = proposed.lin_impulse.mean < admittance.lin_impulse.mean &&
                   proposed.completion_time.mean < admittance.completion_time.mean;
    return {a && b && secs < kBatchSeconds,
            "completion " + fmt(proposed.completion_rate * 100.0) + "%, time " + fmt(proposed.completion_time.mean) +
                " vs " + fmt(admittance.completion_time.mean) + " s, lin impulse " + fmt(proposed.lin_impulse.mean) +
                " vs " + fmt(admittance.lin_impulse.mean) + " N s, batch runtime " + fmt(secs) + " s"};
}

std::string slurp(const fs::path& p)
{
    std::ifstream f(p, std::ios::binary);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

Outcome determinism(const fs::path& first)
{
    const fs::path second = scratch_dir("rerun");
    ExperimentConfig cfg = experiment_config(second);
    for (ControllerKind k : {ControllerKind::proposed, ControllerKind::admittance}) {
        cfg.controller = k;
        run_batch(cfg);
    }
    std::size_t files = 0;
    std::size_t differ = 0;
    for (const auto& e : fs::recursive_directory_iterator(first)) {
        if (!e.is_regular_file()) continue;
        const fs::path rel = fs::relative(e.path(), first);
        ++files;
        if (!fs::exists(second / rel) || slurp(e.path()) != slurp(second / rel)) ++differ;
    }
    std::size_t files_second = 0;
    for (const auto& e : fs::recursive_directory_iterator(second)) files_second += e.is_regular_file();
    fs::remove_all(second);
    return {files > 0 && differ == 0 && files == files_second,
            std::to_string(files) + " files compared, " + std::to_string(differ) + " differ"};
}

}  // namespace

int main()
{
    spdlog::set_level(spdlog::level::warn);
    int failures = 0;
    auto report = [&](int n, const std::string& name, const std::function<Outcome()>& fn) {
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.pass;
        std::cout << "criterion " << n << " " << (o.pass ? "PASS" : "FAIL") << "  " << name << ": " << o.detail
                  << std::endl;
    };

    report(1, "quaternion calculus", quaternion_calculus);
    report(2, "DS convergence", ds_convergence);

    RecoveryStats recovery;
    try {
        recovery = estimator_runs();
    } catch (const std::exception& e) {
        std::cerr << "estimator runs: " << e.what() << '\n';
    }
    report(3, "estimator recovery", [&] { return estimator_recovery(recovery); });

    const fs::path batch_dir = scratch_dir("batch");
    std::vector<BatchSummary> batches;
    double batch_secs = 0.0;
    try {
        ExperimentConfig cfg = experiment_config(batch_dir);
        const auto t0 = Clock::now();
        for (ControllerKind k : {ControllerKind::proposed, ControllerKind::admittance}) {
            cfg.controller = k;
            batches.push_back(run_batch(cfg));
        }
        batch_secs = seconds_since(t0);
    } catch (const std::exception& e) {
        std::cerr << "batch: " << e.what() << '\n';
    }

    report(4, "GAS and feasibility invariants", [&] {
        if (batches.size() != 2) return Outcome{false, "batch did not run"};
        return invariants(recovery, batches);
    });
    report(5, "apparent impedance gradient check", gradient_check);
    report(6, "passivity", passivity);
    report(7, "desk-scale comparison", [&] {
        if (batches.size() != 2) return Outcome{false, "batch did not run"};
        return desk_mirror(batches[0], batches[1], batch_secs);
    });
    report(8, "determinism", [&] { return determinism(batch_dir); });
    fs::remove_all(batch_dir);

    std::cout << (failures == 0 ? "all criteria PASS" : std::to_string(failures) + " criteria FAIL") << std::endl;
    return failures == 0 ? 0 : 1;
}
