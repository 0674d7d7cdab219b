#include <doctest.h>

#include <sstream>

#include "comanip/errors.hpp"
#include "comanip/simworld.hpp"

using namespace comanip;

namespace {

Scenario default_scenario() { return Scenario::load(std::string(COMANIP_SCENARIO_DIR) + "/default.json"); }

std::string csv_of(const std::vector<TickRecord>& log)
{
    std::ostringstream out;
    write_csv(log, out);
    return out.str();
}

// u_r with G_r^T u_r = w.
Wrench contact_wrench_for(const CombinedDynamics& dyn, const Wrench& w)
{
    return dyn.G_r.transpose().partialPivLu().solve(w);
}

}  // namespace

TEST_CASE("human wrench")
{
    HumanPolicy policy;
    TaskMask mask;
    HumanGoal g;
    g.goal = {Vec3(0.9, 0.1, 0.3), Vec3(0.3, 0.0, 0.0)};
    const DsIntent hidden = g.intent();

    const Pose x{Vec3(0.8, 0.0, 0.3), UnitQuaternion::from_rpy(0.1, 0.0, 0.0)};
    CHECK(human_wrench(x, eval_ds(hidden, x.p, x.q), hidden, policy, mask).norm() == doctest::Approx(0.0).scale(1.0));
    CHECK(human_wrench(g.goal.pose(), Twist::Zero(), hidden, policy, mask).norm() < 1e-12);

    Twist fast = Twist::Zero();
    fast << 3.0, -2.0, 1.0, 4.0, 4.0, -4.0;
    const Wrench w = human_wrench(x, fast, hidden, policy, mask);
    CHECK(w.head<3>().norm() <= policy.f_max + 1e-12);
    CHECK(w.tail<3>().norm() <= policy.tau_max + 1e-12);
    CHECK(w.head<3>().norm() == doctest::Approx(policy.f_max));

    TaskMask planar;
    planar.pos = Vec3(1.0, 1.0, 0.0);
    planar.rot = Vec3(1.0, 0.0, 0.0);
    const Wrench wp = human_wrench(x, fast, hidden, policy, planar);
    CHECK(wp[2] == 0.0);
    CHECK(wp[4] == 0.0);
    CHECK(wp[5] == 0.0);
}

TEST_CASE("gravity compensation holds the object still")
{
    Simulation sim(default_scenario());
    SimState s = sim.state();
    const Pose x0 = s.x;
    for (int k = 0; k < 20; ++k) {
        const CombinedDynamics dyn = combined_dynamics(sim.model().object, sim.model().robot_mass, s.x);
        s = step(sim.model(), s, contact_wrench_for(dyn, dyn.g), Wrench::Zero(), 0.005);
        CHECK(s.v.norm() < 1e-12);
        CHECK((s.x.p - x0.p).norm() < 1e-12);
        CHECK(s.x.q.angle_to(x0.q) < 1e-12);
    }
}

TEST_CASE("free fall of the combined system")
{
    Simulation sim(default_scenario());
    const SimState& s = sim.state();
    const CombinedDynamics dyn = combined_dynamics(sim.model().object, sim.model().robot_mass, s.x);
    const SimState n = step(sim.model(), s, Wrench::Zero(), Wrench::Zero(), 0.001);
    const Twist expected = -0.001 * dyn.M.inverse() * dyn.g;
    CHECK((n.v - expected).norm() < 1e-12);
    CHECK(n.v[2] < 0.0);
    CHECK(dyn.M.llt().info() == Eigen::Success);
}

TEST_CASE("step contract")
{
    Simulation sim(default_scenario());
    CHECK_THROWS_AS(step(sim.model(), sim.state(), Wrench::Zero(), Wrench::Zero(), 0.0), std::invalid_argument);
    CHECK_THROWS_AS(step(sim.model(), sim.state(), Wrench::Zero(), Wrench::Zero(), 0.02), std::invalid_argument);
    SimState s = sim.state();
    s.v << 100.0, 0.0, 0.0, 0.0, 0.0, 0.0;
    CHECK_THROWS_AS(step(sim.model(), s, Wrench::Zero(), Wrench::Zero(), 0.01), SimFault);
}

TEST_CASE("work-energy bookkeeping over a 10 s passive rollout")
{
    // Gravity compensated, damped, with a small periodic push. Per step the
    // kinetic energy change in the step-start metric equals the work of the
    // net wrench on the mean velocity.
    Simulation sim(default_scenario());
    SimState s = sim.state();
    s.v << 0.05, -0.04, 0.0, 0.2, 0.0, 0.0;
    const double dt = 0.005;
    double max_err = 0.0;
    double total_ke_change = 0.0;
    double total_work = 0.0;
    for (int k = 0; k < 2000; ++k) {
        const CombinedDynamics dyn = combined_dynamics(sim.model().object, sim.model().robot_mass, s.x);
        const Wrench damping = -(Vec6() << 20.0, 20.0, 20.0, 2.0, 2.0, 2.0).finished().cwiseProduct(s.v);
        const double t = k * dt;
        Wrench push = Wrench::Zero();
        push << 0.5 * std::sin(t), 0.5 * std::cos(1.3 * t), 0.0, 0.05 * std::sin(0.7 * t), 0.0, 0.0;
        const Wrench u_r = contact_wrench_for(dyn, dyn.g + damping);
        const SimState n = step(sim.model(), s, u_r, push, dt);
        const Wrench f = net_wrench(dyn, u_r, push);
        const double dke = 0.5 * n.v.dot(dyn.M * n.v) - 0.5 * s.v.dot(dyn.M * s.v);
        const double work = dt * f.dot(0.5 * (s.v + n.v));
        max_err = std::max(max_err, std::abs(dke - work));
        total_ke_change += dke;
        total_work += work;
        CHECK(std::abs(n.x.q.coeffs().norm() - 1.0) < 1e-9);
        s = n;
    }
    MESSAGE("max per-step error " << max_err << " J");
    CHECK(max_err < 1e-6);
    CHECK(total_ke_change == doctest::Approx(total_work).epsilon(1e-9));
}

TEST_CASE("goal equal to the start completes at t = 0")
{
    Scenario sc = default_scenario();
    sc.human.schedule = {HumanGoal{0.0, sc.start}};
    for (auto kind : {ControllerKind::proposed, ControllerKind::admittance, ControllerKind::fixed_goal_ds}) {
        sc.controller = kind;
        const EpisodeResult r = run_episode(sc);
        CHECK(r.metrics.status == TrialStatus::completed);
        CHECK(r.metrics.completion_time == 0.0);
        CHECK(r.metrics.lin_impulse == 0.0);
        CHECK(r.log.size() == 1);
    }
}

TEST_CASE("default scenario completes with every controller")
{
    Scenario sc = default_scenario();
    for (auto kind : {ControllerKind::proposed, ControllerKind::admittance, ControllerKind::fixed_goal_ds}) {
        sc.controller = kind;
        const EpisodeResult r = run_episode(sc);
        INFO(to_string(kind));
        CHECK(r.metrics.status == TrialStatus::completed);
        CHECK(r.metrics.completion_time < 5.0);
        CHECK(r.fault.empty());
        CHECK(r.gas_violations == 0);
        CHECK(r.infeasible_survivors == 0);
    }
}

TEST_CASE("passivity margin holds on every tick with saturated or non-rising confidence")
{
    auto settled = [](double c, double c_dot) { return c == 0.0 || c == 1.0 || c_dot <= 0.0; };
    for (std::uint64_t seed : {1, 2, 3}) {
        Scenario sc = default_scenario();
        sc.seed = seed;
        sc.human.schedule.front().goal = PoseSpec{Vec3(0.7, -0.2, 0.3), Vec3(-0.4, 0.0, 0.0)};
        sc.horizon = 4.0;
        Simulation sim(sc);
        std::size_t checked = 0;
        while (sim.state().t < sc.horizon) {
            const TickRecord& r = sim.tick();
            const IntentEstimate& e = sim.estimate();
            if (settled(r.c_p, e.c_dot_p) && settled(r.c_o, e.c_dot_o)) {
                ++checked;
                REQUIRE(r.energy.passivity_margin >= -1e-12);
            }
        }
        CHECK(checked > 0);
    }
}

TEST_CASE("identical seeds give byte-identical logs")
{
    Scenario sc = default_scenario();
    sc.horizon = 3.0;
    sc.human.schedule.front().goal.xyz = Vec3(0.65, -0.25, 0.3);
    const std::string a = csv_of(run_episode(sc).log);
    const std::string b = csv_of(run_episode(sc).log);
    CHECK(a == b);
    sc.seed = 2;
    CHECK(csv_of(run_episode(sc).log) != a);
}

TEST_CASE("estimator runs every tenth control tick")
{
    Simulation sim(default_scenario());
    for (int k = 0; k < 100; ++k) {
        const TickRecord& r = sim.tick();
        CHECK(r.estimator_tick == (k % 10 == 0));
    }
    CHECK(sim.estimator_steps() == 10);
    CHECK(sim.state().t == doctest::Approx(0.5));
}

TEST_CASE("human override replaces the synthetic human")
{
    Simulation sim(default_scenario());
    Wrench w = Wrench::Zero();
    w[0] = 7.0;
    CHECK(sim.tick(&w).u_h == w);
}

TEST_CASE("CSV round trip")
{
    Scenario sc = default_scenario();
    sc.horizon = 0.5;
    const EpisodeResult r = run_episode(sc);
    const std::string text = csv_of(r.log);
    std::istringstream in(text);
    const std::vector<TickRecord> back = read_csv(in);
    REQUIRE(back.size() == r.log.size());
    CHECK(csv_of(back) == text);
    CHECK(text.substr(0, text.find('\n')) == csv_header(static_cast<int>(r.log.front().theta.size())));
}

TEST_CASE("scenario JSON round trip and validation")
{
    const Scenario sc = default_scenario();
    const nlohmann::json j = sc.to_json();
    CHECK(Scenario::from_json(j).to_json() == j);

    nlohmann::json bad = j;
    bad["bogus"] = 1;
    CHECK_THROWS_AS(Scenario::from_json(bad), ConfigError);
    bad = j;
    bad["filter"]["bogus"] = 1;
    CHECK_THROWS_AS(Scenario::from_json(bad), ConfigError);
    bad = j;
    bad["human"]["schedule"][0]["goal"]["quat"] = {1, 0, 0, 0};
    CHECK_THROWS_AS(Scenario::from_json(bad), ConfigError);
    bad = j;
    bad["dt"] = 0.02;
    CHECK_THROWS_AS(Scenario::from_json(bad), ConfigError);
    bad = j;
    bad["controller"] = "pid";
    CHECK_THROWS_AS(Scenario::from_json(bad), ConfigError);
    CHECK_THROWS_AS(Scenario::load("/nonexistent/scenario.json"), ConfigError);

    Scenario unreachable = sc;
    unreachable.start.xyz = Vec3(3.0, 0.0, 0.3);
    CHECK_THROWS_AS(Simulation{unreachable}, ConfigError);
}

TEST_CASE("confidence ramp")
{
    const ConfidenceRamp r{0.0, 0.5, 1.0};
    CHECK(r.value(0.5) == 0.0);
    CHECK(r.value(2.0) == 0.5);
    CHECK(r.value(5.0) == 1.0);
    CHECK(r.derivative(0.5) == 0.0);
    CHECK(r.derivative(2.0) == 0.5);
    CHECK(r.derivative(5.0) == 0.0);
}
