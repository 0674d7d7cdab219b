#include "comanip/harness.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <spdlog/spdlog.h>

#include "comanip/errors.hpp"
#include "json_util.hpp"

namespace comanip {

using detail::reject_unknown;
using detail::to_json_array;
using detail::vec3_from;

namespace fs = std::filesystem;

namespace {

nlohmann::json bounds_json(const Bounds& b) { return {b.lo, b.hi}; }

Bounds bounds_from(const nlohmann::json& j, const std::string& what)
{
    if (!j.is_array() || j.size() != 2) throw ConfigError(what + ": expected [lo, hi]");
    return {j[0].get<double>(), j[1].get<double>()};
}

std::string fmt_double(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::mt19937_64 trial_rng(std::uint64_t seed, int k)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(k)};
    return std::mt19937_64(seq);
}

MetricStats stats(const std::vector<double>& v)
{
    MetricStats s;
    if (v.empty()) return s;
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    s.quantiles = quantile_row(v);
    return s;
}

nlohmann::json stats_json(const MetricStats& s)
{
    const QuantileRow& q = s.quantiles;
    return {{"mean", s.mean}, {"min", q.min},       {"q1", q.q1},           {"median", q.median},
            {"q3", q.q3},     {"max", q.max},       {"outliers", q.outliers}, {"n", q.n}};
}

void write_file(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << text;
}

}  // namespace

// ---------------------------------------------------------------------------

void ExperimentConfig::validate() const
{
    if (scenario.empty()) throw ConfigError("experiment: scenario path is required");
    if (n_trials < 1) throw ConfigError("experiment: n_trials must be >= 1");
    if (!(horizon > 0.0)) throw ConfigError("experiment: horizon must be positive");
    if (output_dir.empty()) throw ConfigError("experiment: output_dir is required");
    if ((goals.lo.array() > goals.hi.array()).any()) throw ConfigError("experiment: goal box lo > hi");
    if (goals.min_distance < 0.0) throw ConfigError("experiment: goal min_distance must be >= 0");
    for (const Bounds* b : {&hidden_a_pos, &hidden_a_rot}) {
        if (!(b->lo <= b->hi && b->hi < 0.0)) throw ConfigError("experiment: hidden dynamics range must be negative");
    }
    if (!parameters.is_object()) throw ConfigError("experiment: parameters must be an object");
}

nlohmann::json ExperimentConfig::to_json() const
{
    return {{"scenario", scenario},
            {"controller", to_string(controller)},
            {"n_trials", n_trials},
            {"seed", seed},
            {"horizon", horizon},
            {"output_dir", output_dir},
            {"goals",
             {{"lo", to_json_array(goals.lo)}, {"hi", to_json_array(goals.hi)}, {"min_distance", goals.min_distance}}},
            {"hidden_a_pos", bounds_json(hidden_a_pos)},
            {"hidden_a_rot", bounds_json(hidden_a_rot)},
            {"write_trial_logs", write_trial_logs},
            {"parameters", parameters}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j, const std::string& base_dir)
{
    ExperimentConfig c;
    try {
        reject_unknown(j,
                       {"scenario", "controller", "n_trials", "seed", "horizon", "output_dir", "goals", "hidden_a_pos",
                        "hidden_a_rot", "write_trial_logs", "parameters"},
                       "experiment");
        c.scenario = j.value("scenario", c.scenario);
        if (!c.scenario.empty() && fs::path(c.scenario).is_relative()) {
            c.scenario = (fs::path(base_dir) / c.scenario).lexically_normal().string();
        }
        if (j.contains("controller")) c.controller = controller_from_string(j.at("controller").get<std::string>());
        c.n_trials = j.value("n_trials", c.n_trials);
        c.seed = j.value("seed", c.seed);
        c.horizon = j.value("horizon", c.horizon);
        c.output_dir = j.value("output_dir", c.output_dir);
        if (j.contains("goals")) {
            const auto& g = j.at("goals");
            reject_unknown(g, {"lo", "hi", "min_distance"}, "experiment.goals");
            if (g.contains("lo")) c.goals.lo = vec3_from(g.at("lo"), "goals.lo");
            if (g.contains("hi")) c.goals.hi = vec3_from(g.at("hi"), "goals.hi");
            c.goals.min_distance = g.value("min_distance", c.goals.min_distance);
        }
        if (j.contains("hidden_a_pos")) c.hidden_a_pos = bounds_from(j.at("hidden_a_pos"), "hidden_a_pos");
        if (j.contains("hidden_a_rot")) c.hidden_a_rot = bounds_from(j.at("hidden_a_rot"), "hidden_a_rot");
        c.write_trial_logs = j.value("write_trial_logs", c.write_trial_logs);
        if (j.contains("parameters")) c.parameters = j.at("parameters");
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("experiment: ") + e.what());
    }
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open experiment file " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("experiment " + path + ": " + e.what());
    }
    return from_json(j, fs::path(path).parent_path().string());
}

Scenario ExperimentConfig::base_scenario() const
{
    Scenario sc = Scenario::load(scenario);
    if (!parameters.empty()) {
        nlohmann::json j = sc.to_json();
        j.merge_patch(parameters);
        sc = Scenario::from_json(j);
    }
    sc.controller = controller;
    sc.horizon = horizon;
    sc.validate();
    return sc;
}

// ---------------------------------------------------------------------------

Scenario trial_scenario(const ExperimentConfig& cfg, const Scenario& base, int k, TrialResult* info)
{
    std::mt19937_64 rng = trial_rng(cfg.seed, k);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto draw = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

    PoseSpec goal = base.start;
    for (int attempt = 0;; ++attempt) {
        goal.xyz.x() = draw(cfg.goals.lo.x(), cfg.goals.hi.x());
        goal.xyz.y() = draw(cfg.goals.lo.y(), cfg.goals.hi.y());
        goal.rpy.x() = draw(cfg.goals.lo.z(), cfg.goals.hi.z());
        if ((goal.xyz - base.start.xyz).norm() >= cfg.goals.min_distance) break;
        if (attempt == 1000) throw ConfigError("experiment: goal box has no point at min_distance from the start");
    }
    const double a_pos = draw(cfg.hidden_a_pos.lo, cfg.hidden_a_pos.hi);
    const double a_rot = draw(cfg.hidden_a_rot.lo, cfg.hidden_a_rot.hi);
    const std::uint64_t seed = rng();

    Scenario sc = base;
    sc.name = base.name + "_trial_" + std::to_string(k);
    sc.seed = seed;
    sc.human.schedule = {HumanGoal{0.0, goal, Vec3::Constant(a_pos), Vec3::Constant(a_rot)}};
    if (info) {
        info->index = k;
        info->seed = seed;
        info->goal = goal;
        info->hidden_a_pos = a_pos;
        info->hidden_a_rot = a_rot;
    }
    return sc;
}

BatchSummary summarize(ControllerKind controller, std::uint64_t seed, std::vector<TrialResult> trials)
{
    BatchSummary s;
    s.controller = controller;
    s.seed = seed;
    std::vector<double> t, li, ai, f, tau;
    std::size_t completed = 0;
    for (const auto& r : trials) {
        t.push_back(r.metrics.completion_time);
        li.push_back(r.metrics.lin_impulse);
        ai.push_back(r.metrics.ang_impulse);
        f.push_back(r.metrics.avg_force);
        tau.push_back(r.metrics.avg_torque);
        completed += r.metrics.status == TrialStatus::completed;
        s.faults += r.metrics.status == TrialStatus::fault;
        s.gas_violations += r.gas_violations;
        s.infeasible_survivors += r.infeasible_survivors;
        s.reinitializations += r.reinitializations;
    }
    if (!trials.empty()) s.completion_rate = static_cast<double>(completed) / static_cast<double>(trials.size());
    s.completion_time = stats(t);
    s.lin_impulse = stats(li);
    s.ang_impulse = stats(ai);
    s.avg_force = stats(f);
    s.avg_torque = stats(tau);
    s.trials = std::move(trials);
    return s;
}

nlohmann::json BatchSummary::to_json() const
{
    nlohmann::json tr = nlohmann::json::array();
    for (const auto& r : trials) {
        tr.push_back({{"index", r.index},
                      {"seed", r.seed},
                      {"goal", {{"xyz", to_json_array(r.goal.xyz)}, {"rpy", to_json_array(r.goal.rpy)}}},
                      {"hidden_a_pos", r.hidden_a_pos},
                      {"hidden_a_rot", r.hidden_a_rot},
                      {"metrics", r.metrics.to_json()},
                      {"reinitializations", r.reinitializations},
                      {"gas_violations", r.gas_violations},
                      {"infeasible_survivors", r.infeasible_survivors},
                      {"fault", r.fault}});
    }
    return {{"controller", to_string(controller)},
            {"seed", seed},
            {"n_trials", trials.size()},
            {"completion_rate", completion_rate},
            {"completion_time", stats_json(completion_time)},
            {"lin_impulse", stats_json(lin_impulse)},
            {"ang_impulse", stats_json(ang_impulse)},
            {"avg_force", stats_json(avg_force)},
            {"avg_torque", stats_json(avg_torque)},
            {"gas_violations", gas_violations},
            {"infeasible_survivors", infeasible_survivors},
            {"reinitializations", reinitializations},
            {"faults", faults},
            {"trials", tr}};
}

BatchSummary run_batch(const ExperimentConfig& cfg)
{
    cfg.validate();
    const Scenario base = cfg.base_scenario();
    const std::string name = to_string(cfg.controller);
    const fs::path out_dir(cfg.output_dir);
    fs::create_directories(out_dir);
    if (cfg.write_trial_logs) fs::create_directories(out_dir / "logs");

    std::vector<TrialResult> trials;
    for (int k = 0; k < cfg.n_trials; ++k) {
        TrialResult r;
        const Scenario sc = trial_scenario(cfg, base, k, &r);
        const EpisodeResult ep = run_episode(sc);
        r.metrics = ep.metrics;
        r.reinitializations = ep.reinitializations;
        r.gas_violations = ep.gas_violations;
        r.infeasible_survivors = ep.infeasible_survivors;
        r.fault = ep.fault;
        spdlog::info("{} trial {}: {} in {:.3f} s, lin impulse {:.3f} N s", name, k, to_string(r.metrics.status),
                     r.metrics.completion_time, r.metrics.lin_impulse);
        if (cfg.write_trial_logs) {
            std::ofstream log(out_dir / "logs" / (name + "_trial_" + std::to_string(k) + ".csv"), std::ios::binary);
            write_csv(ep.log, log);
        }
        trials.push_back(std::move(r));
    }
    BatchSummary s = summarize(cfg.controller, cfg.seed, std::move(trials));

    write_file(out_dir / ("summary_" + name + ".json"), s.to_json().dump(2) + "\n");

    std::ostringstream csv;
    csv << "index,seed,goal_x,goal_y,goal_z,goal_roll,goal_pitch,goal_yaw,hidden_a_pos,hidden_a_rot,status,"
           "completion_time,lin_impulse,ang_impulse,avg_force,avg_torque,reinitializations,gas_violations,"
           "infeasible_survivors\n";
    for (const auto& r : s.trials) {
        csv << r.index << ',' << r.seed;
        for (int i = 0; i < 3; ++i) csv << ',' << fmt_double(r.goal.xyz[i]);
        for (int i = 0; i < 3; ++i) csv << ',' << fmt_double(r.goal.rpy[i]);
        csv << ',' << fmt_double(r.hidden_a_pos) << ',' << fmt_double(r.hidden_a_rot) << ','
            << to_string(r.metrics.status) << ',' << fmt_double(r.metrics.completion_time) << ','
            << fmt_double(r.metrics.lin_impulse) << ',' << fmt_double(r.metrics.ang_impulse) << ','
            << fmt_double(r.metrics.avg_force) << ',' << fmt_double(r.metrics.avg_torque) << ','
            << r.reinitializations << ',' << r.gas_violations << ',' << r.infeasible_survivors << '\n';
    }
    write_file(out_dir / ("trials_" + name + ".csv"), csv.str());
    emit_plot_data({s}, (out_dir / ("plot_" + name + ".csv")).string());
    return s;
}

// ---------------------------------------------------------------------------

std::string plot_data_header() { return "metric,method,n,min,q1,median,q3,max,outliers"; }

void emit_plot_data(const std::vector<BatchSummary>& summaries, const std::string& path)
{
    std::ostringstream out;
    out << plot_data_header() << '\n';
    for (const auto& s : summaries) {
        const std::pair<const char*, const MetricStats*> rows[] = {
            {"completion_time", &s.completion_time}, {"lin_impulse", &s.lin_impulse}, {"ang_impulse", &s.ang_impulse},
            {"avg_force", &s.avg_force},             {"avg_torque", &s.avg_torque}};
        for (const auto& [metric, st] : rows) {
            const QuantileRow& q = st->quantiles;
            out << metric << ',' << to_string(s.controller) << ',' << q.n << ',' << fmt_double(q.min) << ','
                << fmt_double(q.q1) << ',' << fmt_double(q.median) << ',' << fmt_double(q.q3) << ','
                << fmt_double(q.max) << ',';
            for (std::size_t i = 0; i < q.outliers.size(); ++i) out << (i ? ";" : "") << fmt_double(q.outliers[i]);
            out << '\n';
        }
    }
    write_file(path, out.str());
}

}  // namespace comanip
