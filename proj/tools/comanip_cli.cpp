// comanip: batch experiments, single episodes, log replay and the teleop server.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "comanip/errors.hpp"
#include "comanip/harness.hpp"
#include "comanip/teleop_service.hpp"

using namespace comanip;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitFault = 3;

void configure_logging()
{
    const char* env = std::getenv("COMANIP_LOG");
    spdlog::set_level(env ? spdlog::level::from_str(env) : spdlog::level::info);
}

void print_summary(const BatchSummary& s)
{
    std::cout << to_string(s.controller) << ": " << s.trials.size() << " trials, completion "
              << s.completion_rate * 100.0 << "%, mean time " << s.completion_time.mean << " s, mean lin impulse "
              << s.lin_impulse.mean << " N s, mean ang impulse " << s.ang_impulse.mean << " N m s";
    if (s.faults) std::cout << ", " << s.faults << " faulted";
    std::cout << '\n';
}

int cmd_run(const std::string& config, const std::string& controller, int trials, long long seed,
            const std::string& out, bool no_logs)
{
    ExperimentConfig cfg = ExperimentConfig::load(config);
    if (trials > 0) cfg.n_trials = trials;
    if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
    if (!out.empty()) cfg.output_dir = out;
    if (no_logs) cfg.write_trial_logs = false;

    std::vector<ControllerKind> kinds;
    if (controller == "all") {
        kinds = {ControllerKind::proposed, ControllerKind::admittance, ControllerKind::fixed_goal_ds};
    } else if (!controller.empty()) {
        kinds = {controller_from_string(controller)};
    } else {
        kinds = {cfg.controller};
    }
    cfg.validate();
    std::filesystem::create_directories(cfg.output_dir);
    {
        std::ofstream f(std::filesystem::path(cfg.output_dir) / "experiment.json");
        f << cfg.to_json().dump(2) << '\n';
    }

    std::vector<BatchSummary> summaries;
    std::size_t faults = 0;
    for (ControllerKind k : kinds) {
        cfg.controller = k;
        summaries.push_back(run_batch(cfg));
        print_summary(summaries.back());
        faults += summaries.back().faults;
    }
    emit_plot_data(summaries, (std::filesystem::path(cfg.output_dir) / "plot_data.csv").string());
    return faults > 0 ? kExitFault : 0;
}

int cmd_episode(const std::string& scenario, const std::string& controller, long long seed, const std::string& log)
{
    Scenario sc = Scenario::load(scenario);
    if (!controller.empty()) sc.controller = controller_from_string(controller);
    if (seed >= 0) sc.seed = static_cast<std::uint64_t>(seed);
    const EpisodeResult r = run_episode(sc);
    if (!log.empty()) {
        std::ofstream f(log, std::ios::binary);
        if (!f) throw ConfigError("cannot write " + log);
        write_csv(r.log, f);
    }
    std::cout << r.summary().dump(2) << '\n';
    return r.fault.empty() ? 0 : kExitFault;
}

int cmd_replay(const std::string& log, const std::string& scenario)
{
    std::ifstream in(log, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + log);
    const std::vector<TickRecord> records = read_csv(in);
    if (records.empty()) throw ConfigError(log + ": no records");

    double min_margin = records.front().energy.passivity_margin;
    double max_w = 0.0;
    std::size_t negative = 0;
    for (const auto& r : records) {
        min_margin = std::min(min_margin, r.energy.passivity_margin);
        max_w = std::max(max_w, r.energy.W);
        negative += r.energy.passivity_margin < 0.0;
    }
    const TickRecord& last = records.back();
    nlohmann::json out = {
        {"ticks", records.size()},
        {"duration", last.t + last.dt - records.front().t},
        {"final_position", {last.x.p.x(), last.x.p.y(), last.x.p.z()}},
        {"final_rpy", {last.x.q.to_rpy().x(), last.x.q.to_rpy().y(), last.x.q.to_rpy().z()}},
        {"final_c_p", last.c_p},
        {"final_c_o", last.c_o},
        {"max_storage", max_w},
        {"min_passivity_margin", min_margin},
        {"ticks_with_negative_margin", negative},
    };
    if (!scenario.empty()) {
        const Scenario sc = Scenario::load(scenario);
        out["metrics"] = compute_metrics(records, sc.human.active(last.t).goal.pose(), sc.completion, sc.horizon).to_json();
    }
    std::cout << out.dump(2) << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
    configure_logging();
    CLI::App app{"Intent-estimating co-manipulation simulator"};
    app.require_subcommand(1);

    std::string config;
    std::string controller;
    std::string out;
    std::string scenario;
    std::string log;
    int trials = 0;
    long long seed = -1;
    bool no_logs = false;

    auto* run = app.add_subcommand("run", "Run a batch experiment");
    run->add_option("--config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    run->add_option("--controller", controller, "proposed | admittance | fixed_goal_ds | all");
    run->add_option("--trials", trials, "Number of trials")->check(CLI::PositiveNumber);
    run->add_option("--seed", seed, "Experiment seed")->check(CLI::NonNegativeNumber);
    run->add_option("--out", out, "Output directory");
    run->add_flag("--no-logs", no_logs, "Skip per-tick trial logs");

    auto* episode = app.add_subcommand("episode", "Run one episode of a scenario");
    episode->add_option("--scenario", scenario, "Scenario file")->required()->check(CLI::ExistingFile);
    episode->add_option("--controller", controller, "proposed | admittance | fixed_goal_ds");
    episode->add_option("--seed", seed, "Seed")->check(CLI::NonNegativeNumber);
    episode->add_option("--log", log, "Write the per-tick CSV log here");

    auto* replay = app.add_subcommand("replay", "Summarize a per-tick CSV log");
    replay->add_option("--log", log, "CSV log")->required()->check(CLI::ExistingFile);
    replay->add_option("--scenario", scenario, "Scenario for goal metrics")->check(CLI::ExistingFile);

    ServiceConfig svc;
    auto* serve_cmd = app.add_subcommand("serve", "Run the WebSocket teleoperation server");
    serve_cmd->add_option("--scenario", svc.scenario, "Scenario file")->required()->check(CLI::ExistingFile);
    serve_cmd->add_option("--scenario-dir", svc.scenario_dir, "Directory for select_scenario lookups");
    serve_cmd->add_option("--bind", svc.bind, "Bind address");
    serve_cmd->add_option("--port", svc.port, "TCP port (0 picks one)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (*run) return cmd_run(config, controller, trials, seed, out, no_logs);
        if (*episode) return cmd_episode(scenario, controller, seed, log);
        if (*replay) return cmd_replay(log, scenario);
        if (*serve_cmd) {
            if (svc.scenario_dir.empty()) svc.scenario_dir = std::filesystem::path(svc.scenario).parent_path().string();
            return serve(svc);
        }
    } catch (const ConfigError& e) {
        spdlog::error("{}", e.what());
        return kExitConfig;
    } catch (const SimFault& e) {
        spdlog::error("{}", e.what());
        return kExitFault;
    } catch (const std::system_error& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    return 0;
}
