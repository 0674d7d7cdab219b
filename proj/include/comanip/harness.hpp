#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "comanip/analysis.hpp"
#include "comanip/simworld.hpp"

namespace comanip {

/// Per-trial goals are drawn uniformly from this (x, y, roll) box, rejecting
/// goals closer than min_distance to the start position.
struct GoalBox {
    Vec3 lo = Vec3(0.6, -0.3, -0.8);   // m, m, rad
    Vec3 hi = Vec3(0.95, 0.3, 0.8);
    double min_distance = 0.2;         // m

    bool operator==(const GoalBox&) const = default;
};

struct ExperimentConfig {
    std::string scenario;  // scenario file
    ControllerKind controller = ControllerKind::proposed;
    int n_trials = 20;
    std::uint64_t seed = 1;
    double horizon = 20.0;  // s
    std::string output_dir = "out";
    GoalBox goals;
    /// Hidden human dynamics drawn per trial (same for all axes).
    Bounds hidden_a_pos{-0.6, -0.4};
    Bounds hidden_a_rot{-0.9, -0.6};
    bool write_trial_logs = true;
    /// Merge patch over the scenario file (e.g. {"filter": {"ascent_pos": 0.3}}).
    /// Empty keeps the scenario's gains and filter parameters.
    nlohmann::json parameters = nlohmann::json::object();

    /// Throws ConfigError.
    void validate() const;
    nlohmann::json to_json() const;
    /// Missing keys keep their defaults. A relative scenario path is
    /// resolved against base_dir.
    static ExperimentConfig from_json(const nlohmann::json& j, const std::string& base_dir = ".");
    static ExperimentConfig load(const std::string& path);

    /// The scenario file with parameters applied. Throws ConfigError.
    Scenario base_scenario() const;
};

struct TrialResult {
    int index = 0;
    std::uint64_t seed = 0;
    PoseSpec goal;
    double hidden_a_pos = 0.0;
    double hidden_a_rot = 0.0;
    TrialMetrics metrics;
    std::size_t reinitializations = 0;
    std::size_t gas_violations = 0;
    std::size_t infeasible_survivors = 0;
    std::string fault;
};

struct MetricStats {
    double mean = 0.0;
    QuantileRow quantiles;
};

struct BatchSummary {
    ControllerKind controller = ControllerKind::proposed;
    std::uint64_t seed = 0;
    std::vector<TrialResult> trials;
    double completion_rate = 0.0;
    MetricStats completion_time;
    MetricStats lin_impulse;
    MetricStats ang_impulse;
    MetricStats avg_force;
    MetricStats avg_torque;
    std::size_t gas_violations = 0;
    std::size_t infeasible_survivors = 0;
    std::size_t reinitializations = 0;
    std::size_t faults = 0;

    nlohmann::json to_json() const;
};

/// The scenario of trial k: goal, hidden dynamics and seeds drawn from the
/// experiment seed, so every controller sees the same goal set.
Scenario trial_scenario(const ExperimentConfig& cfg, const Scenario& base, int k, TrialResult* info = nullptr);

/// Runs every trial, writes summary_<controller>.json, trials_<controller>.csv
/// and (optionally) logs/<controller>_trial_<k>.csv under output_dir. Faults
/// are recorded per trial.
BatchSummary run_batch(const ExperimentConfig& cfg);

/// Aggregation only (no files); exposed for tests.
BatchSummary summarize(ControllerKind controller, std::uint64_t seed, std::vector<TrialResult> trials);

/// Boxplot table: one row per (metric, controller) with min, q1, median,
/// q3, max and the outliers separated by ';'. Writes just the header for
/// an empty list.
void emit_plot_data(const std::vector<BatchSummary>& summaries, const std::string& path);
std::string plot_data_header();

}  // namespace comanip
