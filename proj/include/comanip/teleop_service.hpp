#pragma once

#include <atomic>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <json.hpp>

#include "comanip/protocol.hpp"
#include "comanip/simworld.hpp"

namespace comanip {

struct ServiceConfig {
    std::string bind = "127.0.0.1";
    unsigned short port = 8765;  // 0 picks a free port
    std::string scenario;        // initial scenario file
    /// select_scenario looks up <scenario_dir>/<name>.json; names are
    /// restricted to [A-Za-z0-9_-].
    std::string scenario_dir;
    double broadcast_hz = 30.0;
    double hold = 0.1;   // s, zero-order hold of the last client wrench
    double decay = 0.1;  // s, linear fade to zero after the hold
    std::size_t max_particles = protocol::kMaxParticles;
    protocol::ParameterLimits parameter_limits;
    bool realtime = true;  // pace the sim loop to wall-clock time
};

/// The simulation half of the service: single-threaded, no networking.
/// The scenario's synthetic human is replaced by the client wrench.
class SessionCore {
public:
    /// Throws ConfigError for a bad scenario.
    explicit SessionCore(const ServiceConfig& cfg);

    /// Applies one parsed command at the current simulation time. A bad
    /// scenario name leaves the session unchanged and is returned as an
    /// error string.
    std::optional<std::string> apply(const protocol::CommandMessage& cmd);

    /// Client wrench after the hold/decay contract, clamped to the human limits.
    Wrench applied_wrench() const;

    /// One control period (no-op while paused).
    void tick();

    nlohmann::json frame() const;
    std::uint64_t ticks() const { return ticks_; }  // monotone across resets
    bool running() const { return running_; }
    const Simulation& sim() const { return *sim_; }
    const protocol::SessionMetrics& metrics() const { return metrics_; }
    const std::string& scenario_name() const { return scenario_name_; }
    protocol::WrenchLimits wrench_limits() const;

private:
    void load(const std::string& path);

    ServiceConfig cfg_;
    std::string scenario_name_;
    std::string path_;
    std::unique_ptr<Simulation> sim_;
    Wrench last_wrench_ = Wrench::Zero();
    std::optional<double> last_wrench_t_;
    Wrench applied_ = Wrench::Zero();
    protocol::SessionMetrics metrics_;
    std::uint64_t ticks_ = 0;
    bool running_ = true;
};

/// WebSocket endpoint /session and HTTP GET /healthz. The sim loop runs on its
/// own thread at the scenario rate and exchanges data with the network thread
/// only through a command queue (ordered, lossless) and a latest-frame slot
/// (older frames are dropped).
class TeleopService {
public:
    explicit TeleopService(ServiceConfig cfg);
    ~TeleopService();
    TeleopService(const TeleopService&) = delete;
    TeleopService& operator=(const TeleopService&) = delete;

    /// Binds and starts both threads. Throws ConfigError for a bad scenario
    /// and std::system_error when the address cannot be bound.
    void start();
    void stop();
    unsigned short port() const { return port_; }
    std::uint64_t sim_ticks() const { return sim_ticks_.load(); }
    std::size_t clients() const;

    struct Impl;

private:
    ServiceConfig cfg_;
    std::unique_ptr<Impl> impl_;
    unsigned short port_ = 0;
    std::atomic<std::uint64_t> sim_ticks_{0};
};

/// Runs a service in the foreground until SIGINT or SIGTERM.
int serve(const ServiceConfig& cfg);

}  // namespace comanip
