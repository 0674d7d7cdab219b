#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "comanip/estimator.hpp"
#include "comanip/types.hpp"

namespace comanip {

class Simulation;

namespace protocol {

inline constexpr int kVersion = 1;
inline constexpr std::size_t kMaxFrameBytes = 64 * 1024;
inline constexpr std::size_t kMaxParticles = 256;
/// WebSocket close code sent for malformed client frames.
inline constexpr std::uint16_t kCloseProtocolError = 1002;

/// Whitelisted ranges for live overrides. Values outside are clamped.
struct ParameterLimits {
    Bounds lambda_p{10.0, 300.0};  // N s/m
    Bounds lambda_o{1.0, 40.0};    // N m s/rad
    Bounds ascent{0.05, 2.0};      // 1/s
};

struct WrenchLimits {
    double f_max = 30.0;   // N
    double tau_max = 5.0;  // N m
};

enum class SessionControl { none, start, pause, reset, select_scenario };
std::string to_string(SessionControl c);

struct CommandMessage {
    std::optional<Wrench> wrench;
    SessionControl control = SessionControl::none;
    std::string scenario;  // select_scenario only
    std::optional<Vec3> lambda_p;
    std::optional<Vec3> lambda_o;
    std::optional<double> ascent_pos;
    std::optional<double> ascent_rot;
};

/// Force and torque parts scaled down to the limits (by norm).
Wrench clamp_wrench(const Wrench& w, const WrenchLimits& limits);

/// Every frame is {"v": kVersion, "type": ..., "payload": {...}}.
nlohmann::json envelope(const std::string& type, nlohmann::json payload);
nlohmann::json error_message(const std::string& message);

/// Parses one client frame and clamps its values. Throws ProtocolError for
/// invalid JSON, a wrong envelope, wrong types, non-finite numbers, or
/// unknown fields.
CommandMessage parse_command(std::string_view text, const WrenchLimits& wl = {}, const ParameterLimits& pl = {});
nlohmann::json to_json(const CommandMessage& c);

/// Interaction totals since the last reset.
struct SessionMetrics {
    double elapsed = 0.0;      // s
    double lin_impulse = 0.0;  // N s
    double ang_impulse = 0.0;  // N m s
    std::optional<double> completion_time;
};

struct FrameInfo {
    std::uint64_t tick = 0;
    bool running = true;
    std::string scenario;
    Wrench applied_wrench = Wrench::Zero();
    SessionMetrics metrics;
};

/// Server -> client state frame. The particle cloud is decimated to at most
/// max_particles (capped at kMaxParticles).
nlohmann::json session_message(const Simulation& sim, const FrameInfo& info, std::size_t max_particles = kMaxParticles);

/// Compact dump; halves the particle cloud until the text fits kMaxFrameBytes.
std::string serialize_frame(nlohmann::json frame);

/// Structural check of a server frame (used by tests and the golden files).
/// Throws ProtocolError naming the first problem.
void validate_session_message(const nlohmann::json& frame);

}  // namespace protocol
}  // namespace comanip
