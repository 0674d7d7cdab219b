#include "comanip/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "comanip/errors.hpp"
#include "comanip/simworld.hpp"
#include "json_util.hpp"

namespace comanip::protocol {

using detail::to_json_array;

namespace {

double number(const nlohmann::json& j, const std::string& what)
{
    if (!j.is_number()) throw ProtocolError(what + ": expected a number");
    const double v = j.get<double>();
    if (!std::isfinite(v)) throw ProtocolError(what + ": not finite");
    return v;
}

VecX numbers(const nlohmann::json& j, int n, const std::string& what)
{
    if (!j.is_array() || static_cast<int>(j.size()) != n) {
        throw ProtocolError(what + ": expected " + std::to_string(n) + " numbers");
    }
    VecX v(n);
    for (int i = 0; i < n; ++i) v[i] = number(j[static_cast<std::size_t>(i)], what);
    return v;
}

void only_keys(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& what)
{
    if (!j.is_object()) throw ProtocolError(what + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::none_of(known.begin(), known.end(), [&](const char* k) { return it.key() == k; })) {
            throw ProtocolError(what + ": unknown field '" + it.key() + "'");
        }
    }
}

Vec3 clamp3(const Vec3& v, const Bounds& b) { return v.cwiseMax(b.lo).cwiseMin(b.hi); }

SessionControl control_from(const std::string& s)
{
    if (s == "start") return SessionControl::start;
    if (s == "pause") return SessionControl::pause;
    if (s == "reset") return SessionControl::reset;
    if (s == "select_scenario") return SessionControl::select_scenario;
    throw ProtocolError("control: unknown value '" + s + "'");
}

nlohmann::json quat_json(const UnitQuaternion& q)
{
    const Vec4 c = q.coeffs();
    return {c[0], c[1], c[2], c[3]};
}

nlohmann::json pose_json(const Pose& p) { return {{"p", to_json_array(p.p)}, {"q", quat_json(p.q)}}; }

void need_array(const nlohmann::json& f, const char* key, std::size_t n, const std::string& where)
{
    if (!f.contains(key) || !f.at(key).is_array() || f.at(key).size() != n) {
        throw ProtocolError(where + "." + key + ": expected " + std::to_string(n) + " numbers");
    }
    for (const auto& v : f.at(key)) {
        if (!v.is_number()) throw ProtocolError(where + "." + key + ": expected numbers");
    }
}

void need_number(const nlohmann::json& f, const char* key, const std::string& where)
{
    if (!f.contains(key) || !f.at(key).is_number()) throw ProtocolError(where + "." + key + ": expected a number");
}

}  // namespace

std::string to_string(SessionControl c)
{
    switch (c) {
    case SessionControl::none: return "none";
    case SessionControl::start: return "start";
    case SessionControl::pause: return "pause";
    case SessionControl::reset: return "reset";
    case SessionControl::select_scenario: return "select_scenario";
    }
    return "none";
}

Wrench clamp_wrench(const Wrench& w, const WrenchLimits& limits)
{
    Wrench out = w;
    const double f = w.head<3>().norm();
    const double tau = w.tail<3>().norm();
    if (f > limits.f_max) out.head<3>() *= limits.f_max / f;
    if (tau > limits.tau_max) out.tail<3>() *= limits.tau_max / tau;
    return out;
}

CommandMessage parse_command(std::string_view text, const WrenchLimits& wl, const ParameterLimits& pl)
{
    nlohmann::json env;
    try {
        env = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ProtocolError(std::string("invalid JSON: ") + e.what());
    }
    only_keys(env, {"v", "type", "payload"}, "envelope");
    if (!env.contains("v") || !env.at("v").is_number_integer() || env.at("v") != kVersion) {
        throw ProtocolError("envelope: v must be " + std::to_string(kVersion));
    }
    if (!env.contains("type") || env.at("type") != "command") throw ProtocolError("envelope: type must be \"command\"");
    if (!env.contains("payload")) throw ProtocolError("envelope: payload missing");
    const nlohmann::json& j = env.at("payload");
    only_keys(j, {"wrench", "control", "scenario", "overrides"}, "command");

    CommandMessage c;
    if (j.contains("wrench")) c.wrench = clamp_wrench(numbers(j.at("wrench"), 6, "wrench"), wl);
    if (j.contains("control")) {
        if (!j.at("control").is_string()) throw ProtocolError("control: expected a string");
        c.control = control_from(j.at("control").get<std::string>());
    }
    if (j.contains("scenario")) {
        if (!j.at("scenario").is_string()) throw ProtocolError("scenario: expected a string");
        c.scenario = j.at("scenario").get<std::string>();
    }
    if (c.control == SessionControl::select_scenario && c.scenario.empty()) {
        throw ProtocolError("select_scenario needs a scenario name");
    }
    if (j.contains("overrides")) {
        const auto& o = j.at("overrides");
        only_keys(o, {"lambda_p", "lambda_o", "ascent_pos", "ascent_rot"}, "overrides");
        if (o.contains("lambda_p")) c.lambda_p = clamp3(numbers(o.at("lambda_p"), 3, "lambda_p"), pl.lambda_p);
        if (o.contains("lambda_o")) c.lambda_o = clamp3(numbers(o.at("lambda_o"), 3, "lambda_o"), pl.lambda_o);
        if (o.contains("ascent_pos")) {
            c.ascent_pos = std::clamp(number(o.at("ascent_pos"), "ascent_pos"), pl.ascent.lo, pl.ascent.hi);
        }
        if (o.contains("ascent_rot")) {
            c.ascent_rot = std::clamp(number(o.at("ascent_rot"), "ascent_rot"), pl.ascent.lo, pl.ascent.hi);
        }
    }
    return c;
}

nlohmann::json to_json(const CommandMessage& c)
{
    nlohmann::json j = nlohmann::json::object();
    if (c.wrench) j["wrench"] = to_json_array(*c.wrench);
    if (c.control != SessionControl::none) j["control"] = to_string(c.control);
    if (!c.scenario.empty()) j["scenario"] = c.scenario;
    nlohmann::json o = nlohmann::json::object();
    if (c.lambda_p) o["lambda_p"] = to_json_array(*c.lambda_p);
    if (c.lambda_o) o["lambda_o"] = to_json_array(*c.lambda_o);
    if (c.ascent_pos) o["ascent_pos"] = *c.ascent_pos;
    if (c.ascent_rot) o["ascent_rot"] = *c.ascent_rot;
    if (!o.empty()) j["overrides"] = o;
    return envelope("command", std::move(j));
}

nlohmann::json envelope(const std::string& type, nlohmann::json payload)
{
    return {{"v", kVersion}, {"type", type}, {"payload", std::move(payload)}};
}

nlohmann::json error_message(const std::string& message) { return envelope("error", {{"message", message}}); }

// ---------------------------------------------------------------------------

nlohmann::json session_message(const Simulation& sim, const FrameInfo& info, std::size_t max_particles)
{
    max_particles = std::min(max_particles, kMaxParticles);
    const SimState& s = sim.state();
    const TickRecord& last = sim.last();
    const DsIntent& est = sim.estimate().intent;

    nlohmann::json pts = nlohmann::json::array();
    nlohmann::json w = nlohmann::json::array();
    if (const IntentSource* src = sim.source()) {
        if (const DualParticleFilter* f = src->filter(); f && max_particles > 0) {
            const auto& ps = f->pos_particles();
            const std::size_t stride = std::max<std::size_t>(1, (ps.size() + max_particles - 1) / max_particles);
            for (std::size_t i = 0; i < ps.size() && pts.size() < max_particles; i += stride) {
                pts.push_back(to_json_array(ps[i].state.attractor));
                w.push_back(ps[i].weight);
            }
        }
    }
    const Mat3 E = sim.human_ellipsoid();
    nlohmann::json ell = nlohmann::json::array();
    for (int r = 0; r < 3; ++r) ell.push_back(to_json_array(E.row(r).transpose()));

    const SessionMetrics& m = info.metrics;
    return envelope("session",
                    {{"tick", info.tick},
            {"t", s.t},
            {"running", info.running},
            {"scenario", info.scenario},
            {"controller", to_string(sim.scenario().controller)},
            {"pose", pose_json(s.x)},
            {"twist", to_json_array(s.v)},
            {"goal", pose_json(sim.goal())},
            {"estimate",
             {{"p", to_json_array(est.pos.attractor)},
              {"q", quat_json(est.rot.attractor)},
              {"a_pos", to_json_array(est.pos.a_diag)},
              {"a_rot", to_json_array(est.rot.a_diag)}}},
            {"confidence", {{"c_p", last.c_p}, {"c_o", last.c_o}}},
            {"particles", {{"p", pts}, {"w", w}}},
            {"ellipsoid", ell},
            {"energy",
             {{"W", last.energy.W},
              {"W_dot", last.energy.W_dot},
              {"E_d", last.energy.E_d},
              {"E_p", last.energy.E_p},
              {"input_power", last.energy.input_power},
              {"passivity_margin", last.energy.passivity_margin}}},
            {"applied_wrench", to_json_array(info.applied_wrench)},
            {"metrics",
             {{"elapsed", m.elapsed},
              {"lin_impulse", m.lin_impulse},
              {"ang_impulse", m.ang_impulse},
              {"completion_time", m.completion_time ? nlohmann::json(*m.completion_time) : nlohmann::json()}}}});
}

std::string serialize_frame(nlohmann::json frame)
{
    std::string text = frame.dump();
    while (text.size() > kMaxFrameBytes) {
        auto& p = frame.at("payload").at("particles").at("p");
        auto& w = frame.at("payload").at("particles").at("w");
        if (p.empty()) throw std::length_error("session frame exceeds the size limit without particles");
        const std::size_t keep = p.size() / 2;
        p.erase(p.begin() + static_cast<std::ptrdiff_t>(keep), p.end());
        w.erase(w.begin() + static_cast<std::ptrdiff_t>(keep), w.end());
        text = frame.dump();
    }
    return text;
}

void validate_session_message(const nlohmann::json& env)
{
    only_keys(env, {"v", "type", "payload"}, "envelope");
    if (!env.contains("v") || env.at("v") != kVersion) throw ProtocolError("envelope.v: unsupported");
    if (!env.contains("type") || env.at("type") != "session") throw ProtocolError("envelope.type: expected \"session\"");
    if (!env.contains("payload")) throw ProtocolError("envelope.payload: missing");
    const nlohmann::json& f = env.at("payload");
    only_keys(f,
              {"tick", "t", "running", "scenario", "controller", "pose", "twist", "goal", "estimate", "confidence",
               "particles", "ellipsoid", "energy", "applied_wrench", "metrics"},
              "session");
    if (!f.contains("tick") || !f.at("tick").is_number_unsigned()) throw ProtocolError("session.tick: expected an unsigned integer");
    need_number(f, "t", "session");
    if (!f.contains("running") || !f.at("running").is_boolean()) throw ProtocolError("session.running: expected a boolean");
    for (const char* k : {"scenario", "controller"}) {
        if (!f.contains(k) || !f.at(k).is_string()) throw ProtocolError(std::string("session.") + k + ": expected a string");
    }
    for (const char* k : {"pose", "goal"}) {
        if (!f.contains(k)) throw ProtocolError(std::string("session.") + k + ": missing");
        only_keys(f.at(k), {"p", "q"}, std::string("session.") + k);
        need_array(f.at(k), "p", 3, std::string("session.") + k);
        need_array(f.at(k), "q", 4, std::string("session.") + k);
    }
    need_array(f, "twist", 6, "session");
    need_array(f, "applied_wrench", 6, "session");
    if (!f.contains("estimate")) throw ProtocolError("session.estimate: missing");
    only_keys(f.at("estimate"), {"p", "q", "a_pos", "a_rot"}, "session.estimate");
    need_array(f.at("estimate"), "p", 3, "session.estimate");
    need_array(f.at("estimate"), "q", 4, "session.estimate");
    need_array(f.at("estimate"), "a_pos", 3, "session.estimate");
    need_array(f.at("estimate"), "a_rot", 3, "session.estimate");
    if (!f.contains("confidence")) throw ProtocolError("session.confidence: missing");
    only_keys(f.at("confidence"), {"c_p", "c_o"}, "session.confidence");
    need_number(f.at("confidence"), "c_p", "session.confidence");
    need_number(f.at("confidence"), "c_o", "session.confidence");
    if (!f.contains("particles")) throw ProtocolError("session.particles: missing");
    const auto& pt = f.at("particles");
    only_keys(pt, {"p", "w"}, "session.particles");
    if (!pt.contains("p") || !pt.contains("w") || !pt.at("p").is_array() || !pt.at("w").is_array() ||
        pt.at("p").size() != pt.at("w").size()) {
        throw ProtocolError("session.particles: p and w must be arrays of equal length");
    }
    if (pt.at("p").size() > kMaxParticles) throw ProtocolError("session.particles: more than 256 particles");
    for (const auto& p : pt.at("p")) {
        if (!p.is_array() || p.size() != 3) throw ProtocolError("session.particles.p: expected 3-vectors");
    }
    if (!f.contains("ellipsoid") || !f.at("ellipsoid").is_array() || f.at("ellipsoid").size() != 3) {
        throw ProtocolError("session.ellipsoid: expected 3 rows");
    }
    for (const auto& row : f.at("ellipsoid")) {
        if (!row.is_array() || row.size() != 3) throw ProtocolError("session.ellipsoid: expected 3 columns");
    }
    if (!f.contains("energy")) throw ProtocolError("session.energy: missing");
    only_keys(f.at("energy"), {"W", "W_dot", "E_d", "E_p", "input_power", "passivity_margin"}, "session.energy");
    for (const char* k : {"W", "W_dot", "E_d", "E_p", "input_power", "passivity_margin"}) {
        need_number(f.at("energy"), k, "session.energy");
    }
    if (!f.contains("metrics")) throw ProtocolError("session.metrics: missing");
    const auto& m = f.at("metrics");
    only_keys(m, {"elapsed", "lin_impulse", "ang_impulse", "completion_time"}, "session.metrics");
    for (const char* k : {"elapsed", "lin_impulse", "ang_impulse"}) need_number(m, k, "session.metrics");
    if (!m.contains("completion_time") || !(m.at("completion_time").is_null() || m.at("completion_time").is_number())) {
        throw ProtocolError("session.metrics.completion_time: expected a number or null");
    }
}

}  // namespace comanip::protocol
