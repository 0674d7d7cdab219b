#include <doctest.h>

#include <chrono>
#include <fstream>
#include <map>
#include <optional>
#include <regex>
#include <sstream>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "comanip/errors.hpp"
#include "comanip/teleop_service.hpp"

using namespace comanip;
namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

namespace {

const std::string kScenarioDir = COMANIP_SCENARIO_DIR;

ServiceConfig service_config()
{
    ServiceConfig cfg;
    cfg.scenario = kScenarioDir + "/default.json";
    cfg.scenario_dir = kScenarioDir;
    cfg.port = 0;
    return cfg;
}

std::string command(const nlohmann::json& payload)
{
    return nlohmann::json{{"v", 1}, {"type", "command"}, {"payload", payload}}.dump();
}

protocol::CommandMessage push(double fx)
{
    protocol::CommandMessage c;
    c.wrench = Wrench::Zero();
    (*c.wrench)[0] = fx;
    return c;
}

// Scripted drag: a sharp +x push at the force limit, then the hand brakes the
// object and lets go.
constexpr double kPushTime = 0.3;   // s
constexpr double kBrakeTime = 0.5;  // s

double drag_force(double age, double vx) { return age < kPushTime ? 30.0 : -40.0 * vx; }

// Confidence trace of a push-and-release: peak during the push, the dip that
// follows, and the time (after onset) at which c_p climbs back over the peak.
struct DragTrace {
    double peak = 0.0;
    double dip = 1.0;
    std::optional<double> recovered;
    bool dipped = false;

    void add(double t, double c)
    {
        if (!dipped) {
            if (c >= peak) {
                peak = c;
            } else if (peak - c > 1e-3) {
                dipped = true;
                dip = c;
            }
        } else if (!recovered) {
            dip = std::min(dip, c);
            if (c > peak) recovered = t;
        }
    }
};

std::vector<std::pair<std::string, std::string>> golden_blocks()
{
    std::ifstream in(std::string(COMANIP_SOURCE_DIR) + "/PROTOCOL.md");
    REQUIRE(in);
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    static const std::regex re("```json (golden-[a-z]+)\\n([\\s\\S]*?)```");
    std::vector<std::pair<std::string, std::string>> out;
    for (std::sregex_iterator it(text.begin(), text.end(), re), end; it != end; ++it) {
        out.emplace_back((*it)[1].str(), (*it)[2].str());
    }
    return out;
}

// Minimal blocking clients for the network tests.
struct HttpReply {
    unsigned status = 0;
    std::string body;
};

HttpReply http_request(unsigned short port, http::verb verb, const std::string& target)
{
    net::io_context ioc;
    tcp::socket sock(ioc);
    sock.connect({net::ip::make_address("127.0.0.1"), port});
    http::request<http::empty_body> req(verb, target, 11);
    req.set(http::field::host, "127.0.0.1");
    http::write(sock, req);
    beast::flat_buffer buf;
    http::response<http::string_body> res;
    http::read(sock, buf, res);
    return {res.result_int(), res.body()};
}

struct WsClient {
    net::io_context ioc;
    websocket::stream<tcp::socket> ws{ioc};

    explicit WsClient(unsigned short port, const std::string& target = "/session")
    {
        ws.next_layer().connect({net::ip::make_address("127.0.0.1"), port});
        ws.handshake("127.0.0.1", target);
    }

    nlohmann::json read()
    {
        beast::flat_buffer buf;
        ws.read(buf);
        return nlohmann::json::parse(beast::buffers_to_string(buf.data()));
    }

    void send(const std::string& text) { ws.write(net::buffer(text)); }
};

}  // namespace

// ---------------------------------------------------------------------------
// Protocol

TEST_CASE("command parsing and clamping")
{
    const auto c = protocol::parse_command(command({{"wrench", {100.0, 0.0, 0.0, 0.0, 0.0, 10.0}},
                                                    {"control", "pause"},
                                                    {"overrides",
                                                     {{"lambda_p", {1000.0, 5.0, 50.0}},
                                                      {"lambda_o", {20.0, 20.0, 20.0}},
                                                      {"ascent_pos", 5.0},
                                                      {"ascent_rot", 0.3}}}}));
    REQUIRE(c.wrench);
    CHECK(c.wrench->isApprox((Wrench() << 30.0, 0.0, 0.0, 0.0, 0.0, 5.0).finished()));
    CHECK(c.control == protocol::SessionControl::pause);
    CHECK(*c.lambda_p == Vec3(300.0, 10.0, 50.0));
    CHECK(*c.lambda_o == Vec3::Constant(20.0));
    CHECK(*c.ascent_pos == 2.0);
    CHECK(*c.ascent_rot == 0.3);

    // Re-parsing the serialized form reproduces the message.
    const auto again = protocol::parse_command(protocol::to_json(c).dump());
    CHECK(*again.wrench == *c.wrench);
    CHECK(again.control == c.control);
    CHECK(*again.lambda_p == *c.lambda_p);
    CHECK(*again.ascent_pos == *c.ascent_pos);

    const auto sel = protocol::parse_command(command({{"control", "select_scenario"}, {"scenario", "default"}}));
    CHECK(sel.control == protocol::SessionControl::select_scenario);
    CHECK(sel.scenario == "default");

    const auto empty = protocol::parse_command(command(nlohmann::json::object()));
    CHECK_FALSE(empty.wrench);
    CHECK(empty.control == protocol::SessionControl::none);
}

TEST_CASE("malformed commands are rejected")
{
    const std::vector<std::string> bad = {
        "not json",
        "[]",
        R"({"v":1,"type":"command"})",
        R"({"v":2,"type":"command","payload":{}})",
        R"({"v":1,"type":"session","payload":{}})",
        R"({"v":1,"type":"command","payload":{},"extra":0})",
        R"({"v":1,"type":"command","payload":{"gain":3}})",
        R"({"v":1,"type":"command","payload":{"wrench":[1,2,3]}})",
        R"({"v":1,"type":"command","payload":{"wrench":[1,2,3,4,5,"6"]}})",
        R"({"v":1,"type":"command","payload":{"wrench":[1e400,0,0,0,0,0]}})",
        R"({"v":1,"type":"command","payload":{"control":"jump"}})",
        R"({"v":1,"type":"command","payload":{"control":"select_scenario"}})",
        R"({"v":1,"type":"command","payload":{"overrides":{"kappa":400}}})",
        R"({"v":1,"type":"command","payload":{"overrides":{"ascent_pos":"fast"}}})",
    };
    for (const auto& text : bad) {
        INFO(text);
        CHECK_THROWS_AS(protocol::parse_command(text), ProtocolError);
    }
}

TEST_CASE("wrench clamp scales by norm")
{
    const protocol::WrenchLimits lim{30.0, 5.0};
    const Wrench w = (Wrench() << 30.0, 40.0, 0.0, 0.0, 3.0, 4.0).finished();
    const Wrench c = protocol::clamp_wrench(w, lim);
    CHECK(c.head<3>().norm() == doctest::Approx(30.0));
    CHECK(c.head<3>().normalized().isApprox(w.head<3>().normalized()));
    CHECK(c.tail<3>() == w.tail<3>());
}

TEST_CASE("session frames fit the transport limits")
{
    ServiceConfig cfg = service_config();
    cfg.max_particles = 100000;
    SessionCore core(cfg);
    for (int k = 0; k < 20; ++k) core.tick();
    const nlohmann::json f = core.frame();
    protocol::validate_session_message(f);
    CHECK(f["payload"]["particles"]["p"].size() <= protocol::kMaxParticles);
    CHECK(f["payload"]["particles"]["p"].size() > 0);
    CHECK(protocol::serialize_frame(f).size() <= protocol::kMaxFrameBytes);

    // An oversized frame sheds particles until it fits.
    nlohmann::json big = f;
    auto& pts = big["payload"]["particles"];
    for (int i = 0; i < 4000; ++i) {
        pts["p"].push_back({0.123456789012345, 0.123456789012345, 0.123456789012345});
        pts["w"].push_back(0.123456789012345);
    }
    const std::string text = protocol::serialize_frame(big);
    CHECK(text.size() <= protocol::kMaxFrameBytes);
    const auto back = nlohmann::json::parse(text);
    CHECK(back["payload"]["particles"]["p"].size() == back["payload"]["particles"]["w"].size());

    nlohmann::json broken = f;
    broken["payload"]["surprise"] = 1;
    CHECK_THROWS_AS(protocol::validate_session_message(broken), ProtocolError);
    broken = f;
    broken["payload"]["pose"]["q"] = {1.0, 0.0};
    CHECK_THROWS_AS(protocol::validate_session_message(broken), ProtocolError);
}

TEST_CASE("golden frames in PROTOCOL.md")
{
    const auto blocks = golden_blocks();
    std::map<std::string, int> seen;
    for (const auto& [kind, text] : blocks) {
        INFO(kind << ": " << text);
        ++seen[kind];
        if (kind == "golden-command") {
            CHECK_NOTHROW(protocol::parse_command(text));
        } else if (kind == "golden-reject") {
            CHECK_THROWS_AS(protocol::parse_command(text), ProtocolError);
        } else if (kind == "golden-session") {
            CHECK_NOTHROW(protocol::validate_session_message(nlohmann::json::parse(text)));
        } else if (kind == "golden-error") {
            const auto j = nlohmann::json::parse(text);
            CHECK(j == protocol::error_message(j["payload"]["message"].get<std::string>()));
        } else {
            FAIL("unknown golden block " << kind);
        }
    }
    CHECK(seen["golden-command"] >= 3);
    CHECK(seen["golden-reject"] >= 1);
    CHECK(seen["golden-session"] == 1);
    CHECK(seen["golden-error"] == 1);
}

// ---------------------------------------------------------------------------
// SessionCore

TEST_CASE("client wrench hold and decay")
{
    SessionCore core(service_config());
    CHECK(core.applied_wrench() == Wrench::Zero());
    core.apply(push(10.0));
    CHECK(core.applied_wrench()[0] == 10.0);
    const double t0 = core.sim().state().t;
    auto advance_to = [&](double age) {
        while (core.sim().state().t - t0 < age - 1e-9) core.tick();
    };
    advance_to(0.095);
    CHECK(core.applied_wrench()[0] == 10.0);
    advance_to(0.15);
    CHECK(core.applied_wrench()[0] == doctest::Approx(5.0).epsilon(1e-6));
    advance_to(0.2);
    CHECK(core.applied_wrench()[0] == doctest::Approx(0.0).epsilon(1e-6));
    advance_to(0.3);
    CHECK(core.applied_wrench() == Wrench::Zero());

    // A fresh command restarts the hold.
    core.apply(push(-4.0));
    CHECK(core.applied_wrench()[0] == -4.0);
}

TEST_CASE("applied force never exceeds the human limits")
{
    SessionCore core(service_config());
    protocol::CommandMessage c;
    c.wrench = (Wrench() << 500.0, -500.0, 0.0, 50.0, 0.0, 0.0).finished();
    core.apply(c);
    const Wrench w = core.applied_wrench();
    CHECK(w.head<3>().norm() <= core.wrench_limits().f_max + 1e-12);
    CHECK(w.tail<3>().norm() <= core.wrench_limits().tau_max + 1e-12);
}

TEST_CASE("idle session holds the object")
{
    SessionCore core(service_config());
    const Vec3 p0 = core.sim().state().x.p;
    for (int k = 0; k < 400; ++k) core.tick();
    CHECK((core.sim().state().x.p - p0).norm() < 0.01);
    CHECK(core.metrics().lin_impulse == 0.0);
    const auto f = core.frame()["payload"];
    CHECK(f["applied_wrench"] == nlohmann::json({0.0, 0.0, 0.0, 0.0, 0.0, 0.0}));
    CHECK(f["tick"] == 400);
}

TEST_CASE("controls: pause, reset, select_scenario, overrides")
{
    SessionCore core(service_config());
    for (int k = 0; k < 10; ++k) core.tick();
    protocol::CommandMessage c;
    c.control = protocol::SessionControl::pause;
    core.apply(c);
    const double t = core.sim().state().t;
    core.tick();
    CHECK(core.sim().state().t == t);
    CHECK_FALSE(core.running());

    c.control = protocol::SessionControl::start;
    core.apply(c);
    core.apply(push(5.0));
    core.tick();
    CHECK(core.metrics().lin_impulse > 0.0);

    c.control = protocol::SessionControl::reset;
    core.apply(c);
    CHECK(core.sim().state().t == 0.0);
    CHECK(core.metrics().lin_impulse == 0.0);
    CHECK(core.applied_wrench() == Wrench::Zero());
    CHECK(core.ticks() == 11);  // the tick counter is monotone across resets

    c.control = protocol::SessionControl::select_scenario;
    c.scenario = "no_such_scenario";
    CHECK(core.apply(c).has_value());
    c.scenario = "../default";
    CHECK(core.apply(c).has_value());
    c.scenario = "default";
    CHECK_FALSE(core.apply(c).has_value());

    protocol::CommandMessage o;
    o.lambda_p = Vec3::Constant(120.0);
    o.ascent_pos = 0.2;
    core.apply(o);
    CHECK(core.sim().scenario().gains.lambda_p == Vec3::Constant(120.0));
    CHECK(core.sim().scenario().filter.ascent_pos == 0.2);
}

TEST_CASE("scripted push: confidence dips, the goal estimate follows, confidence recovers")
{
    SessionCore core(service_config());
    for (int k = 0; k < 200; ++k) core.tick();
    const double est0 = core.sim().estimate().intent.pos.attractor.x();
    const double onset = core.sim().state().t;

    DragTrace trace;
    double est_after_2s = est0;
    for (int k = 0; k < 1000; ++k) {
        const double age = core.sim().state().t - onset;
        if (age < kPushTime + kBrakeTime && k % 6 == 0) core.apply(push(drag_force(age, core.sim().state().v[0])));
        core.tick();
        trace.add(age, core.sim().estimate().c_p);
        if (age <= 2.0) est_after_2s = core.sim().estimate().intent.pos.attractor.x();
    }
    INFO("peak " << trace.peak << " dip " << trace.dip);
    CHECK(trace.dipped);
    CHECK(trace.peak - trace.dip > 0.01);
    REQUIRE(trace.recovered);
    CHECK(*trace.recovered < 5.0);
    CHECK(est_after_2s - est0 > 0.01);
}

// ---------------------------------------------------------------------------
// Network

TEST_CASE("service endpoints")
{
    TeleopService svc(service_config());
    svc.start();
    REQUIRE(svc.port() != 0);

    SUBCASE("healthz")
    {
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
        const HttpReply r = http_request(svc.port(), http::verb::get, "/healthz");
        CHECK(r.status == 200);
        const auto j = nlohmann::json::parse(r.body);
        CHECK(j["status"] == "ok");
        CHECK(j["tick"].get<std::uint64_t>() > 0);
        CHECK(http_request(svc.port(), http::verb::post, "/healthz").status == 405);
        CHECK(http_request(svc.port(), http::verb::get, "/nope").status == 404);
    }

    SUBCASE("frames stream with monotone ticks")
    {
        WsClient c(svc.port());
        std::uint64_t last = 0;
        for (int i = 0; i < 10; ++i) {
            const auto f = c.read();
            protocol::validate_session_message(f);
            const auto tick = f["payload"]["tick"].get<std::uint64_t>();
            if (i > 0) CHECK(tick > last);
            last = tick;
        }
        CHECK(svc.clients() == 1);
    }

    SUBCASE("unknown scenario gets an error frame and the session stays open")
    {
        WsClient c(svc.port());
        c.send(command({{"control", "select_scenario"}, {"scenario", "missing"}}));
        bool got_error = false;
        for (int i = 0; i < 30 && !got_error; ++i) {
            const auto f = c.read();
            if (f["type"] == "error") got_error = true;
        }
        CHECK(got_error);
        protocol::validate_session_message(c.read());
    }

    SUBCASE("malformed frame closes with a protocol error")
    {
        WsClient c(svc.port());
        c.send(R"({"v":1,"type":"command","payload":{"wrench":[1,2,3],"bogus":true}})");
        beast::error_code ec;
        for (int i = 0; i < 100 && !ec; ++i) {
            beast::flat_buffer buf;
            c.ws.read(buf, ec);
        }
        CHECK(ec == websocket::error::closed);
        CHECK(c.ws.reason().code == protocol::kCloseProtocolError);
    }

    svc.stop();
}

TEST_CASE("scripted websocket client replays a push")
{
    TeleopService svc(service_config());
    svc.start();
    WsClient c(svc.port());

    auto session_frame = [&] {
        for (;;) {
            auto f = c.read();
            if (f["type"] == "session") return f["payload"];
        }
    };
    // Idle for one second of session time so the confidence builds up.
    nlohmann::json f = session_frame();
    while (f["t"].get<double>() < 1.0) f = session_frame();
    const double est0 = f["estimate"]["p"][0].get<double>();
    const double onset = f["t"].get<double>();

    DragTrace trace;
    double est_after_2s = est0;
    for (;;) {
        const double age = f["t"].get<double>() - onset;
        if (age < kPushTime + kBrakeTime) {
            c.send(command({{"wrench", {drag_force(age, f["twist"][0].get<double>()), 0.0, 0.0, 0.0, 0.0, 0.0}}}));
        }
        f = session_frame();
        trace.add(age, f["confidence"]["c_p"].get<double>());
        if (age <= 2.0) est_after_2s = f["estimate"]["p"][0].get<double>();
        if (age > 5.0 || (trace.recovered && age > 2.0)) break;
    }
    svc.stop();

    INFO("peak " << trace.peak << " dip " << trace.dip);
    CHECK(trace.dipped);
    CHECK(trace.peak - trace.dip > 0.003);
    REQUIRE(trace.recovered);
    CHECK(*trace.recovered < 5.0);
    CHECK(est_after_2s - est0 > 0.01);
}
