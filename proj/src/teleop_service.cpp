#include "comanip/teleop_service.hpp"

#include <chrono>
#include <filesystem>
#include <regex>
#include <vector>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <spdlog/spdlog.h>

#include "comanip/errors.hpp"

namespace comanip {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

namespace {

bool valid_scenario_name(const std::string& name)
{
    static const std::regex re("[A-Za-z0-9_-]{1,64}");
    return std::regex_match(name, re);
}

std::string scenario_path(const ServiceConfig& cfg, const std::string& name)
{
    return (std::filesystem::path(cfg.scenario_dir) / (name + ".json")).string();
}

}  // namespace

// ---------------------------------------------------------------------------

SessionCore::SessionCore(const ServiceConfig& cfg) : cfg_(cfg), path_(cfg.scenario) { load(path_); }

void SessionCore::load(const std::string& path)
{
    Scenario sc = Scenario::load(path);
    auto sim = std::make_unique<Simulation>(sc);
    sim_ = std::move(sim);
    scenario_name_ = sc.name;
    last_wrench_.setZero();
    last_wrench_t_.reset();
    applied_.setZero();
    metrics_ = {};
}

protocol::WrenchLimits SessionCore::wrench_limits() const
{
    return {sim_->scenario().human.f_max, sim_->scenario().human.tau_max};
}

std::optional<std::string> SessionCore::apply(const protocol::CommandMessage& cmd)
{
    using protocol::SessionControl;
    switch (cmd.control) {
    case SessionControl::none: break;
    case SessionControl::start: running_ = true; break;
    case SessionControl::pause: running_ = false; break;
    case SessionControl::reset: load(path_); break;
    case SessionControl::select_scenario:
        if (!valid_scenario_name(cmd.scenario) || cfg_.scenario_dir.empty()) {
            return "unknown scenario '" + cmd.scenario + "'";
        }
        try {
            const std::string path = scenario_path(cfg_, cmd.scenario);
            load(path);
            path_ = path;
        } catch (const ConfigError& e) {
            return std::string("cannot load scenario '") + cmd.scenario + "': " + e.what();
        }
        break;
    }
    if (cmd.wrench) {
        last_wrench_ = protocol::clamp_wrench(*cmd.wrench, wrench_limits());
        last_wrench_t_ = sim_->state().t;
    }
    if (cmd.lambda_p || cmd.lambda_o) {
        ImpedanceGains g = sim_->scenario().gains;
        if (cmd.lambda_p) g.lambda_p = *cmd.lambda_p;
        if (cmd.lambda_o) g.lambda_o = *cmd.lambda_o;
        sim_->set_gains(g);
    }
    if (cmd.ascent_pos || cmd.ascent_rot) {
        sim_->set_ascent_rates(cmd.ascent_pos.value_or(sim_->scenario().filter.ascent_pos),
                               cmd.ascent_rot.value_or(sim_->scenario().filter.ascent_rot));
    }
    return std::nullopt;
}

Wrench SessionCore::applied_wrench() const
{
    if (!last_wrench_t_) return Wrench::Zero();
    const double age = sim_->state().t - *last_wrench_t_;
    double scale = 1.0;
    if (age > cfg_.hold) scale = cfg_.decay > 0.0 ? std::max(0.0, 1.0 - (age - cfg_.hold) / cfg_.decay) : 0.0;
    return protocol::clamp_wrench(scale * last_wrench_, wrench_limits());
}

void SessionCore::tick()
{
    if (!running_) return;
    applied_ = applied_wrench();
    const TickRecord& r = sim_->tick(&applied_);
    metrics_.elapsed = sim_->state().t;
    if (!metrics_.completion_time) {
        metrics_.lin_impulse += r.u_h.head<3>().norm() * r.dt;
        metrics_.ang_impulse += r.u_h.tail<3>().norm() * r.dt;
        if (sim_->at_goal()) metrics_.completion_time = sim_->state().t;
    }
    ++ticks_;
}

nlohmann::json SessionCore::frame() const
{
    protocol::FrameInfo info;
    info.tick = ticks_;
    info.running = running_;
    info.scenario = scenario_name_;
    info.applied_wrench = applied_;
    info.metrics = metrics_;
    return protocol::session_message(*sim_, info, cfg_.max_particles);
}

// ---------------------------------------------------------------------------

namespace {

class WsSession;

}  // namespace

struct TeleopService::Impl {
    explicit Impl(const ServiceConfig& c) : cfg(c), acceptor(ioc), broadcast_timer(ioc) {}

    void accept();
    void schedule_broadcast();
    void sim_loop();
    void publish(std::string text);
    void enqueue(protocol::CommandMessage cmd);

    ServiceConfig cfg;
    net::io_context ioc;
    tcp::acceptor acceptor;
    net::steady_timer broadcast_timer;
    std::thread io_thread;
    std::thread sim_thread;
    std::atomic<bool> stopping{false};
    std::atomic<bool> running{true};
    std::atomic<std::uint64_t>* ticks = nullptr;
    std::atomic<std::size_t> n_clients{0};
    std::unique_ptr<SessionCore> core;
    protocol::WrenchLimits limits;  // fixed at start; the core re-clamps per scenario

    std::mutex cmd_mu;
    std::deque<protocol::CommandMessage> commands;

    std::mutex frame_mu;
    std::shared_ptr<const std::string> frame;
    std::uint64_t frame_seq = 0;
    std::uint64_t sent_seq = 0;  // io thread

    std::vector<std::weak_ptr<WsSession>> sessions;  // io thread
};

namespace {

class WsSession : public std::enable_shared_from_this<WsSession> {
public:
    WsSession(tcp::socket&& socket, TeleopService::Impl& svc) : ws_(std::move(socket)), svc_(svc) {}

    void run(http::request<http::string_body> req)
    {
        ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
        ws_.read_message_max(protocol::kMaxFrameBytes);
        ws_.text(true);
        ws_.async_accept(req, beast::bind_front_handler(&WsSession::on_accept, shared_from_this()));
    }

    void send(std::shared_ptr<const std::string> frame)
    {
        if (closed_) return;
        if (writing_) {
            pending_ = std::move(frame);
            return;
        }
        write(std::move(frame));
    }

    /// Session frames; a client never gets the same frame twice.
    void send_frame(std::shared_ptr<const std::string> frame, std::uint64_t seq)
    {
        if (seq <= last_seq_) return;
        last_seq_ = seq;
        send(std::move(frame));
    }

private:
    void on_accept(beast::error_code ec)
    {
        if (ec) return;
        ++svc_.n_clients;
        counted_ = true;
        svc_.sessions.push_back(weak_from_this());
        std::shared_ptr<const std::string> f;
        std::uint64_t seq = 0;
        {
            std::lock_guard lock(svc_.frame_mu);
            f = svc_.frame;
            seq = svc_.frame_seq;
        }
        if (f) send_frame(f, seq);
        read();
    }

    void read() { ws_.async_read(buf_, beast::bind_front_handler(&WsSession::on_read, shared_from_this())); }

    void on_read(beast::error_code ec, std::size_t)
    {
        if (ec) {
            finish();
            return;
        }
        const std::string text = beast::buffers_to_string(buf_.data());
        buf_.consume(buf_.size());
        try {
            protocol::CommandMessage cmd = protocol::parse_command(text, svc_.limits, svc_.cfg.parameter_limits);
            if (cmd.control == protocol::SessionControl::select_scenario &&
                (!valid_scenario_name(cmd.scenario) || svc_.cfg.scenario_dir.empty() ||
                 !std::filesystem::exists(scenario_path(svc_.cfg, cmd.scenario)))) {
                send(std::make_shared<const std::string>(
                    protocol::error_message("unknown scenario '" + cmd.scenario + "'").dump()));
            } else {
                svc_.enqueue(std::move(cmd));
            }
        } catch (const ProtocolError& e) {
            spdlog::warn("closing client: {}", e.what());
            closed_ = true;
            websocket::close_reason reason(static_cast<websocket::close_code>(protocol::kCloseProtocolError));
            reason.reason = std::string(e.what()).substr(0, 120);
            ws_.async_close(reason, [self = shared_from_this()](beast::error_code) { self->finish(); });
            return;
        }
        read();
    }

    void write(std::shared_ptr<const std::string> frame)
    {
        writing_ = true;
        current_ = std::move(frame);
        ws_.async_write(net::buffer(*current_), beast::bind_front_handler(&WsSession::on_write, shared_from_this()));
    }

    void on_write(beast::error_code ec, std::size_t)
    {
        writing_ = false;
        current_.reset();
        if (ec) {
            closed_ = true;
            return;
        }
        if (pending_ && !closed_) write(std::exchange(pending_, nullptr));
    }

    void finish()
    {
        closed_ = true;
        if (counted_) {
            --svc_.n_clients;
            counted_ = false;
        }
    }

    websocket::stream<beast::tcp_stream> ws_;
    TeleopService::Impl& svc_;
    beast::flat_buffer buf_;
    std::shared_ptr<const std::string> current_;
    std::shared_ptr<const std::string> pending_;
    bool writing_ = false;
    bool closed_ = false;
    std::uint64_t last_seq_ = 0;
    bool counted_ = false;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
public:
    HttpSession(tcp::socket&& socket, TeleopService::Impl& svc) : stream_(std::move(socket)), svc_(svc) {}

    void run()
    {
        stream_.expires_after(std::chrono::seconds(10));
        http::async_read(stream_, buf_, req_, beast::bind_front_handler(&HttpSession::on_read, shared_from_this()));
    }

private:
    void on_read(beast::error_code ec, std::size_t)
    {
        if (ec) return;
        if (websocket::is_upgrade(req_)) {
            if (req_.target() == "/session") {
                stream_.expires_never();
                std::make_shared<WsSession>(stream_.release_socket(), svc_)->run(std::move(req_));
                return;
            }
            respond(http::status::not_found, R"({"error":"not found"})");
            return;
        }
        if (req_.target() == "/healthz") {
            if (req_.method() != http::verb::get) {
                respond(http::status::method_not_allowed, R"({"error":"method not allowed"})");
                return;
            }
            const nlohmann::json body = {{"status", "ok"},
                                         {"tick", svc_.ticks ? svc_.ticks->load() : 0},
                                         {"clients", svc_.n_clients.load()},
                                         {"running", svc_.running.load()},
                                         {"version", protocol::kVersion}};
            respond(http::status::ok, body.dump());
            return;
        }
        respond(http::status::not_found, R"({"error":"not found"})");
    }

    void respond(http::status status, std::string body)
    {
        auto res = std::make_shared<http::response<http::string_body>>(status, req_.version());
        res->set(http::field::content_type, "application/json");
        res->keep_alive(false);
        res->body() = std::move(body);
        res->prepare_payload();
        http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code, std::size_t) {
            beast::error_code ignored;
            self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
        });
    }

    beast::tcp_stream stream_;
    TeleopService::Impl& svc_;
    beast::flat_buffer buf_;
    http::request<http::string_body> req_;
};

}  // namespace

void TeleopService::Impl::accept()
{
    acceptor.async_accept(net::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
        if (ec) {
            if (!stopping) spdlog::warn("accept failed: {}", ec.message());
        } else {
            std::make_shared<HttpSession>(std::move(socket), *this)->run();
        }
        if (!stopping) accept();
    });
}

void TeleopService::Impl::schedule_broadcast()
{
    broadcast_timer.expires_after(std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(1.0 / cfg.broadcast_hz)));
    broadcast_timer.async_wait([this](beast::error_code ec) {
        if (ec || stopping) return;
        std::shared_ptr<const std::string> f;
        std::uint64_t seq = 0;
        {
            std::lock_guard lock(frame_mu);
            f = frame;
            seq = frame_seq;
        }
        if (f && seq != sent_seq) {
            sent_seq = seq;
            std::erase_if(sessions, [](const std::weak_ptr<WsSession>& w) { return w.expired(); });
            for (const auto& w : sessions) {
                if (auto s = w.lock()) s->send_frame(f, seq);
            }
        }
        schedule_broadcast();
    });
}

void TeleopService::Impl::publish(std::string text)
{
    auto f = std::make_shared<const std::string>(std::move(text));
    std::lock_guard lock(frame_mu);
    frame = std::move(f);
    ++frame_seq;
}

void TeleopService::Impl::enqueue(protocol::CommandMessage cmd)
{
    std::lock_guard lock(cmd_mu);
    commands.push_back(std::move(cmd));
}

void TeleopService::Impl::sim_loop()
{
    using clock = std::chrono::steady_clock;
    auto next = clock::now();
    double frame_clock = 0.0;
    while (!stopping) {
        std::deque<protocol::CommandMessage> batch;
        {
            std::lock_guard lock(cmd_mu);
            batch.swap(commands);
        }
        for (const auto& c : batch) {
            if (auto err = core->apply(c)) spdlog::warn("{}", *err);
        }
        try {
            core->tick();
        } catch (const std::exception& e) {
            spdlog::error("simulation fault, resetting: {}", e.what());
            protocol::CommandMessage reset;
            reset.control = protocol::SessionControl::reset;
            core->apply(reset);
        }
        ticks->store(core->ticks());
        running = core->running();

        const double dt = core->sim().scenario().dt;
        frame_clock += dt * cfg.broadcast_hz;
        if (frame_clock >= 1.0) {
            frame_clock -= 1.0;
            publish(protocol::serialize_frame(core->frame()));
        }
        if (cfg.realtime) {
            next += std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(dt));
            const auto now = clock::now();
            if (next < now - std::chrono::milliseconds(100)) next = now;
            std::this_thread::sleep_until(next);
        } else {
            std::this_thread::yield();
        }
    }
}

// ---------------------------------------------------------------------------

TeleopService::TeleopService(ServiceConfig cfg) : cfg_(std::move(cfg)) {}

TeleopService::~TeleopService() { stop(); }

void TeleopService::start()
{
    if (impl_) return;
    if (!(cfg_.broadcast_hz > 0.0)) throw ConfigError("service: broadcast_hz must be positive");
    auto impl = std::make_unique<Impl>(cfg_);
    impl->core = std::make_unique<SessionCore>(cfg_);
    impl->limits = impl->core->wrench_limits();
    impl->ticks = &sim_ticks_;
    impl->publish(protocol::serialize_frame(impl->core->frame()));

    const tcp::endpoint ep(net::ip::make_address(cfg_.bind), cfg_.port);
    impl->acceptor.open(ep.protocol());
    impl->acceptor.set_option(net::socket_base::reuse_address(true));
    impl->acceptor.bind(ep);
    impl->acceptor.listen(net::socket_base::max_listen_connections);
    port_ = impl->acceptor.local_endpoint().port();

    impl->accept();
    impl->schedule_broadcast();
    Impl* p = impl.get();
    impl->io_thread = std::thread([p] { p->ioc.run(); });
    impl->sim_thread = std::thread([p] { p->sim_loop(); });
    impl_ = std::move(impl);
    spdlog::info("serving on ws://{}:{}/session", cfg_.bind, port_);
}

void TeleopService::stop()
{
    if (!impl_) return;
    impl_->stopping = true;
    net::post(impl_->ioc, [p = impl_.get()] {
        beast::error_code ignored;
        p->acceptor.close(ignored);
        p->broadcast_timer.cancel();
    });
    if (impl_->sim_thread.joinable()) impl_->sim_thread.join();
    impl_->ioc.stop();
    if (impl_->io_thread.joinable()) impl_->io_thread.join();
    impl_.reset();
}

std::size_t TeleopService::clients() const { return impl_ ? impl_->n_clients.load() : 0; }

int serve(const ServiceConfig& cfg)
{
    TeleopService svc(cfg);
    svc.start();
    net::io_context sig_ctx;
    net::signal_set signals(sig_ctx, SIGINT, SIGTERM);
    signals.async_wait([&](beast::error_code, int sig) { spdlog::info("signal {}, shutting down", sig); });
    sig_ctx.run();
    svc.stop();
    return 0;
}

}  // namespace comanip
