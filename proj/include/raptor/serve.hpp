// SPDX-License-Identifier: Apache-2.0
//
// Live simulation session and its websocket front end.
//
// Wire format (docs/telemetry.md): newline-delimited JSON over a websocket.
// A client first sends {"type":"hello","schema_version":N}; the server
// answers "welcome" or an "error" with code "schema_mismatch" and closes.
// After that the client sends {"type":"command","id":..,"command":{..}} and
// receives "ack"/"error" replies plus a stream of "frame" messages.
//
// Threading: the simulation loop owns the session; network handlers only
// push commands into a queue and receive preformatted text to send.
#pragma once

#include "raptor/analysis.hpp"
#include "raptor/env.hpp"
#include "raptor/io.hpp"
#include "raptor/sampler.hpp"
#include "raptor/student.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <variant>
#include <vector>

namespace raptor {

inline constexpr int kTelemetrySchemaVersion = 1;

// ------------------------------------------------------------------ commands

namespace cmd {
struct Activate {};
struct Deactivate {};
struct ResetHidden {};
struct SetTarget {
  Vec3 position = Vec3::Zero();
};
struct Poke {
  Vec3 delta_v = Vec3::Zero();
};
struct AddPayload {
  double delta_mass = 0.0;
};
struct SwapProp {
  int motor = 0;
  double scale = 1.0;
};
struct SelectQuadrotor {
  std::optional<std::size_t> fleet_index;
  std::optional<QuadParams> params;
};
struct SetReference {
  bool figure_eight = false;
  double period = 10.0;
};
}  // namespace cmd

using SessionCommand = std::variant<cmd::Activate, cmd::Deactivate, cmd::ResetHidden, cmd::SetTarget, cmd::Poke,
                                    cmd::AddPayload, cmd::SwapProp, cmd::SelectQuadrotor, cmd::SetReference>;

class CommandError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
inline Vec3 finite_vec3(const Json& j, const char* key) {
  if (!j.contains(key)) throw CommandError(std::string("missing field '") + key + "'");
  Vec3 v;
  try {
    v = vec3_from(j.at(key));
  } catch (const std::exception&) {
    throw CommandError(std::string("field '") + key + "' must be a numeric 3-vector");
  }
  if (!v.allFinite()) throw CommandError(std::string("field '") + key + "' must be finite");
  return v;
}

inline double finite_number(const Json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_number()) throw CommandError(std::string("field '") + key + "' must be a number");
  const double v = j.at(key).get<double>();
  if (!std::isfinite(v)) throw CommandError(std::string("field '") + key + "' must be finite");
  return v;
}
}  // namespace detail

/// Parses the "command" object of a command message. Shape checks only;
/// state-dependent validation happens when the command is applied.
inline SessionCommand parse_command(const Json& j) {
  if (!j.is_object() || !j.contains("kind") || !j.at("kind").is_string()) throw CommandError("command needs a string 'kind'");
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "activate") return cmd::Activate{};
  if (kind == "deactivate") return cmd::Deactivate{};
  if (kind == "reset_hidden") return cmd::ResetHidden{};
  if (kind == "set_target") return cmd::SetTarget{detail::finite_vec3(j, "position")};
  if (kind == "poke") return cmd::Poke{detail::finite_vec3(j, "delta_v")};
  if (kind == "payload") return cmd::AddPayload{detail::finite_number(j, "delta_mass")};
  if (kind == "prop_swap") {
    if (!j.contains("motor") || !j.at("motor").is_number_integer()) throw CommandError("field 'motor' must be an integer");
    return cmd::SwapProp{j.at("motor").get<int>(), detail::finite_number(j, "scale")};
  }
  if (kind == "select_quadrotor") {
    cmd::SelectQuadrotor c;
    if (j.contains("fleet_index")) {
      const Json& fi = j.at("fleet_index");
      if (!fi.is_number_integer() || fi.get<std::int64_t>() < 0) throw CommandError("field 'fleet_index' must be a non-negative integer");
      c.fleet_index = j.at("fleet_index").get<std::size_t>();
    } else if (j.contains("params")) {
      try {
        c.params = params_from_json(j.at("params"));
      } catch (const std::exception& e) {
        throw CommandError(std::string("invalid params: ") + e.what());
      }
    } else {
      throw CommandError("select_quadrotor needs 'fleet_index' or 'params'");
    }
    return c;
  }
  if (kind == "set_reference") {
    if (!j.contains("reference") || !j.at("reference").is_string()) throw CommandError("field 'reference' must be a string");
    const std::string ref = j.at("reference").get<std::string>();
    if (ref == "null") return cmd::SetReference{false, 0.0};
    if (ref == "fig8") {
      const double period = j.contains("period") ? detail::finite_number(j, "period") : 10.0;
      if (period <= 0.0) throw CommandError("period must be positive");
      return cmd::SetReference{true, period};
    }
    throw CommandError("unknown reference '" + ref + "'");
  }
  throw CommandError("unknown command kind '" + kind + "'");
}

/// Rounds to 9 significant digits so the shortest-repr JSON output stays short.
inline double telemetry_round(double v) {
  if (!std::isfinite(v)) return v;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return std::strtod(buf, nullptr);
}

// ------------------------------------------------------------------ session

struct SessionOptions {
  std::uint64_t seed = 0;
  EnvConfig env_cfg{};
  std::size_t initial_index = 0;
};

/// Simulation state of one live session. Not thread-safe: owned by the
/// simulation loop.
class SimSession {
 public:
  SimSession(StudentPolicy policy, std::vector<SampledQuad> fleet, SessionOptions opts = {},
             std::optional<ProbeFit> probe = std::nullopt)
      : policy_(std::move(policy)), fleet_(std::move(fleet)), opts_(opts), probe_(std::move(probe)),
        env_(QuadParams{}, no_limits(opts.env_cfg)), runner_(policy_), rng_(opts.seed) {
    if (fleet_.empty()) throw std::invalid_argument("session needs at least one quadrotor");
    if (opts_.initial_index >= fleet_.size()) throw std::invalid_argument("initial quadrotor index out of range");
    select(fleet_[opts_.initial_index].params, opts_.initial_index);
  }

  SimSession(const SimSession&) = delete;
  SimSession& operator=(const SimSession&) = delete;

  /// Validates `c` against the current state and applies it. Throws
  /// CommandError without touching the state if it is not applicable.
  void apply(const SessionCommand& c) {
    std::visit([this](const auto& x) { apply_one(x); }, c);
  }

  /// One control step. Returns the telemetry frame describing the new state.
  Json advance() {
    const Observation obs = env_.observation();
    Motor4 a{};
    if (active_) {
      a = runner_.act(obs);
    } else {
      a.fill(hover_command(env_.plant(), opts_.env_cfg.sim.gravity));
    }
    last_action_ = a;
    try {
      env_.step(MotorCommand(a), rng_);
    } catch (const SimulationDiverged&) {
      ++divergences_;
      env_.reset_to(target_state(env_.params()), ReferenceTrajectory::null());
      runner_.reset();
    }
    ++step_;
    return frame();
  }

  Json frame() const {
    const QuadState& s = env_.state();
    const ReferenceState& r = env_.reference();
    auto v3 = [](const Vec3& v) {
      return Json::array({telemetry_round(v.x()), telemetry_round(v.y()), telemetry_round(v.z())});
    };
    auto m4 = [](const Motor4& m) {
      Json a = Json::array();
      for (double x : m) a.push_back(telemetry_round(x));
      return a;
    };
    Json hidden = Json::array();
    const auto h = runner_.hidden_vector();
    for (double x : h) hidden.push_back(telemetry_round(x));
    Json probe = nullptr;
    if (probe_ && static_cast<std::size_t>(probe_->weights.size()) == h.size()) {
      double est = probe_->intercept;
      for (std::size_t i = 0; i < h.size(); ++i) est += probe_->weights(static_cast<Eigen::Index>(i)) * h[i];
      probe = telemetry_round(est);
    }
    const double dt = opts_.env_cfg.sim.dt;
    return Json{{"type", "frame"},
                {"schema_version", kTelemetrySchemaVersion},
                {"step", step_},
                {"t", telemetry_round(static_cast<double>(step_) * dt)},
                {"state",
                 {{"position", v3(s.position)},
                  {"orientation",
                   Json::array({telemetry_round(s.orientation.w()), telemetry_round(s.orientation.x()),
                                telemetry_round(s.orientation.y()), telemetry_round(s.orientation.z())})},
                  {"linear_velocity", v3(s.linear_velocity)},
                  {"angular_velocity", v3(s.angular_velocity)},
                  {"motor_speeds", m4(s.motor_speeds)}}},
                {"reference", {{"position", v3(r.position)}, {"velocity", v3(r.velocity)}}},
                {"action", m4(last_action_)},
                {"hidden", hidden},
                {"probe_t2w", probe},
                {"true_t2w", true_t2w_ ? Json(telemetry_round(*true_t2w_)) : Json(nullptr)},
                {"status",
                 {{"active", active_},
                  {"out_of_bounds",
                   terminal(s, r, env_.params(), opts_.env_cfg.termination)},
                  {"quad_index", quad_index_ ? Json(*quad_index_) : Json(nullptr)},
                  {"divergences", divergences_}}}};
  }

  Json session_info() const {
    return Json{{"dt", opts_.env_cfg.sim.dt},
                {"hidden_size", policy_.hidden()},
                {"fleet_size", fleet_.size()},
                {"params", to_json(env_.params())},
                {"probe", probe_.has_value()}};
  }

  const Environment& env() const { return env_; }
  const PolicyRunner<float>& runner() const { return runner_; }
  bool active() const { return active_; }
  long step_count() const { return step_; }
  double dt() const { return opts_.env_cfg.sim.dt; }

 private:
  static EnvConfig no_limits(EnvConfig cfg) {
    cfg.termination = TerminationConfig{1e9, 1e9, 1e9};
    cfg.horizon = std::numeric_limits<int>::max();
    return cfg;
  }

  void select(const QuadParams& p, std::optional<std::size_t> index) {
    env_ = Environment(p, no_limits(opts_.env_cfg));
    env_.reset_to(target_state(p), ReferenceTrajectory::null());
    runner_.reset();
    quad_index_ = index;
    true_t2w_.reset();
    if (index) true_t2w_ = fleet_[*index].trace.t2w;
    last_action_.fill(hover_command(p, opts_.env_cfg.sim.gravity));
  }

  void hold_position_here() {
    auto ref = ReferenceTrajectory::null();
    ref.shift(env_.state().position);
    env_.reference_trajectory() = ref;
  }

  void apply_one(const cmd::Activate&) {
    runner_.reset();
    hold_position_here();
    active_ = true;
  }
  void apply_one(const cmd::Deactivate&) { active_ = false; }
  void apply_one(const cmd::ResetHidden&) { runner_.reset(); }
  void apply_one(const cmd::SetTarget& c) {
    auto ref = ReferenceTrajectory::null();
    ref.shift(c.position);
    env_.reference_trajectory() = ref;
  }
  void apply_one(const cmd::Poke& c) {
    if (c.delta_v.norm() > 10.0) throw CommandError("poke larger than 10 m/s");
    inject_disturbance(env_, Impulse{c.delta_v});
  }
  void apply_one(const cmd::AddPayload& c) {
    if (env_.plant().mass + c.delta_mass <= 0.0) throw CommandError("payload would make the mass non-positive");
    inject_disturbance(env_, Payload{c.delta_mass});
  }
  void apply_one(const cmd::SwapProp& c) {
    if (c.motor < 0 || c.motor > 3) throw CommandError("motor index must be 0..3");
    if (c.scale < 0.0 || c.scale > 2.0) throw CommandError("thrust scale must be within [0, 2]");
    inject_disturbance(env_, PropSwap{c.motor, c.scale});
  }
  void apply_one(const cmd::SelectQuadrotor& c) {
    if (c.fleet_index) {
      if (*c.fleet_index >= fleet_.size()) throw CommandError("fleet index out of range");
      select(fleet_[*c.fleet_index].params, c.fleet_index);
    } else {
      select(*c.params, std::nullopt);
    }
  }
  void apply_one(const cmd::SetReference& c) {
    const Vec3 here = env_.reference().position;
    if (c.figure_eight) {
      Fig8Config f;
      f.period = c.period;
      // Center so the curve starts at the current target.
      const Vec3 start = lissajous_figure_eight(f, 0.0).position;
      env_.reference_trajectory() = ReferenceTrajectory::figure_eight(f, here - start);
    } else {
      auto ref = ReferenceTrajectory::null();
      ref.shift(here);
      env_.reference_trajectory() = ref;
    }
  }

  StudentPolicy policy_;
  std::vector<SampledQuad> fleet_;
  SessionOptions opts_;
  std::optional<ProbeFit> probe_;
  Environment env_;
  PolicyRunner<float> runner_;
  Rng rng_;
  bool active_ = true;
  long step_ = 0;
  long divergences_ = 0;
  Motor4 last_action_{};
  std::optional<std::size_t> quad_index_;
  std::optional<double> true_t2w_;
};

// ------------------------------------------------------------------- server

struct ServerOptions {
  std::string address = "127.0.0.1";
  unsigned short port = 8765;  // 0 picks a free port
  double speed = 1.0;          // simulated seconds per wall-clock second; <= 0 runs unpaced
  int frame_decimation = 1;    // send every n-th step
  bool run_without_clients = false;
};

/// Websocket front end for a SimSession.
class TelemetryServer {
  using tcp = boost::asio::ip::tcp;

 public:
  TelemetryServer(SimSession& session, ServerOptions opts)
      : session_(session), opts_(opts), acceptor_(ioc_) {
    if (opts_.frame_decimation < 1) throw std::invalid_argument("frame decimation must be >= 1");
    tcp::endpoint ep(boost::asio::ip::make_address(opts_.address), opts_.port);
    acceptor_.open(ep.protocol());
    acceptor_.set_option(boost::asio::socket_base::reuse_address(true));
    acceptor_.bind(ep);
    acceptor_.listen();
  }

  ~TelemetryServer() { stop(); }

  unsigned short port() const { return acceptor_.local_endpoint().port(); }

  /// Starts the network and simulation threads.
  void start() {
    do_accept();
    net_thread_ = std::thread([this] { ioc_.run(); });
    sim_thread_ = std::thread([this] { sim_loop(); });
  }

  void stop() {
    if (stopping_.exchange(true)) return;
    if (sim_thread_.joinable()) sim_thread_.join();
    boost::asio::post(ioc_, [this] {
      boost::system::error_code ec;
      acceptor_.close(ec);
      for (auto& c : clients_) c->close();
    });
    work_.reset();
    ioc_.stop();
    if (net_thread_.joinable()) net_thread_.join();
  }

  /// Blocks until stop() is called from another thread or a signal handler.
  void wait() {
    while (!stopping_) std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }

  long frames_sent() const { return frames_sent_; }

 private:
  class Client;

  struct Pending {
    std::weak_ptr<Client> client;
    Json id;
    SessionCommand command;
  };

  // One websocket connection; all members touched on the network thread only.
  class Client : public std::enable_shared_from_this<Client> {
   public:
    Client(tcp::socket socket, TelemetryServer& server) : ws_(std::move(socket)), server_(server) {}

    void start() {
      ws_.text(true);
      ws_.async_accept([self = shared_from_this()](boost::beast::error_code ec) {
        if (ec) return;
        self->read();
      });
    }

    void send(std::shared_ptr<const std::string> msg) {
      if (closed_) return;
      queue_.push_back(std::move(msg));
      if (queue_.size() == 1) write_next();
    }

    void close() {
      if (closed_) return;
      closed_ = true;
      boost::beast::error_code ec;
      ws_.next_layer().shutdown(tcp::socket::shutdown_both, ec);
      ws_.next_layer().close(ec);
    }

    bool welcomed() const { return welcomed_; }

   private:
    void read() {
      ws_.async_read(buffer_, [self = shared_from_this()](boost::beast::error_code ec, std::size_t) {
        if (ec) {
          self->server_.drop(self);
          return;
        }
        const std::string text = boost::beast::buffers_to_string(self->buffer_.data());
        self->buffer_.consume(self->buffer_.size());
        std::size_t start = 0;
        while (start < text.size()) {
          const auto end = text.find('\n', start);
          const std::string line = text.substr(start, end == std::string::npos ? std::string::npos : end - start);
          if (!line.empty()) self->handle(line);
          if (end == std::string::npos) break;
          start = end + 1;
        }
        if (!self->closed_) self->read();
      });
    }

    void handle(const std::string& line) {
      Json msg;
      try {
        msg = Json::parse(line);
      } catch (const Json::parse_error& e) {
        reply(Json{{"type", "error"}, {"code", "malformed"}, {"message", e.what()}});
        return;
      }
      const std::string type = msg.is_object() && msg.contains("type") && msg["type"].is_string() ? msg["type"].get<std::string>() : "";
      if (!welcomed_) {
        if (type != "hello") {
          reply(Json{{"type", "error"}, {"code", "handshake_required"}, {"message", "send hello first"}});
          return;
        }
        const Json v = msg.value("schema_version", Json());
        if (!v.is_number_integer() || v.get<int>() != kTelemetrySchemaVersion) {
          reply(Json{{"type", "error"},
                     {"code", "schema_mismatch"},
                     {"message", "server speaks schema version " + std::to_string(kTelemetrySchemaVersion)},
                     {"schema_version", kTelemetrySchemaVersion}});
          closing_after_flush_ = true;
          return;
        }
        welcomed_ = true;
        server_.welcome(shared_from_this());
        return;
      }
      if (type != "command") {
        reply(Json{{"type", "error"}, {"code", "malformed"}, {"message", "expected a command message"}});
        return;
      }
      const Json id = msg.value("id", Json());
      try {
        server_.enqueue({weak_from_this(), id, parse_command(msg.value("command", Json()))});
      } catch (const CommandError& e) {
        reply(Json{{"type", "error"}, {"code", "invalid_command"}, {"id", id}, {"message", e.what()}});
      }
    }

    void reply(const Json& j) { send(std::make_shared<const std::string>(j.dump() + "\n")); }

    void write_next() {
      ws_.async_write(boost::asio::buffer(*queue_.front()),
                      [self = shared_from_this()](boost::beast::error_code ec, std::size_t) {
                        if (ec) {
                          self->server_.drop(self);
                          return;
                        }
                        self->queue_.pop_front();
                        if (!self->queue_.empty()) {
                          self->write_next();
                        } else if (self->closing_after_flush_) {
                          self->ws_.async_close(boost::beast::websocket::close_code::policy_error,
                                                [self](boost::beast::error_code) { self->server_.drop(self); });
                        }
                      });
    }

    boost::beast::websocket::stream<tcp::socket> ws_;
    boost::beast::flat_buffer buffer_;
    TelemetryServer& server_;
    std::deque<std::shared_ptr<const std::string>> queue_;
    bool welcomed_ = false;
    bool closed_ = false;
    bool closing_after_flush_ = false;
  };

  void do_accept() {
    acceptor_.async_accept([this](boost::beast::error_code ec, tcp::socket socket) {
      if (ec) return;
      auto c = std::make_shared<Client>(std::move(socket), *this);
      clients_.insert(c);
      c->start();
      do_accept();
    });
  }

  // Network thread.
  void welcome(const std::shared_ptr<Client>& c) {
    Json info;
    {
      std::lock_guard lock(info_mutex_);
      info = session_info_;
    }
    c->send(std::make_shared<const std::string>(
        Json{{"type", "welcome"}, {"schema_version", kTelemetrySchemaVersion}, {"session", info}}.dump() + "\n"));
    ++welcomed_count_;
  }

  // Network thread.
  void drop(const std::shared_ptr<Client>& c) {
    if (clients_.erase(c) && c->welcomed()) --welcomed_count_;
    c->close();
  }

  // Network thread.
  void enqueue(Pending p) {
    std::lock_guard lock(queue_mutex_);
    commands_.push_back(std::move(p));
  }

  void broadcast(std::shared_ptr<const std::string> text) {
    boost::asio::post(ioc_, [this, text] {
      for (auto& c : clients_)
        if (c->welcomed()) c->send(text);
    });
  }

  void send_to(std::weak_ptr<Client> who, Json msg) {
    auto text = std::make_shared<const std::string>(msg.dump() + "\n");
    boost::asio::post(ioc_, [this, who, text] {
      if (auto c = who.lock(); c && clients_.count(c)) c->send(text);
    });
  }

  // Simulation thread.
  void sim_loop() {
    using clock = std::chrono::steady_clock;
    {
      std::lock_guard lock(info_mutex_);
      session_info_ = session_.session_info();
    }
    auto origin = clock::now();
    long paced_steps = 0;
    while (!stopping_) {
      if (!opts_.run_without_clients && welcomed_count_ == 0) {
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
        origin = clock::now();
        paced_steps = 0;
        continue;
      }
      std::deque<Pending> batch;
      {
        std::lock_guard lock(queue_mutex_);
        batch.swap(commands_);
      }
      for (auto& p : batch) {
        try {
          session_.apply(p.command);
          send_to(p.client, Json{{"type", "ack"}, {"id", p.id}, {"step", session_.step_count()}});
        } catch (const std::exception& e) {
          send_to(p.client, Json{{"type", "error"}, {"code", "rejected"}, {"id", p.id}, {"message", e.what()}});
        }
      }
      if (!batch.empty()) {
        std::lock_guard lock(info_mutex_);
        session_info_ = session_.session_info();
      }
      const Json frame = session_.advance();
      if (session_.step_count() % opts_.frame_decimation == 0) {
        broadcast(std::make_shared<const std::string>(frame.dump() + "\n"));
        ++frames_sent_;
      }
      if (opts_.speed > 0.0) {
        ++paced_steps;
        const auto due = origin + std::chrono::duration_cast<clock::duration>(
                                      std::chrono::duration<double>(paced_steps * session_.dt() / opts_.speed));
        const auto now = clock::now();
        if (due > now) {
          std::this_thread::sleep_until(due);
        } else if (now - due > std::chrono::milliseconds(250)) {
          // Too far behind to catch up smoothly: rebase instead of bursting.
          origin = now;
          paced_steps = 0;
        }
      }
    }
  }

  SimSession& session_;
  ServerOptions opts_;
  boost::asio::io_context ioc_;
  std::optional<boost::asio::executor_work_guard<boost::asio::io_context::executor_type>> work_{ioc_.get_executor()};
  tcp::acceptor acceptor_;
  std::set<std::shared_ptr<Client>> clients_;
  std::mutex queue_mutex_;
  std::deque<Pending> commands_;
  std::mutex info_mutex_;
  Json session_info_;
  std::atomic<int> welcomed_count_{0};
  std::atomic<bool> stopping_{false};
  std::atomic<long> frames_sent_{0};
  std::thread net_thread_;
  std::thread sim_thread_;
};

}  // namespace raptor
