// SPDX-License-Identifier: Apache-2.0
#include "fixtures.hpp"
#include "raptor/evaluation.hpp"
#include "raptor/serve.hpp"

#include <gtest/gtest.h>

#include <boost/asio/connect.hpp>

#include <chrono>

using namespace raptor;
namespace ws = boost::beast::websocket;
using tcp = boost::asio::ip::tcp;

namespace {

StudentPolicy random_student(std::uint64_t seed, int hidden = 8) {
  StudentPolicy p(hidden);
  Rng rng(seed);
  p.init(rng);
  return p;
}

// Blocking websocket client with per-read timeouts.
class Client {
 public:
  explicit Client(unsigned short port) : ws_(ioc_) {
    tcp::resolver resolver(ioc_);
    boost::asio::connect(ws_.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
    ws_.handshake("127.0.0.1", "/");
    ws_.text(true);
  }

  void send(const Json& j) { send_raw(j.dump() + "\n"); }
  void send_raw(const std::string& s) { ws_.write(boost::asio::buffer(s)); }

  /// Next message, or nullopt on timeout or close.
  std::optional<Json> read(std::chrono::milliseconds timeout = std::chrono::milliseconds(3000)) {
    boost::beast::flat_buffer buf;
    bool done = false;
    boost::beast::error_code err;
    ws_.async_read(buf, [&](boost::beast::error_code ec, std::size_t) {
      done = true;
      err = ec;
    });
    ioc_.restart();
    ioc_.run_for(timeout);
    if (!done) {
      boost::beast::get_lowest_layer(ws_).cancel();
      ioc_.restart();
      ioc_.run();
      return std::nullopt;
    }
    if (err) {
      last_error_ = err;
      return std::nullopt;
    }
    const std::string text = boost::beast::buffers_to_string(buf.data());
    EXPECT_FALSE(text.empty());
    EXPECT_EQ(text.back(), '\n');
    return Json::parse(text);
  }

  /// Skips frames until a message of `type` arrives.
  std::optional<Json> read_type(const std::string& type) {
    for (int i = 0; i < 2000; ++i) {
      auto m = read();
      if (!m) return std::nullopt;
      if ((*m)["type"] == type) return m;
    }
    return std::nullopt;
  }

  Json hello() {
    send({{"type", "hello"}, {"schema_version", kTelemetrySchemaVersion}});
    auto m = read_type("welcome");
    EXPECT_TRUE(m.has_value());
    return m.value_or(Json());
  }

  boost::beast::error_code last_error() const { return last_error_; }

 private:
  boost::asio::io_context ioc_;
  ws::stream<tcp::socket> ws_;
  boost::beast::error_code last_error_;
};

struct ServerFixture : ::testing::Test {
  void start(ServerOptions opts) {
    opts.port = 0;
    session = std::make_unique<SimSession>(random_student(3), sample_fleet(3, 9), SessionOptions{.seed = 5});
    server = std::make_unique<TelemetryServer>(*session, opts);
    server->start();
  }
  void TearDown() override {
    if (server) server->stop();
  }
  std::unique_ptr<SimSession> session;
  std::unique_ptr<TelemetryServer> server;
};

}  // namespace

// ------------------------------------------------------------------ commands

TEST(ParseCommand, AcceptsEveryKind) {
  EXPECT_TRUE(std::holds_alternative<cmd::Activate>(parse_command({{"kind", "activate"}})));
  EXPECT_TRUE(std::holds_alternative<cmd::Deactivate>(parse_command({{"kind", "deactivate"}})));
  EXPECT_TRUE(std::holds_alternative<cmd::ResetHidden>(parse_command({{"kind", "reset_hidden"}})));
  const auto t = std::get<cmd::SetTarget>(parse_command({{"kind", "set_target"}, {"position", {1, 2, 3}}}));
  EXPECT_EQ(t.position, Vec3(1, 2, 3));
  const auto p = std::get<cmd::Poke>(parse_command({{"kind", "poke"}, {"delta_v", {0, 0.5, 0}}}));
  EXPECT_EQ(p.delta_v, Vec3(0, 0.5, 0));
  EXPECT_EQ(std::get<cmd::AddPayload>(parse_command({{"kind", "payload"}, {"delta_mass", 0.1}})).delta_mass, 0.1);
  const auto s = std::get<cmd::SwapProp>(parse_command({{"kind", "prop_swap"}, {"motor", 2}, {"scale", 0.8}}));
  EXPECT_EQ(s.motor, 2);
  EXPECT_EQ(s.scale, 0.8);
  EXPECT_EQ(*std::get<cmd::SelectQuadrotor>(parse_command({{"kind", "select_quadrotor"}, {"fleet_index", 1}})).fleet_index, 1u);
  const auto params = sample_quadrotor(4).params;
  EXPECT_TRUE(*std::get<cmd::SelectQuadrotor>(parse_command({{"kind", "select_quadrotor"}, {"params", to_json(params)}})).params ==
              params);
  const auto r = std::get<cmd::SetReference>(parse_command({{"kind", "set_reference"}, {"reference", "fig8"}, {"period", 6}}));
  EXPECT_TRUE(r.figure_eight);
  EXPECT_EQ(r.period, 6.0);
  EXPECT_FALSE(std::get<cmd::SetReference>(parse_command({{"kind", "set_reference"}, {"reference", "null"}})).figure_eight);
}

TEST(ParseCommand, RejectsMalformed) {
  for (const char* text : {R"([])", R"({})", R"({"kind": 3})", R"({"kind": "fly"})",
                           R"({"kind": "set_target"})", R"({"kind": "set_target", "position": [1, 2]})",
                           R"({"kind": "set_target", "position": [1, "a", 2]})", R"({"kind": "poke", "delta_v": 1})",
                           R"({"kind": "payload"})", R"({"kind": "prop_swap", "motor": 1.5, "scale": 1})",
                           R"({"kind": "prop_swap", "motor": 1})", R"({"kind": "select_quadrotor"})",
                           R"({"kind": "select_quadrotor", "fleet_index": -1})",
                           R"({"kind": "select_quadrotor", "params": {"mass": 1}})",
                           R"({"kind": "set_reference", "reference": "circle"})",
                           R"({"kind": "set_reference", "reference": "fig8", "period": -1})"})
    EXPECT_THROW(parse_command(Json::parse(text)), CommandError) << text;
}

// ------------------------------------------------------------------- session

TEST(SimSession, MatchesOfflineRolloutBitForBit) {
  const auto fleet = sample_fleet(2, 4);
  const StudentPolicy policy = random_student(1);
  SimSession session(policy, fleet, SessionOptions{.seed = 77, .initial_index = 1});

  EnvConfig cfg;
  cfg.termination = TerminationConfig{1e9, 1e9, 1e9};
  cfg.horizon = 1 << 30;
  Environment env(fleet[1].params, cfg);
  env.reset_to(target_state(fleet[1].params), ReferenceTrajectory::null());
  PolicyRunner<float> runner(policy);
  Rng rng(77);
  const auto rec = fly_student(env, runner, 300, rng, false);
  ASSERT_EQ(rec.size(), 300u);

  for (std::size_t t = 0; t < rec.size(); ++t) {
    const Json frame = session.advance();
    ASSERT_EQ(session.env().state().position, rec.positions[t]) << t;
    ASSERT_EQ(session.env().state().linear_velocity, rec.velocities[t]) << t;
    ASSERT_EQ(session.runner().hidden_vector(), rec.hidden_states[t]) << t;
    ASSERT_EQ(frame["step"], static_cast<long>(t + 1));
  }
}

TEST(SimSession, FrameCarriesSchemaAndTruth) {
  SimSession session(random_student(2), sample_fleet(2, 4));
  const Json f = session.advance();
  EXPECT_EQ(f["type"], "frame");
  EXPECT_EQ(f["schema_version"], kTelemetrySchemaVersion);
  EXPECT_EQ(f["state"]["orientation"].size(), 4u);
  EXPECT_EQ(f["hidden"].size(), 8u);
  EXPECT_TRUE(f["probe_t2w"].is_null());
  EXPECT_DOUBLE_EQ(f["true_t2w"].get<double>(), telemetry_round(sample_fleet(2, 4)[0].trace.t2w));
  EXPECT_EQ(f["status"]["quad_index"], 0);
}

TEST(SimSession, ProbeEstimateUsesHiddenState) {
  ProbeFit fit;
  fit.weights = Eigen::VectorXd::Zero(8);
  fit.weights[0] = 2.0;
  fit.intercept = 1.5;
  SimSession session(random_student(2), sample_fleet(1, 4), {}, fit);
  const Json f = session.advance();
  EXPECT_NEAR(f["probe_t2w"].get<double>(), 1.5 + 2.0 * session.runner().hidden_vector()[0], 1e-6);
}

TEST(SimSession, InactiveSessionHoldsHoverCommand) {
  const auto fleet = sample_fleet(1, 4);
  SimSession session(random_student(2), fleet);
  session.apply(cmd::Deactivate{});
  const Json f = session.advance();
  const double uh = hover_command(fleet[0].params);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(f["action"][i].get<double>(), uh, 1e-8);
  EXPECT_FALSE(f["status"]["active"].get<bool>());
}

TEST(SimSession, CommandsChangeStateOrAreRejected) {
  const auto fleet = sample_fleet(3, 4);
  SimSession session(random_student(2), fleet);
  session.apply(cmd::Poke{Vec3(0, 1, 0)});
  EXPECT_EQ(session.env().state().linear_velocity, Vec3(0, 1, 0));
  EXPECT_THROW(session.apply(cmd::Poke{Vec3(0, 11, 0)}), CommandError);
  EXPECT_EQ(session.env().state().linear_velocity, Vec3(0, 1, 0));

  session.apply(cmd::AddPayload{0.1});
  EXPECT_DOUBLE_EQ(session.env().plant().mass, fleet[0].params.mass + 0.1);
  EXPECT_THROW(session.apply(cmd::AddPayload{-100.0}), CommandError);

  session.apply(cmd::SwapProp{3, 0.7});
  EXPECT_EQ(session.env().perturbation().thrust_scale[3], 0.7);
  EXPECT_THROW(session.apply(cmd::SwapProp{4, 1.0}), CommandError);
  EXPECT_THROW(session.apply(cmd::SwapProp{0, 2.5}), CommandError);

  session.apply(cmd::SetTarget{Vec3(1, 2, 3)});
  EXPECT_EQ(session.env().reference().position, Vec3(1, 2, 3));
  session.apply(cmd::SetReference{true, 8.0});
  EXPECT_NEAR((session.env().reference().position - Vec3(1, 2, 3)).norm(), 0.0, 1e-12);

  session.apply(cmd::SelectQuadrotor{2, std::nullopt});
  EXPECT_TRUE(session.env().params() == fleet[2].params);
  EXPECT_EQ(session.env().perturbation().added_mass, 0.0);
  EXPECT_THROW(session.apply(cmd::SelectQuadrotor{3, std::nullopt}), CommandError);

  const auto custom = sample_quadrotor(99).params;
  session.apply(cmd::SelectQuadrotor{std::nullopt, custom});
  EXPECT_TRUE(session.env().params() == custom);
  EXPECT_TRUE(session.frame()["status"]["quad_index"].is_null());
}

TEST(SimSession, ActivateHoldsCurrentPosition) {
  SimSession session(random_student(2), sample_fleet(1, 4));
  session.apply(cmd::Deactivate{});
  session.apply(cmd::Poke{Vec3(1, 0, 0)});
  for (int i = 0; i < 20; ++i) session.advance();
  session.apply(cmd::Activate{});
  EXPECT_EQ(session.env().reference().position, session.env().state().position);
  EXPECT_TRUE(session.active());
}

// ------------------------------------------------------------------ websocket

TEST_F(ServerFixture, HandshakeThenFramesAtRealTimeRate) {
  start({.speed = 1.0});
  Client c(server->port());
  const Json welcome = c.hello();
  EXPECT_EQ(welcome["schema_version"], kTelemetrySchemaVersion);
  EXPECT_EQ(welcome["session"]["hidden_size"], 8);
  EXPECT_EQ(welcome["session"]["fleet_size"], 3);

  auto first = c.read_type("frame");
  ASSERT_TRUE(first);
  const auto t0 = std::chrono::steady_clock::now();
  int frames = 0;
  long last_step = (*first)["step"];
  while (std::chrono::steady_clock::now() - t0 < std::chrono::seconds(1)) {
    auto m = c.read();
    ASSERT_TRUE(m);
    if ((*m)["type"] != "frame") continue;
    EXPECT_GT((*m)["step"].get<long>(), last_step);
    last_step = (*m)["step"];
    ++frames;
  }
  EXPECT_GE(frames, 50);
}

TEST_F(ServerFixture, SchemaMismatchIsReportedAndClosed) {
  start({.speed = 1.0});
  Client c(server->port());
  c.send({{"type", "hello"}, {"schema_version", kTelemetrySchemaVersion + 1}});
  auto m = c.read();
  ASSERT_TRUE(m);
  EXPECT_EQ((*m)["type"], "error");
  EXPECT_EQ((*m)["code"], "schema_mismatch");
  EXPECT_EQ((*m)["schema_version"], kTelemetrySchemaVersion);
  EXPECT_FALSE(c.read());
  EXPECT_TRUE(c.last_error());
}

TEST_F(ServerFixture, CommandsBeforeHelloAreRefused) {
  start({.speed = 1.0});
  Client c(server->port());
  c.send({{"type", "command"}, {"id", 1}, {"command", {{"kind", "activate"}}}});
  auto m = c.read();
  ASSERT_TRUE(m);
  EXPECT_EQ((*m)["code"], "handshake_required");
  c.send_raw("not json\n");
  m = c.read();
  ASSERT_TRUE(m);
  EXPECT_EQ((*m)["code"], "malformed");
  c.hello();  // still possible afterwards
}

TEST_F(ServerFixture, CommandsAreAcknowledgedById) {
  start({.speed = 2.0, .frame_decimation = 5});
  Client c(server->port());
  c.hello();
  c.send({{"type", "command"}, {"id", "poke-1"}, {"command", {{"kind", "poke"}, {"delta_v", {0, 0, 0.5}}}}});
  auto ack = c.read_type("ack");
  ASSERT_TRUE(ack);
  EXPECT_EQ((*ack)["id"], "poke-1");
  EXPECT_TRUE((*ack)["step"].is_number_integer());

  // Two commands in one message, the second not applicable.
  c.send_raw(Json{{"type", "command"}, {"id", 2}, {"command", {{"kind", "reset_hidden"}}}}.dump() + "\n" +
             Json{{"type", "command"}, {"id", 3}, {"command", {{"kind", "select_quadrotor"}, {"fleet_index", 9}}}}.dump() + "\n");
  ack = c.read_type("ack");
  ASSERT_TRUE(ack);
  EXPECT_EQ((*ack)["id"], 2);
  auto err = c.read_type("error");
  ASSERT_TRUE(err);
  EXPECT_EQ((*err)["code"], "rejected");
  EXPECT_EQ((*err)["id"], 3);

  c.send({{"type", "command"}, {"id", 4}, {"command", {{"kind", "warp"}}}});
  err = c.read_type("error");
  ASSERT_TRUE(err);
  EXPECT_EQ((*err)["code"], "invalid_command");
  EXPECT_EQ((*err)["id"], 4);

  auto frame = c.read_type("frame");
  ASSERT_TRUE(frame);
  EXPECT_EQ((*frame)["step"].get<long>() % 5, 0);
}

TEST_F(ServerFixture, ClientsShareOneStream) {
  start({.speed = 1.0, .run_without_clients = true});
  Client a(server->port()), b(server->port());
  a.hello();
  b.hello();
  std::map<long, std::string> seen_a, seen_b;
  for (int i = 0; i < 40; ++i) {
    if (auto m = a.read_type("frame")) seen_a[(*m)["step"]] = m->dump();
    if (auto m = b.read_type("frame")) seen_b[(*m)["step"]] = m->dump();
  }
  int common = 0;
  for (const auto& [step, text] : seen_a)
    if (auto it = seen_b.find(step); it != seen_b.end()) {
      EXPECT_EQ(it->second, text);
      ++common;
    }
  EXPECT_GE(common, 20);
}

TEST_F(ServerFixture, SimulationWaitsForClientsUnlessAskedNotTo) {
  start({.speed = 0.0});
  std::this_thread::sleep_for(std::chrono::milliseconds(200));
  EXPECT_EQ(server->frames_sent(), 0);
}
