// SPDX-License-Identifier: Apache-2.0
//
// File formats: JSON schemas for parameters/states/fleets, the teacher
// checkpoint binary + sidecar, episode records (CSV and binary) and small CSV
// helpers. Binary formats are little-endian.
#pragma once

#include "raptor/analysis.hpp"
#include "raptor/dynamics.hpp"
#include "raptor/env.hpp"
#include "raptor/sac.hpp"
#include "raptor/sampler.hpp"
#include "raptor/student.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace raptor {

using Json = nlohmann::json;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline Json vec3_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

inline Vec3 vec3_from(const Json& j) {
  if (!j.is_array() || j.size() != 3) throw FormatError("expected a 3-vector");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

inline Motor4 motor4_from(const Json& j) {
  if (!j.is_array() || j.size() != 4) throw FormatError("expected a 4-vector");
  return Motor4{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

/// Throws if `j` has keys outside `allowed`.
inline void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw FormatError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw FormatError(where + ": unknown key '" + it.key() + "'");
  }
}

}  // namespace detail

// QuadParams: {mass, arm_length, thrust_coeffs[3], moment_coeff, inertia[3],
//              motor_tau_up, motor_tau_down}, SI units.
inline Json to_json(const QuadParams& p) {
  return Json{{"mass", p.mass},
              {"arm_length", p.arm_length},
              {"thrust_coeffs", Json::array({p.thrust_coeffs[0], p.thrust_coeffs[1], p.thrust_coeffs[2]})},
              {"moment_coeff", p.moment_coeff},
              {"inertia", detail::vec3_json(p.inertia)},
              {"motor_tau_up", p.motor_tau_up},
              {"motor_tau_down", p.motor_tau_down}};
}

inline QuadParams params_from_json(const Json& j) {
  detail::check_keys(j, {"mass", "arm_length", "thrust_coeffs", "moment_coeff", "inertia", "motor_tau_up", "motor_tau_down"},
                     "QuadParams");
  QuadParams p;
  p.mass = j.at("mass").get<double>();
  p.arm_length = j.at("arm_length").get<double>();
  const auto& c = j.at("thrust_coeffs");
  if (!c.is_array() || c.size() != 3) throw FormatError("thrust_coeffs must have 3 entries");
  for (std::size_t i = 0; i < 3; ++i) p.thrust_coeffs[i] = c[i].get<double>();
  p.moment_coeff = j.at("moment_coeff").get<double>();
  p.inertia = detail::vec3_from(j.at("inertia"));
  p.motor_tau_up = j.at("motor_tau_up").get<double>();
  p.motor_tau_down = j.at("motor_tau_down").get<double>();
  if (!(p.mass > 0 && p.arm_length > 0 && (p.inertia.array() > 0).all() && p.motor_tau_up > 0 && p.motor_tau_down > 0))
    throw FormatError("QuadParams violates positivity invariants");
  return p;
}

// QuadState: {position[3], orientation[w,x,y,z], linear_velocity[3],
//             angular_velocity[3], prev_action[4], motor_speeds[4]}.
inline Json to_json(const QuadState& s) {
  const auto& q = s.orientation;
  return Json{{"position", detail::vec3_json(s.position)},
              {"orientation", Json::array({q.w(), q.x(), q.y(), q.z()})},
              {"linear_velocity", detail::vec3_json(s.linear_velocity)},
              {"angular_velocity", detail::vec3_json(s.angular_velocity)},
              {"prev_action", s.prev_action},
              {"motor_speeds", s.motor_speeds}};
}

inline QuadState state_from_json(const Json& j) {
  detail::check_keys(j, {"position", "orientation", "linear_velocity", "angular_velocity", "prev_action", "motor_speeds"},
                     "QuadState");
  QuadState s;
  s.position = detail::vec3_from(j.at("position"));
  const auto& q = j.at("orientation");
  if (!q.is_array() || q.size() != 4) throw FormatError("orientation must be [w,x,y,z]");
  s.orientation = Quat(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(), q[3].get<double>());
  s.linear_velocity = detail::vec3_from(j.at("linear_velocity"));
  s.angular_velocity = detail::vec3_from(j.at("angular_velocity"));
  s.prev_action = detail::motor4_from(j.at("prev_action"));
  s.motor_speeds = detail::motor4_from(j.at("motor_speeds"));
  return s;
}

inline Json to_json(const SampleTrace& t) {
  return Json{{"t2w", t.t2w},
              {"scale", t.scale},
              {"mass", t.mass},
              {"max_thrust", t.max_thrust},
              {"ms_scale", t.ms_scale},
              {"deviation", t.deviation},
              {"mass_size_ratio", t.mass_size_ratio},
              {"arm_length", t.arm_length},
              {"t2i", t.t2i},
              {"max_torque", t.max_torque},
              {"moment_coeff", t.moment_coeff},
              {"tau_up", t.tau_up},
              {"tau_down", t.tau_down},
              {"seed", t.seed}};
}

inline SampleTrace trace_from_json(const Json& j) {
  SampleTrace t;
  t.t2w = j.at("t2w").get<double>();
  t.scale = j.at("scale").get<double>();
  t.mass = j.at("mass").get<double>();
  t.max_thrust = j.at("max_thrust").get<double>();
  t.ms_scale = j.at("ms_scale").get<double>();
  t.deviation = j.at("deviation").get<double>();
  t.mass_size_ratio = j.at("mass_size_ratio").get<double>();
  t.arm_length = j.at("arm_length").get<double>();
  t.t2i = j.at("t2i").get<double>();
  t.max_torque = j.at("max_torque").get<double>();
  t.moment_coeff = j.at("moment_coeff").get<double>();
  t.tau_up = j.at("tau_up").get<double>();
  t.tau_down = j.at("tau_down").get<double>();
  t.seed = j.at("seed").get<std::uint64_t>();
  return t;
}

/// Fleet file: JSON array of {"params": QuadParams, "trace": SampleTrace}.
inline Json fleet_to_json(const std::vector<SampledQuad>& fleet) {
  Json arr = Json::array();
  for (const auto& q : fleet) arr.push_back(Json{{"params", to_json(q.params)}, {"trace", to_json(q.trace)}});
  return arr;
}

inline std::vector<SampledQuad> fleet_from_json(const Json& j) {
  if (!j.is_array()) throw FormatError("fleet file must be a JSON array");
  std::vector<SampledQuad> fleet;
  for (const auto& e : j) fleet.push_back({params_from_json(e.at("params")), trace_from_json(e.at("trace"))});
  return fleet;
}

inline std::string read_text(const std::string& path) { return detail::read_file(path); }

inline void write_text(const std::string& path, const std::string& text) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  detail::write_file(path, text);
}

inline Json read_json(const std::string& path) {
  try {
    return Json::parse(read_text(path));
  } catch (const Json::parse_error& e) {
    throw FormatError(path + ": " + e.what());
  }
}

inline void write_json(const std::string& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

inline std::vector<SampledQuad> load_fleet(const std::string& path) { return fleet_from_json(read_json(path)); }

inline void save_fleet(const std::string& path, const std::vector<SampledQuad>& fleet) {
  write_json(path, fleet_to_json(fleet));
}

/// Stable identifier of a parameter set: hex FNV-1a of its JSON text.
inline std::string params_id(const QuadParams& p) {
  const std::string s = to_json(p).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

// Teacher checkpoint binary:
//   bytes 0..7  magic "RPTRTCH\0"
//   u32         format version (1)
//   u32         layer count L
//   L x (u32 in, u32 out, u32 activation[0 identity,1 relu,2 tanh])
//   f32 x N     actor parameters, per layer: weight (out x in, row-major), then bias
// The JSON sidecar (<file>.json) holds the bound QuadParams and metrics.
inline constexpr char kCheckpointMagic[8] = {'R', 'P', 'T', 'R', 'T', 'C', 'H', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::string serialize_actor(const nn::Mlp<float>& net) {
  std::string out(kCheckpointMagic, kCheckpointMagic + 8);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(net.layers().size()));
  for (const auto& l : net.layers()) {
    detail::put_u32(out, static_cast<std::uint32_t>(l.in));
    detail::put_u32(out, static_cast<std::uint32_t>(l.out));
    detail::put_u32(out, static_cast<std::uint32_t>(l.act));
  }
  for (const auto& l : net.layers()) {
    for (int r = 0; r < l.out; ++r)
      for (int c = 0; c < l.in; ++c)
        detail::put_f32(out, net.params()[static_cast<Eigen::Index>(l.weight_offset + static_cast<std::size_t>(c * l.out + r))]);
    for (int r = 0; r < l.out; ++r) detail::put_f32(out, net.params()[static_cast<Eigen::Index>(l.bias_offset + static_cast<std::size_t>(r))]);
  }
  return out;
}

inline nn::Mlp<float> deserialize_actor(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) throw FormatError("bad checkpoint magic");
  if (detail::get_u32(bytes, 8) != kCheckpointVersion) throw FormatError("unsupported checkpoint version");
  const auto n_layers = detail::get_u32(bytes, 12);
  if (n_layers == 0 || n_layers > 64 || bytes.size() < 16 + 12 * n_layers) throw FormatError("checkpoint truncated");
  std::vector<int> sizes;
  nn::Activation hidden = nn::Activation::identity, output = nn::Activation::identity;
  for (std::uint32_t k = 0; k < n_layers; ++k) {
    const auto in = detail::get_u32(bytes, 16 + 12 * k);
    const auto out = detail::get_u32(bytes, 20 + 12 * k);
    const auto act = detail::get_u32(bytes, 24 + 12 * k);
    if (act > 2) throw FormatError("unknown activation in checkpoint");
    if (k == 0) sizes.push_back(static_cast<int>(in));
    else if (static_cast<int>(in) != sizes.back()) throw FormatError("inconsistent layer shapes");
    sizes.push_back(static_cast<int>(out));
    (k + 1 == n_layers ? output : hidden) = static_cast<nn::Activation>(act);
  }
  nn::Mlp<float> net(sizes, hidden, output);
  const std::size_t data = 16 + 12 * n_layers;
  if (bytes.size() != data + 4 * net.num_params()) throw FormatError("checkpoint size does not match its header");
  std::size_t pos = data;
  for (const auto& l : net.layers()) {
    for (int r = 0; r < l.out; ++r)
      for (int c = 0; c < l.in; ++c, pos += 4)
        net.params()[static_cast<Eigen::Index>(l.weight_offset + static_cast<std::size_t>(c * l.out + r))] = detail::get_f32(bytes, pos);
    for (int r = 0; r < l.out; ++r, pos += 4)
      net.params()[static_cast<Eigen::Index>(l.bias_offset + static_cast<std::size_t>(r))] = detail::get_f32(bytes, pos);
  }
  return net;
}

inline void save_checkpoint(const std::string& path, const TeacherCheckpoint& ck, const QuadParams& params) {
  write_text(path, serialize_actor(ck.actor));
  write_json(path + ".json", Json{{"params_id", ck.params_id.empty() ? params_id(params) : ck.params_id},
                                  {"params", to_json(params)},
                                  {"training_steps", ck.training_steps},
                                  {"final_mean_episode_length", ck.final_mean_episode_length},
                                  {"completed", ck.completed},
                                  {"fault", ck.fault}});
}

struct LoadedCheckpoint {
  TeacherCheckpoint checkpoint;
  QuadParams params;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  LoadedCheckpoint out;
  out.checkpoint.actor = deserialize_actor(read_text(path));
  const Json side = read_json(path + ".json");
  out.params = params_from_json(side.at("params"));
  out.checkpoint.params_id = side.at("params_id").get<std::string>();
  out.checkpoint.training_steps = side.at("training_steps").get<long>();
  out.checkpoint.final_mean_episode_length = side.at("final_mean_episode_length").get<double>();
  out.checkpoint.completed = side.at("completed").get<bool>();
  out.checkpoint.fault = side.at("fault").get<std::string>();
  return out;
}

/// Formats doubles with full round-trip precision.
inline std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

/// Simple CSV writer: header once, rows of doubles or preformatted strings.
class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    out_.open(path);
    if (!out_) throw std::runtime_error("cannot write " + path);
  }

  void header(const std::vector<std::string>& cols) { row_strings(cols); }

  void row(const std::vector<double>& values) {
    for (std::size_t i = 0; i < values.size(); ++i) out_ << (i ? "," : "") << fmt_double(values[i]);
    out_ << "\n";
  }

  void row_strings(const std::vector<std::string>& values) {
    for (std::size_t i = 0; i < values.size(); ++i) out_ << (i ? "," : "") << values[i];
    out_ << "\n";
  }

 private:
  std::ofstream out_;
};

/// Columnar episode CSV: one row per step with columns
///   step, obs_0..obs_21, student_a0..3, teacher_a0..3, reward, terminal,
///   px, py, pz, vx, vy, vz, ref_px.., ref_vx.., h_0..h_{H-1}
inline void write_episode_csv(const std::string& path, const EpisodeRecord& rec) {
  CsvWriter csv(path);
  std::vector<std::string> cols{"step"};
  for (int i = 0; i < kObsDim; ++i) cols.push_back("obs_" + std::to_string(i));
  for (int i = 0; i < 4; ++i) cols.push_back("student_a" + std::to_string(i));
  for (int i = 0; i < 4; ++i) cols.push_back("teacher_a" + std::to_string(i));
  for (const char* c : {"reward", "terminal", "px", "py", "pz", "vx", "vy", "vz", "ref_px", "ref_py", "ref_pz", "ref_vx",
                        "ref_vy", "ref_vz"})
    cols.emplace_back(c);
  const std::size_t H = rec.hidden_states.empty() ? 0 : rec.hidden_states.front().size();
  for (std::size_t i = 0; i < H; ++i) cols.push_back("h_" + std::to_string(i));
  csv.header(cols);
  for (std::size_t t = 0; t < rec.size(); ++t) {
    std::vector<double> row{static_cast<double>(t)};
    for (int i = 0; i < kObsDim; ++i) row.push_back(rec.observations[t][i]);
    for (int i = 0; i < 4; ++i) row.push_back(t < rec.student_actions.size() ? rec.student_actions[t][static_cast<std::size_t>(i)] : 0.0);
    for (int i = 0; i < 4; ++i) row.push_back(t < rec.teacher_actions.size() ? rec.teacher_actions[t][static_cast<std::size_t>(i)] : 0.0);
    row.push_back(rec.rewards[t]);
    row.push_back(rec.terminal[t] ? 1.0 : 0.0);
    for (int i = 0; i < 3; ++i) row.push_back(rec.positions[t][i]);
    for (int i = 0; i < 3; ++i) row.push_back(rec.velocities[t][i]);
    for (int i = 0; i < 3; ++i) row.push_back(rec.references[t].position[i]);
    for (int i = 0; i < 3; ++i) row.push_back(rec.references[t].velocity[i]);
    for (std::size_t i = 0; i < H; ++i) row.push_back(rec.hidden_states[t][i]);
    csv.row(row);
  }
}

// Binary episode record:
//   bytes 0..7  magic "RPTREPS\0"
//   u32 version (1), u32 steps T, u32 hidden size H, u32 flags (bit0: teacher labels present)
//   QuadParams as 11 f64 (mass, arm, cf0, cf1, cf2, c_m, Jxx, Jyy, Jzz, tau_up, tau_down)
//   T rows of f64: obs[22], student[4], teacher[4], reward, terminal, p[3], v[3], ref_p[3], ref_v[3], h[H]
inline constexpr char kEpisodeMagic[8] = {'R', 'P', 'T', 'R', 'E', 'P', 'S', '\0'};

namespace detail {
inline void put_f64(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, sizeof bits);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}
inline double get_f64(const std::string& in, std::size_t pos) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  double d;
  std::memcpy(&d, &bits, sizeof d);
  return d;
}
}  // namespace detail

inline std::string serialize_episode(const EpisodeRecord& rec) {
  std::string out(kEpisodeMagic, kEpisodeMagic + 8);
  const std::size_t T = rec.size();
  const std::size_t H = rec.hidden_states.empty() ? 0 : rec.hidden_states.front().size();
  const bool labels = rec.teacher_actions.size() == T && T > 0;
  detail::put_u32(out, 1);
  detail::put_u32(out, static_cast<std::uint32_t>(T));
  detail::put_u32(out, static_cast<std::uint32_t>(H));
  detail::put_u32(out, labels ? 1u : 0u);
  const auto& p = rec.params;
  for (double v : {p.mass, p.arm_length, p.thrust_coeffs[0], p.thrust_coeffs[1], p.thrust_coeffs[2], p.moment_coeff,
                   p.inertia.x(), p.inertia.y(), p.inertia.z(), p.motor_tau_up, p.motor_tau_down})
    detail::put_f64(out, v);
  for (std::size_t t = 0; t < T; ++t) {
    for (int i = 0; i < kObsDim; ++i) detail::put_f64(out, rec.observations[t][i]);
    for (int i = 0; i < 4; ++i) detail::put_f64(out, rec.student_actions[t][static_cast<std::size_t>(i)]);
    for (int i = 0; i < 4; ++i) detail::put_f64(out, labels ? rec.teacher_actions[t][static_cast<std::size_t>(i)] : 0.0);
    detail::put_f64(out, rec.rewards[t]);
    detail::put_f64(out, rec.terminal[t] ? 1.0 : 0.0);
    for (int i = 0; i < 3; ++i) detail::put_f64(out, rec.positions[t][i]);
    for (int i = 0; i < 3; ++i) detail::put_f64(out, rec.velocities[t][i]);
    for (int i = 0; i < 3; ++i) detail::put_f64(out, rec.references[t].position[i]);
    for (int i = 0; i < 3; ++i) detail::put_f64(out, rec.references[t].velocity[i]);
    for (std::size_t i = 0; i < H; ++i) detail::put_f64(out, rec.hidden_states[t][i]);
  }
  return out;
}

inline EpisodeRecord deserialize_episode(const std::string& bytes) {
  if (bytes.size() < 24 || std::memcmp(bytes.data(), kEpisodeMagic, 8) != 0) throw FormatError("bad episode magic");
  if (detail::get_u32(bytes, 8) != 1) throw FormatError("unsupported episode version");
  const std::size_t T = detail::get_u32(bytes, 12);
  const std::size_t H = detail::get_u32(bytes, 16);
  const bool labels = (detail::get_u32(bytes, 20) & 1u) != 0;
  const std::size_t row = kObsDim + 4 + 4 + 2 + 12 + H;
  if (bytes.size() != 24 + 11 * 8 + 8 * row * T) throw FormatError("episode size does not match its header");
  EpisodeRecord rec;
  std::size_t pos = 24;
  auto next = [&]() {
    const double v = detail::get_f64(bytes, pos);
    pos += 8;
    return v;
  };
  auto& p = rec.params;
  p.mass = next();
  p.arm_length = next();
  for (auto& c : p.thrust_coeffs) c = next();
  p.moment_coeff = next();
  for (int i = 0; i < 3; ++i) p.inertia[i] = next();
  p.motor_tau_up = next();
  p.motor_tau_down = next();
  for (std::size_t t = 0; t < T; ++t) {
    Observation o;
    for (int i = 0; i < kObsDim; ++i) o[i] = next();
    rec.observations.push_back(o);
    Motor4 s{}, te{};
    for (auto& x : s) x = next();
    for (auto& x : te) x = next();
    rec.student_actions.push_back(s);
    if (labels) rec.teacher_actions.push_back(te);
    rec.rewards.push_back(next());
    rec.terminal.push_back(next() != 0.0);
    Vec3 pp, vv, rp, rv;
    for (int i = 0; i < 3; ++i) pp[i] = next();
    for (int i = 0; i < 3; ++i) vv[i] = next();
    for (int i = 0; i < 3; ++i) rp[i] = next();
    for (int i = 0; i < 3; ++i) rv[i] = next();
    rec.positions.push_back(pp);
    rec.velocities.push_back(vv);
    rec.references.push_back({rp, rv});
    std::vector<double> h(H);
    for (auto& x : h) x = next();
    rec.hidden_states.push_back(std::move(h));
  }
  return rec;
}

inline Json to_json(const ProbeFit& fit) {
  return Json{{"weights", std::vector<double>(fit.weights.data(), fit.weights.data() + fit.weights.size())},
              {"intercept", fit.intercept},
              {"test_mse", fit.test_mse},
              {"test_r2", fit.test_r2},
              {"train_quads", fit.train_quads},
              {"test_quads", fit.test_quads}};
}

inline ProbeFit probe_fit_from_json(const Json& j) {
  detail::check_keys(j, {"weights", "intercept", "test_mse", "test_r2", "train_quads", "test_quads"}, "probe fit");
  ProbeFit f;
  try {
    const auto w = j.at("weights").get<std::vector<double>>();
    f.weights = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
    f.intercept = j.at("intercept").get<double>();
    f.test_mse = j.value("test_mse", 0.0);
    f.test_r2 = j.value("test_r2", 0.0);
    f.train_quads = j.value("train_quads", std::vector<int>{});
    f.test_quads = j.value("test_quads", std::vector<int>{});
  } catch (const Json::exception& e) {
    throw FormatError(std::string("probe fit: ") + e.what());
  }
  return f;
}

}  // namespace raptor
