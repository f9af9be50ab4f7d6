// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration: one nested JSON document covering every stage.
// Missing keys keep their defaults; unknown keys are rejected.
#pragma once

#include "raptor/analysis.hpp"
#include "raptor/distill.hpp"
#include "raptor/io.hpp"
#include "raptor/sac.hpp"
#include "raptor/sampler.hpp"

#include <cstdlib>
#include <string>
#include <type_traits>
#include <vector>

namespace raptor {

/// Settings of the evaluation studies.
struct AnalysisConfig {
  double probe_split = 0.8;
  int probe_episodes = 2;
  int probe_steps = 500;
  int probe_skip = 100;
  int fig8_loops = 1;
  Fig8Config fig8{};
  double activation_speed = 1.0;
  double activation_duration = 10.0;
  DelayStudyConfig delay{};
  std::vector<double> delays{0.0, 0.01, 0.02, 0.03};
  std::vector<int> scaling_hidden{4, 8, 16, 32};
  std::vector<int> scaling_teachers{4, 8, 16, 32};
  int scaling_seeds = 3;
};

struct ExperimentConfig {
  std::uint64_t seed = 42;
  std::string output_dir = "runs";
  int workers = 1;
  int fleet_size = 32;
  int holdout = 4;
  SamplerConfig sampler{};
  EnvConfig env{};
  SacConfig sac{};
  DistillConfig distill{};
  AnalysisConfig analysis{};
};

/// Environment variable naming the default config file.
inline constexpr const char* kConfigEnvVar = "RAPTOR_CONFIG";

namespace config_detail {

// Each struct lists its fields once; the same list drives both directions.
template <class F> void fields(Range& r, F&& f) { f("lo", r.lo); f("hi", r.hi); }
template <class F> void fields(SimConfig& c, F&& f) { f("dt", c.dt); f("integrator", c.integrator); f("gravity", c.gravity); }
template <class F> void fields(TerminationConfig& c, F&& f) {
  f("position_factor", c.position_factor);
  f("max_velocity", c.max_velocity);
  f("max_angular_velocity", c.max_angular_velocity);
}
template <class F> void fields(LangevinConfig& c, F&& f) {
  f("stiffness", c.stiffness); f("damping", c.damping); f("sigma", c.sigma); f("clamp", c.clamp);
}
template <class F> void fields(Fig8Config& c, F&& f) {
  f("period", c.period); f("amplitude_x", c.amplitude_x); f("amplitude_y", c.amplitude_y); f("ramp", c.ramp);
}
template <class F> void fields(EnvConfig& c, F&& f) {
  f("sim", c.sim);
  f("horizon", c.horizon);
  f("target_start_probability", c.target_start_probability);
  f("null_task_probability", c.null_task_probability);
  f("langevin", c.langevin);
  f("init_position_factor", c.init_position_factor);
  f("init_position_ball", c.init_position_ball);
  f("init_max_angle", c.init_max_angle);
  f("init_max_velocity", c.init_max_velocity);
  f("init_max_angular_velocity", c.init_max_angular_velocity);
  f("termination", c.termination);
}
template <class F> void fields(SamplerConfig& c, F&& f) {
  f("t2w", c.t2w);
  f("mass", c.mass);
  f("baseline_thrust_shape", c.baseline_thrust_shape);
  f("mass_size_ratio", c.mass_size_ratio);
  f("ms_deviation_mean", c.ms_deviation_mean);
  f("ms_deviation_std", c.ms_deviation_std);
  f("t2i", c.t2i);
  f("jzz_factor", c.jzz_factor);
  f("moment_coeff", c.moment_coeff);
  f("tau_up", c.tau_up);
  f("tau_down", c.tau_down);
}
template <class F> void fields(SacConfig& c, F&& f) {
  f("gamma", c.gamma);
  f("actor_lr", c.actor_lr);
  f("critic_lr", c.critic_lr);
  f("alpha_lr", c.alpha_lr);
  f("batch_size", c.batch_size);
  f("polyak", c.polyak);
  f("target_entropy", c.target_entropy);
  f("initial_alpha", c.initial_alpha);
  f("warmup_steps", c.warmup_steps);
  f("total_steps", c.total_steps);
  f("buffer_capacity", c.buffer_capacity);
  f("hidden", c.hidden);
  f("updates_per_step", c.updates_per_step);
  f("log_std_min", c.log_std_min);
  f("log_std_max", c.log_std_max);
  f("activation", c.activation);
}
template <class F> void fields(DistillConfig& c, F&& f) {
  f("epochs", c.epochs);
  f("warmup_epochs", c.warmup_epochs);
  f("horizon", c.horizon);
  f("envs_per_epoch", c.envs_per_epoch);
  f("bptt_truncation", c.bptt_truncation);
  f("learning_rate", c.learning_rate);
  f("grad_clip", c.grad_clip);
  f("hidden", c.hidden);
  f("eval_every", c.eval_every);
  f("eval_episodes", c.eval_episodes);
  f("eval_fig8", c.eval_fig8);
  f("eval_fig8_cfg", c.eval_fig8_cfg);
  f("max_faults", c.max_faults);
}
template <class F> void fields(DelayStudyConfig& c, F&& f) {
  f("duration", c.duration); f("window", c.window); f("filter_time_constant", c.filter_time_constant); f("episodes", c.episodes);
}
template <class F> void fields(AnalysisConfig& c, F&& f) {
  f("probe_split", c.probe_split);
  f("probe_episodes", c.probe_episodes);
  f("probe_steps", c.probe_steps);
  f("probe_skip", c.probe_skip);
  f("fig8_loops", c.fig8_loops);
  f("fig8", c.fig8);
  f("activation_speed", c.activation_speed);
  f("activation_duration", c.activation_duration);
  f("delay", c.delay);
  f("delays", c.delays);
  f("scaling_hidden", c.scaling_hidden);
  f("scaling_teachers", c.scaling_teachers);
  f("scaling_seeds", c.scaling_seeds);
}
template <class F> void fields(ExperimentConfig& c, F&& f) {
  f("seed", c.seed);
  f("output_dir", c.output_dir);
  f("workers", c.workers);
  f("fleet_size", c.fleet_size);
  f("holdout", c.holdout);
  f("sampler", c.sampler);
  f("env", c.env);
  f("sac", c.sac);
  f("distill", c.distill);
  f("analysis", c.analysis);
}

template <class T, class = void>
struct has_fields : std::false_type {};
template <class T>
struct has_fields<T, std::void_t<decltype(fields(std::declval<T&>(), [](const char*, auto&) {}))>> : std::true_type {};

inline const char* enum_name(Integrator i) { return i == Integrator::rk4 ? "rk4" : "euler"; }
inline const char* enum_name(nn::Activation a) {
  switch (a) {
    case nn::Activation::relu: return "relu";
    case nn::Activation::tanh: return "tanh";
    default: return "identity";
  }
}
inline void parse_enum(const Json& j, Integrator& out, const std::string& where) {
  const auto s = j.get<std::string>();
  if (s == "rk4") out = Integrator::rk4;
  else if (s == "euler") out = Integrator::euler;
  else throw FormatError(where + ": unknown integrator '" + s + "'");
}
inline void parse_enum(const Json& j, nn::Activation& out, const std::string& where) {
  const auto s = j.get<std::string>();
  if (s == "relu") out = nn::Activation::relu;
  else if (s == "tanh") out = nn::Activation::tanh;
  else if (s == "identity") out = nn::Activation::identity;
  else throw FormatError(where + ": unknown activation '" + s + "'");
}

template <class T>
Json dump(T& value) {
  if constexpr (has_fields<T>::value) {
    Json j = Json::object();
    fields(value, [&j](const char* name, auto& member) { j[name] = dump(member); });
    return j;
  } else if constexpr (std::is_enum_v<T>) {
    return enum_name(value);
  } else {
    return Json(value);
  }
}

template <class T>
void load(const Json& j, T& value, const std::string& where) {
  if constexpr (has_fields<T>::value) {
    if (!j.is_object()) throw FormatError(where + ": expected an object");
    std::vector<std::string> known;
    fields(value, [&](const char* name, auto& member) {
      known.emplace_back(name);
      if (j.contains(name)) load(j.at(name), member, where + "." + name);
    });
    for (auto it = j.begin(); it != j.end(); ++it)
      if (std::find(known.begin(), known.end(), it.key()) == known.end())
        throw FormatError(where + ": unknown key '" + it.key() + "'");
  } else if constexpr (std::is_enum_v<T>) {
    if (!j.is_string()) throw FormatError(where + ": expected a string");
    parse_enum(j, value, where);
  } else {
    try {
      value = j.get<T>();
    } catch (const Json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
  }
}

}  // namespace config_detail

inline Json config_to_json(const ExperimentConfig& cfg) {
  ExperimentConfig copy = cfg;
  return config_detail::dump(copy);
}

/// Overlays `j` onto `base`.
inline ExperimentConfig config_from_json(const Json& j, ExperimentConfig base = {}) {
  config_detail::load(j, base, "config");
  if (!base.sampler.valid()) throw FormatError("config.sampler: invalid ranges");
  if (!base.distill.valid()) throw FormatError("config.distill: invalid settings");
  if (!base.env.langevin.valid() || !base.analysis.fig8.valid()) throw FormatError("config: invalid trajectory settings");
  if (base.env.sim.dt <= 0.0 || base.env.horizon <= 0) throw FormatError("config.env: dt and horizon must be positive");
  return base;
}

inline ExperimentConfig load_config(const std::string& path) { return config_from_json(read_json(path)); }

inline void save_config(const std::string& path, const ExperimentConfig& cfg) { write_json(path, config_to_json(cfg)); }

/// Explicit path, else the environment variable, else defaults.
inline ExperimentConfig resolve_config(const std::string& explicit_path) {
  if (!explicit_path.empty()) return load_config(explicit_path);
  if (const char* env = std::getenv(kConfigEnvVar); env && *env) return load_config(env);
  return {};
}

}  // namespace raptor
