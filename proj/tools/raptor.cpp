// SPDX-License-Identifier: Apache-2.0
//
// raptor: command-line front end for sampling, teacher training,
// distillation, the evaluation studies and the live session server.
//
// Settings precedence: explicit flag > --config file > $RAPTOR_CONFIG > defaults.

#include "raptor/analysis.hpp"
#include "raptor/config.hpp"
#include "raptor/pipeline.hpp"
#include "raptor/plot.hpp"
#include "raptor/pretrain.hpp"
#include "raptor/scaling.hpp"
#include "raptor/serve.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <filesystem>
#include <iostream>
#include <sstream>

using namespace raptor;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;

  void add_to(CLI::App* app) {
    app->add_option("--config", config_path, "Experiment config JSON (default: $RAPTOR_CONFIG)");
    app->add_option("--seed", seed, "Master seed (overrides the config)");
  }

  ExperimentConfig resolve() const {
    ExperimentConfig cfg = resolve_config(config_path);
    if (seed) cfg.seed = *seed;
    return cfg;
  }
};

std::string sibling(const std::string& path, const std::string& suffix) {
  fs::path p(path);
  return (p.parent_path() / (p.stem().string() + suffix)).string();
}

void ensure_parent(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

const SampledQuad& fleet_entry(const std::vector<SampledQuad>& fleet, std::size_t index) {
  if (index >= fleet.size()) throw std::out_of_range("fleet index " + std::to_string(index) + " out of range");
  return fleet[index];
}

void write_episode_plot(const std::string& path, const EpisodeRecord& rec, double dt, const std::string& title) {
  PlotSeries x{"x", {}, {}}, y{"y", {}, {}}, z{"z", {}, {}}, rx{"x ref", {}, {}}, ry{"y ref", {}, {}};
  for (std::size_t t = 0; t < rec.size(); ++t) {
    const double time = static_cast<double>(t + 1) * dt;
    for (auto* s : {&x, &y, &z, &rx, &ry}) s->x.push_back(time);
    x.y.push_back(rec.positions[t].x());
    y.y.push_back(rec.positions[t].y());
    z.y.push_back(rec.positions[t].z());
    rx.y.push_back(rec.references[t].position.x());
    ry.y.push_back(rec.references[t].position.y());
  }
  write_svg(path, {title, "time [s]", "position [m]"}, {x, y, z, rx, ry});
}

// ---------------------------------------------------------------- sample

int cmd_sample(const Common& common, int n, const std::string& out) {
  const auto cfg = common.resolve();
  const int count = n > 0 ? n : cfg.fleet_size;
  save_fleet(out, sample_fleet(static_cast<std::size_t>(count), cfg.seed, cfg.sampler));
  std::cout << "wrote " << count << " quadrotors to " << out << "\n";
  return 0;
}

// -------------------------------------------------------------- pretrain

int cmd_pretrain(const Common& common, const std::string& fleet_path, const std::string& out_dir, long steps,
                 int workers, const std::vector<std::size_t>& only) {
  auto cfg = common.resolve();
  if (steps > 0) cfg.sac.total_steps = steps;
  if (workers > 0) cfg.workers = workers;
  const auto fleet = load_fleet(fleet_path);
  std::vector<std::size_t> indices = only;
  if (indices.empty())
    for (std::size_t i = 0; i < fleet.size(); ++i) indices.push_back(i);
  std::vector<QuadParams> params;
  for (std::size_t i : indices) params.push_back(fleet_entry(fleet, i).params);
  fs::create_directories(out_dir);

  const auto result = pretrain_fleet(params, cfg.sac, cfg.seed, cfg.workers, cfg.env,
                                     [&](std::size_t k, const TeacherTrainingResult& r) {
                                       const std::size_t i = indices[k];
                                       const std::string path = teacher_path(out_dir, i);
                                       save_checkpoint(path, r.checkpoint, params[k]);
                                       CsvWriter csv(sibling(path, "_curve.csv"));
                                       csv.header({"step", "return", "episode_length"});
                                       for (const auto& p : r.curve)
                                         csv.row({static_cast<double>(p.step), p.episode_return, static_cast<double>(p.episode_length)});
                                       std::cout << "teacher " << i << ": mean eval episode length "
                                                 << r.checkpoint.final_mean_episode_length << "\n";
                                     });
  CsvWriter summary((fs::path(out_dir) / "summary.csv").string());
  summary.header({"index", "params_id", "completed", "final_mean_episode_length", "fault"});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto& run = result.runs[k];
    summary.row_strings({std::to_string(indices[k]), params_id(params[k]),
                         run && run->checkpoint.completed ? "1" : "0",
                         run ? fmt_double(run->checkpoint.final_mean_episode_length) : "nan",
                         run ? run->checkpoint.fault : "exception"});
  }
  for (const auto& f : result.failures) std::cerr << "teacher " << indices[f.index] << " failed: " << f.message << "\n";
  return result.failures.empty() ? 0 : 3;
}

// --------------------------------------------------------------- distill

int cmd_distill(const Common& common, const std::string& fleet_path, const std::string& teacher_dir, int epochs,
                int holdout, int teacher_count, int hidden, const std::string& out, std::string curve_path) {
  auto cfg = common.resolve();
  if (epochs > 0) cfg.distill.epochs = epochs;
  if (holdout >= 0) cfg.holdout = holdout;
  if (hidden > 0) cfg.distill.hidden = hidden;
  const auto fleet = load_fleet(fleet_path);
  const auto split = split_fleet(fleet.size(), static_cast<std::size_t>(cfg.holdout));
  auto train = split.train;
  if (teacher_count > 0 && static_cast<std::size_t>(teacher_count) < train.size()) train.resize(static_cast<std::size_t>(teacher_count));
  const auto bindings = load_bindings(teacher_dir, fleet, train);
  if (bindings.empty()) throw std::runtime_error("no teachers found in " + teacher_dir);

  if (curve_path.empty()) curve_path = sibling(out, "_curve.csv");
  CsvWriter csv(curve_path);
  csv.header({"epoch", "loss", "heldout_episode_length", "heldout_rmse"});
  DistillOptions opts;
  opts.holdout = params_of(fleet, split.holdout);
  opts.on_epoch = [&](const DistillCurveRow& r) {
    csv.row({static_cast<double>(r.epoch), r.loss, r.heldout_episode_length, r.heldout_rmse});
    if (r.heldout_episode_length >= 0)
      std::cout << "epoch " << r.epoch << " loss " << r.loss << " held-out length " << r.heldout_episode_length
                << " rmse " << r.heldout_rmse << std::endl;
  };
  const auto result = distill(bindings, cfg.distill, cfg.seed, opts, cfg.env);
  ensure_parent(out);
  export_policy(result.policy, out);

  PlotSeries loss{"loss", {}, {}};
  for (const auto& r : result.curve) {
    loss.x.push_back(r.epoch);
    loss.y.push_back(r.loss);
  }
  write_svg(sibling(out, "_curve.svg"), {"distillation loss", "epoch", "loss"}, {loss});
  std::cout << "wrote " << out << " (" << bindings.size() << " teachers)\n";
  return 0;
}

// ---------------------------------------------------------------- export

int cmd_export(const std::string& checkpoint, const std::string& out, const std::string& format) {
  const auto policy = load_policy(checkpoint);
  ensure_parent(out);
  if (format == "bin") {
    export_policy(policy, out);
  } else if (format == "json") {
    Json j{{"hidden", policy.hidden()},
           {"obs_dim", policy.obs_dim()},
           {"act_dim", policy.act_dim()},
           {"param_count", policy.num_params()},
           {"flop_count", flop_count(static_cast<std::size_t>(policy.hidden()))}};
    std::vector<float> p(policy.params().data(), policy.params().data() + policy.params().size());
    j["params"] = p;
    write_json(out, j);
  } else if (format == "c-header") {
    // Same byte order as the binary export, as a float array.
    const std::string bytes = serialize_policy(policy);
    std::ostringstream os;
    os << "// Generated by raptor export. Layout: see include/raptor/student.hpp.\n#pragma once\n\n";
    os << "#define RAPTOR_POLICY_HIDDEN " << policy.hidden() << "\n#define RAPTOR_POLICY_OBS " << policy.obs_dim()
       << "\n#define RAPTOR_POLICY_ACT " << policy.act_dim() << "\n#define RAPTOR_POLICY_PARAMS " << policy.num_params()
       << "\n\nstatic const float raptor_policy_params[RAPTOR_POLICY_PARAMS] = {\n";
    for (std::size_t i = 0; i < policy.num_params(); ++i) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.9gf", static_cast<double>(detail::get_f32(bytes, kPolicyHeaderBytes + 4 * i)));
      os << (i % 6 == 0 ? "  " : " ") << buf << (i + 1 < policy.num_params() ? "," : "") << (i % 6 == 5 ? "\n" : "");
    }
    os << "\n};\n";
    write_text(out, os.str());
  } else {
    throw CLI::ValidationError("--format", "expected bin, json or c-header");
  }
  std::cout << "wrote " << out << "\n";
  return 0;
}

// ----------------------------------------------------------------- infer

int cmd_infer(const std::string& policy_path, const std::string& obs_csv, const std::string& out) {
  const auto policy = load_policy(policy_path);
  PolicyRunner<float> runner(policy);
  std::istringstream in(read_text(obs_csv));
  CsvWriter csv(out);
  std::vector<std::string> cols{"step", "a0", "a1", "a2", "a3"};
  for (int i = 0; i < policy.hidden(); ++i) cols.push_back("h_" + std::to_string(i));
  csv.header(cols);
  std::string line;
  long step = 0;
  while (std::getline(in, line)) {
    if (line.empty()) {
      runner.reset();  // blank line separates sequences
      continue;
    }
    std::vector<double> values;
    std::stringstream ls(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ls, cell, ',')) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        numeric = false;
      }
    }
    if (!numeric) continue;  // header
    if (values.size() != static_cast<std::size_t>(kObsDim))
      throw std::runtime_error("observation row " + std::to_string(step) + " has " + std::to_string(values.size()) +
                               " values, expected " + std::to_string(kObsDim));
    Observation o;
    for (int i = 0; i < kObsDim; ++i) o[i] = values[static_cast<std::size_t>(i)];
    const Motor4 a = runner.act(o);
    std::vector<double> row{static_cast<double>(step++), a[0], a[1], a[2], a[3]};
    for (double h : runner.hidden_vector()) row.push_back(h);
    csv.row(row);
  }
  std::cout << "wrote " << step << " actions to " << out << "\n";
  return 0;
}

// ----------------------------------------------------------------- probe

int cmd_probe(const Common& common, const std::string& policy_path, const std::string& fleet_path, const std::string& out,
              const std::string& fit_out) {
  const auto cfg = common.resolve();
  const auto policy = load_policy(policy_path);
  const auto fleet = load_fleet(fleet_path);
  const auto data = collect_probe_dataset(policy, fleet, cfg.analysis.probe_episodes, cfg.analysis.probe_steps,
                                          cfg.analysis.probe_skip, cfg.seed, cfg.env);
  const auto fit = linear_probe_fit(data, cfg.analysis.probe_split);
  CsvWriter csv(out);
  std::vector<std::string> cols{"quad", "step", "split", "t2w", "prediction"};
  csv.header(cols);
  PlotSeries pts{"held-out rows", {}, {}, true};
  for (const auto& r : data.rows) {
    double pred = fit.intercept;
    for (std::size_t j = 0; j < r.hidden.size(); ++j) pred += fit.weights(static_cast<Eigen::Index>(j)) * r.hidden[j];
    const bool test = std::binary_search(fit.test_quads.begin(), fit.test_quads.end(), r.quad);
    csv.row_strings({std::to_string(r.quad), std::to_string(r.step), test ? "test" : "train", fmt_double(r.target), fmt_double(pred)});
    if (test) {
      pts.x.push_back(r.target);
      pts.y.push_back(pred);
    }
  }
  write_svg(sibling(out, ".svg"), {"linear probe: thrust-to-weight", "true", "predicted"}, {pts});
  write_json(fit_out.empty() ? sibling(out, "_fit.json") : fit_out, to_json(fit));
  std::cout << "test MSE " << fit.test_mse << " R2 " << fit.test_r2 << "\n";
  return 0;
}

std::optional<ProbeFit> load_probe_fit(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return probe_fit_from_json(read_json(path));
}

// ------------------------------------------------------------- eval-fig8

int cmd_eval_fig8(const Common& common, const std::string& policy_path, const std::string& fleet_path, std::size_t index,
                  int loops, double period, const std::string& out) {
  auto cfg = common.resolve();
  if (period > 0) cfg.analysis.fig8.period = period;
  if (loops > 0) cfg.analysis.fig8_loops = loops;
  const auto policy = load_policy(policy_path);
  const auto fleet = load_fleet(fleet_path);
  const auto ex = context_extrapolation_test(policy, fleet_entry(fleet, index).params, cfg.analysis.fig8_loops,
                                             cfg.analysis.fig8, cfg.seed, false, cfg.env);
  write_episode_csv(out, ex.run.record);
  write_episode_plot(sibling(out, ".svg"), ex.run.record, cfg.env.sim.dt, "figure-eight tracking");
  CsvWriter loops_csv(sibling(out, "_loops.csv"));
  loops_csv.header({"loop", "rmse_xy"});
  for (std::size_t l = 0; l < ex.loop_rmse.size(); ++l) loops_csv.row({static_cast<double>(l), ex.loop_rmse[l]});
  std::cout << "rmse_xy " << ex.run.rmse_xy << " rmse_xyz " << ex.run.rmse_xyz << " terminated " << ex.terminated;
  if (ex.terminated) std::cout << " (loop " << ex.failed_loop << ")";
  std::cout << "\n";
  return 0;
}

// -------------------------------------------------------------- activate

int cmd_activate(const Common& common, const std::string& policy_path, const std::string& fleet_path, std::size_t index,
                 std::optional<double> speed, const std::string& out) {
  const auto cfg = common.resolve();
  const auto policy = load_policy(policy_path);
  const auto fleet = load_fleet(fleet_path);
  const auto r = midair_activation_test(policy, fleet_entry(fleet, index).params,
                                        speed.value_or(cfg.analysis.activation_speed), cfg.seed,
                                        cfg.analysis.activation_duration, cfg.env);
  write_episode_csv(out, r.record);
  write_episode_plot(sibling(out, ".svg"), r.record, cfg.env.sim.dt, "mid-air activation");
  std::cout << "recovered " << r.recovered << " diverged " << r.diverged << "\n";
  return r.recovered ? 0 : 4;
}

// --------------------------------------------------------------- disturb

int cmd_disturb(const Common& common, const std::string& policy_path, const std::string& fleet_path, std::size_t index,
                const std::string& kind, const std::vector<double>& value, int motor, double at, double duration,
                const std::string& out) {
  const auto cfg = common.resolve();
  const auto policy = load_policy(policy_path);
  const auto fleet = load_fleet(fleet_path);
  const auto& params = fleet_entry(fleet, index).params;
  Disturbance d;
  if (kind == "impulse") {
    if (value.size() != 3) throw CLI::ValidationError("--value", "impulse needs three values (m/s)");
    d = Impulse{Vec3(value[0], value[1], value[2])};
  } else if (kind == "payload") {
    if (value.size() != 1) throw CLI::ValidationError("--value", "payload needs one value (kg)");
    d = Payload{value[0]};
  } else if (kind == "prop_swap") {
    if (value.size() != 1) throw CLI::ValidationError("--value", "prop_swap needs one thrust scale");
    d = PropSwap{motor, value[0]};
  } else {
    throw CLI::ValidationError("--kind", "expected impulse, payload or prop_swap");
  }
  const auto r = disturbance_test(policy, params, d, at, duration, cfg.seed, 0.05, cfg.env);
  write_episode_csv(out, r.record);
  write_episode_plot(sibling(out, ".svg"), r.record, cfg.env.sim.dt, "disturbance: " + kind);
  std::cout << "diverged " << r.diverged << " settle_time " << r.settle_time << "\n";
  return r.diverged ? 4 : 0;
}

// ----------------------------------------------------------- delay-study

int cmd_delay(const Common& common, const std::string& policy_path, const std::string& fleet_path, std::size_t index,
              std::vector<double> delays, bool mitigation, const std::string& out) {
  const auto cfg = common.resolve();
  if (delays.empty()) delays = cfg.analysis.delays;
  const auto policy = load_policy(policy_path);
  const auto fleet = load_fleet(fleet_path);
  const auto rows = delay_study(policy, fleet_entry(fleet, index).params, delays, mitigation, cfg.seed, cfg.analysis.delay, cfg.env);
  CsvWriter csv(out);
  csv.header({"delay_s", "mitigation", "z_std_m", "diverged_episodes"});
  PlotSeries plain{"delayed", {}, {}}, mitigated{"delayed + filter", {}, {}};
  for (const auto& r : rows) {
    csv.row({r.delay, r.mitigation ? 1.0 : 0.0, r.z_std, static_cast<double>(r.diverged)});
    auto& s = r.mitigation ? mitigated : plain;
    s.x.push_back(r.delay * 1000.0);
    s.y.push_back(r.z_std);
  }
  std::vector<PlotSeries> series{plain};
  if (mitigation) series.push_back(mitigated);
  write_svg(sibling(out, ".svg"), {"z oscillation vs velocity delay", "delay [ms]", "z std [m]"}, series);
  for (const auto& r : rows) std::cout << "delay " << r.delay << " mitigation " << r.mitigation << " z_std " << r.z_std << "\n";
  return 0;
}

// --------------------------------------------------------------- scaling

int cmd_scaling(const Common& common, const std::string& fleet_path, const std::string& teacher_dir,
                std::vector<int> hidden, std::vector<int> counts, int seeds, int epochs, const std::string& out) {
  auto cfg = common.resolve();
  if (hidden.empty()) hidden = cfg.analysis.scaling_hidden;
  if (counts.empty()) counts = cfg.analysis.scaling_teachers;
  if (seeds > 0) cfg.analysis.scaling_seeds = seeds;
  if (epochs > 0) cfg.distill.epochs = epochs;
  const auto fleet = load_fleet(fleet_path);
  const auto split = split_fleet(fleet.size(), static_cast<std::size_t>(cfg.holdout));
  const auto bindings = load_bindings(teacher_dir, fleet, split.train);
  ScalingOptions opts;
  opts.hidden_sizes = hidden;
  opts.teacher_counts = counts;
  opts.seeds = cfg.analysis.scaling_seeds;
  CsvWriter csv(out);
  csv.header({"hidden", "teachers", "seed_index", "params", "flops", "mean_episode_length", "full_length_fraction", "fault"});
  const auto rows = scaling_sweep(bindings, params_of(fleet, split.holdout), cfg.distill, cfg.seed, opts, cfg.env,
                                  [&](const ScalingRow& r) {
                                    csv.row_strings({std::to_string(r.hidden), std::to_string(r.teachers),
                                                     std::to_string(r.seed_index), std::to_string(r.params),
                                                     std::to_string(r.flops), fmt_double(r.mean_episode_length),
                                                     fmt_double(r.full_length_fraction), r.fault});
                                    std::cout << "H " << r.hidden << " teachers " << r.teachers << " seed " << r.seed_index
                                              << " length " << r.mean_episode_length << (r.fault.empty() ? "" : " fault: " + r.fault)
                                              << std::endl;
                                  });
  // Median over seeds per cell for the two views.
  auto median_length = [&](int h, int n) {
    std::vector<double> v;
    for (const auto& r : rows)
      if (r.hidden == h && r.teachers == n && r.fault.empty()) v.push_back(r.mean_episode_length);
    if (v.empty()) return std::nan("");
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  std::vector<PlotSeries> by_flops, by_teachers;
  for (int n : counts) {
    PlotSeries s{std::to_string(n) + " teachers", {}, {}};
    for (int h : hidden) {
      s.x.push_back(static_cast<double>(flop_count(static_cast<std::size_t>(h))));
      s.y.push_back(median_length(h, n));
    }
    by_flops.push_back(s);
  }
  for (int h : hidden) {
    PlotSeries s{"H=" + std::to_string(h), {}, {}};
    for (int n : counts) {
      s.x.push_back(n);
      s.y.push_back(median_length(h, n));
    }
    by_teachers.push_back(s);
  }
  write_svg(sibling(out, "_flops.svg"), {"episode length vs inference FLOPs", "FLOPs per step", "episode length", true}, by_flops);
  write_svg(sibling(out, "_teachers.svg"), {"episode length vs teacher count", "teachers", "episode length", true}, by_teachers);
  return 0;
}

// ------------------------------------------------------------------ traj

int cmd_traj(const Common& common, const std::string& kind, double duration, const std::string& out) {
  const auto cfg = common.resolve();
  Rng rng(cfg.seed);
  ReferenceTrajectory ref = ReferenceTrajectory::null();
  if (kind == "langevin") ref = ReferenceTrajectory::langevin(Vec3::Zero(), cfg.env.langevin);
  else if (kind == "fig8") ref = ReferenceTrajectory::figure_eight(cfg.analysis.fig8);
  else if (kind != "null") throw CLI::ValidationError("--kind", "expected null, langevin or fig8");
  const double dt = cfg.env.sim.dt;
  const int steps = static_cast<int>(std::lround(duration / dt));
  CsvWriter csv(out);
  csv.header({"t", "px", "py", "pz", "vx", "vy", "vz"});
  PlotSeries xy{"reference", {}, {}};
  for (int t = 0; t <= steps; ++t) {
    const auto& s = ref.current();
    csv.row({t * dt, s.position.x(), s.position.y(), s.position.z(), s.velocity.x(), s.velocity.y(), s.velocity.z()});
    xy.x.push_back(s.position.x());
    xy.y.push_back(s.position.y());
    ref.advance(dt, rng);
  }
  write_svg(sibling(out, ".svg"), {kind + " reference (top view)", "x [m]", "y [m]"}, {xy});
  return 0;
}

// ----------------------------------------------------------------- serve

std::atomic<bool> g_interrupted{false};

int cmd_serve(const Common& common, const std::string& policy_path, const std::string& fleet_path, std::size_t index,
              const std::string& address, unsigned short port, double speed, int decimation, const std::string& probe) {
  const auto cfg = common.resolve();
  SessionOptions sopts;
  sopts.seed = cfg.seed;
  sopts.env_cfg = cfg.env;
  sopts.initial_index = index;
  SimSession session(load_policy(policy_path), load_fleet(fleet_path), sopts, load_probe_fit(probe));
  ServerOptions o;
  o.address = address;
  o.port = port;
  o.speed = speed;
  o.frame_decimation = decimation;
  TelemetryServer server(session, o);
  std::signal(SIGINT, [](int) { g_interrupted = true; });
  std::signal(SIGTERM, [](int) { g_interrupted = true; });
  server.start();
  std::cout << "serving on ws://" << address << ":" << server.port() << " (schema " << kTelemetrySchemaVersion << ")"
            << std::endl;
  while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"raptor: adaptive quadrotor control pipeline"};
  app.require_subcommand(1);
  Common common;

  auto* sample = app.add_subcommand("sample", "Sample a fleet of quadrotors");
  int n = 0;
  std::string out;
  common.add_to(sample);
  sample->add_option("--n", n, "Number of quadrotors (default: config fleet_size)");
  sample->add_option("--out", out, "Fleet JSON")->required();

  auto* pretrain = app.add_subcommand("pretrain", "Train one SAC teacher per quadrotor");
  std::string fleet, teachers;
  long steps = 0;
  int workers = 0;
  std::vector<std::size_t> only;
  common.add_to(pretrain);
  pretrain->add_option("--fleet", fleet, "Fleet JSON")->required();
  pretrain->add_option("--out", out, "Output directory")->required();
  pretrain->add_option("--steps", steps, "Environment steps per teacher");
  pretrain->add_option("--workers", workers, "Parallel training runs");
  pretrain->add_option("--only", only, "Train only these fleet indices")->delimiter(',');

  auto* dist = app.add_subcommand("distill", "Distill teachers into a recurrent student");
  int epochs = 0, holdout = -1, teacher_count = 0, hidden = 0;
  std::string curve;
  common.add_to(dist);
  dist->add_option("--fleet", fleet, "Fleet JSON")->required();
  dist->add_option("--teachers", teachers, "Teacher directory")->required();
  dist->add_option("--epochs", epochs, "Training epochs");
  dist->add_option("--holdout", holdout, "Number of held-out quadrotors (last fleet entries)");
  dist->add_option("--teacher-count", teacher_count, "Use only the first N training teachers");
  dist->add_option("--hidden", hidden, "Student hidden size");
  dist->add_option("--out", out, "Student policy file")->required();
  dist->add_option("--curve", curve, "Learning-curve CSV (default: next to --out)");

  auto* exp = app.add_subcommand("export", "Re-export a student policy");
  std::string checkpoint, format = "bin";
  common.add_to(exp);
  exp->add_option("--checkpoint", checkpoint, "Student policy file")->required()->check(CLI::ExistingFile);
  exp->add_option("--out", out, "Output path")->required();
  exp->add_option("--format", format, "bin | json | c-header")->check(CLI::IsMember({"bin", "json", "c-header"}));

  auto* infer = app.add_subcommand("infer", "Run a policy over observation rows");
  std::string policy, obs_csv;
  common.add_to(infer);
  infer->add_option("--policy", policy, "Student policy file")->required()->check(CLI::ExistingFile);
  infer->add_option("--obs-csv", obs_csv, "CSV with 22 observation values per row; blank line resets")->required()->check(CLI::ExistingFile);
  infer->add_option("--out", out, "Actions CSV")->required();

  auto* probe = app.add_subcommand("probe", "Linear probe of hidden states for thrust-to-weight");
  std::string fit_out;
  common.add_to(probe);
  probe->add_option("--policy", policy, "Student policy file")->required()->check(CLI::ExistingFile);
  probe->add_option("--fleet", fleet, "Fleet JSON with sample traces")->required();
  probe->add_option("--out", out, "Probe rows CSV")->required();
  probe->add_option("--fit-out", fit_out, "Probe fit JSON (default: next to --out)");

  std::size_t index = 0;
  auto* fig8 = app.add_subcommand("eval-fig8", "Figure-eight tracking");
  int loops = 0;
  double period = 0.0;
  common.add_to(fig8);
  fig8->add_option("--policy", policy, "Student policy file")->required()->check(CLI::ExistingFile);
  fig8->add_option("--fleet", fleet, "Fleet JSON")->required();
  fig8->add_option("--index", index, "Fleet index");
  fig8->add_option("--loops", loops, "Consecutive loops");
  fig8->add_option("--period", period, "Loop period [s]");
  fig8->add_option("--out", out, "Episode CSV")->required();

  auto* activate = app.add_subcommand("activate", "Mid-air activation with a fresh hidden state");
  std::optional<double> speed;
  common.add_to(activate);
  activate->add_option("--policy", policy, "Student policy file")->required()->check(CLI::ExistingFile);
  activate->add_option("--fleet", fleet, "Fleet JSON")->required();
  activate->add_option("--index", index, "Fleet index");
  activate->add_option("--speed", speed, "Initial speed [m/s]");
  activate->add_option("--out", out, "Episode CSV")->required();

  auto* disturb = app.add_subcommand("disturb", "Inject a disturbance during hover");
  std::string kind;
  std::vector<double> value;
  int motor = 0;
  double at = 2.0, duration = 10.0;
  common.add_to(disturb);
  disturb->add_option("--policy", policy, "Student policy file")->required()->check(CLI::ExistingFile);
  disturb->add_option("--fleet", fleet, "Fleet JSON")->required();
  disturb->add_option("--index", index, "Fleet index");
  disturb->add_option("--kind", kind, "impulse | payload | prop_swap")->required();
  disturb->add_option("--value", value, "Impulse dv (3 values), payload kg, or thrust scale")->required()->delimiter(',');
  disturb->add_option("--motor", motor, "Motor index for prop_swap");
  disturb->add_option("--at", at, "Injection time [s]");
  disturb->add_option("--duration", duration, "Run length [s]");
  disturb->add_option("--out", out, "Episode CSV")->required();

  auto* delay = app.add_subcommand("delay-study", "Hover with delayed velocity feedback");
  std::vector<double> delays;
  bool mitigation = false;
  common.add_to(delay);
  delay->add_option("--policy", policy, "Student policy file")->required()->check(CLI::ExistingFile);
  delay->add_option("--fleet", fleet, "Fleet JSON")->required();
  delay->add_option("--index", index, "Fleet index");
  delay->add_option("--delays", delays, "Delays [s]")->delimiter(',');
  delay->add_flag("--mitigation", mitigation, "Also run with the accelerometer filter");
  delay->add_option("--out", out, "Metrics CSV")->required();

  auto* scaling = app.add_subcommand("scaling", "Hidden size x teacher count sweep");
  std::vector<int> hidden_sizes, counts;
  int seeds = 0;
  common.add_to(scaling);
  scaling->add_option("--fleet", fleet, "Fleet JSON")->required();
  scaling->add_option("--teachers", teachers, "Teacher directory")->required();
  scaling->add_option("--hidden", hidden_sizes, "Hidden sizes")->delimiter(',');
  scaling->add_option("--counts", counts, "Teacher counts")->delimiter(',');
  scaling->add_option("--seeds", seeds, "Seeds per cell");
  scaling->add_option("--epochs", epochs, "Distillation epochs per cell");
  scaling->add_option("--out", out, "Sweep CSV")->required();

  auto* traj = app.add_subcommand("traj", "Generate a reference trajectory");
  double traj_duration = 20.0;
  kind = "langevin";
  common.add_to(traj);
  traj->add_option("--kind", kind, "null | langevin | fig8");
  traj->add_option("--duration", traj_duration, "Seconds");
  traj->add_option("--out", out, "Trajectory CSV")->required();

  auto* serve = app.add_subcommand("serve", "Live session over a websocket");
  std::string address = "127.0.0.1", probe_fit;
  unsigned short port = 8765;
  double pace = 1.0;
  int decimation = 1;
  common.add_to(serve);
  serve->add_option("--policy", policy, "Student policy file")->required()->check(CLI::ExistingFile);
  serve->add_option("--fleet", fleet, "Fleet JSON")->required();
  serve->add_option("--index", index, "Initial fleet index");
  serve->add_option("--address", address, "Bind address");
  serve->add_option("--port", port, "TCP port (0 picks one)");
  serve->add_option("--speed", pace, "Simulated seconds per wall second; 0 runs unpaced");
  serve->add_option("--decimation", decimation, "Send every n-th step");
  serve->add_option("--probe", probe_fit, "Probe fit JSON for the live thrust-to-weight estimate");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sample) return cmd_sample(common, n, out);
    if (*pretrain) return cmd_pretrain(common, fleet, out, steps, workers, only);
    if (*dist) return cmd_distill(common, fleet, teachers, epochs, holdout, teacher_count, hidden, out, curve);
    if (*exp) return cmd_export(checkpoint, out, format);
    if (*infer) return cmd_infer(policy, obs_csv, out);
    if (*probe) return cmd_probe(common, policy, fleet, out, fit_out);
    if (*fig8) return cmd_eval_fig8(common, policy, fleet, index, loops, period, out);
    if (*activate) return cmd_activate(common, policy, fleet, index, speed, out);
    if (*disturb) return cmd_disturb(common, policy, fleet, index, kind, value, motor, at, duration, out);
    if (*delay) return cmd_delay(common, policy, fleet, index, delays, mitigation, out);
    if (*scaling) return cmd_scaling(common, fleet, teachers, hidden_sizes, counts, seeds, epochs, out);
    if (*traj) return cmd_traj(common, kind, traj_duration, out);
    if (*serve) return cmd_serve(common, policy, fleet, index, address, port, pace, decimation, probe_fit);
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
