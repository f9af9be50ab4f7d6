// SPDX-License-Identifier: Apache-2.0
//
// Sweep over student hidden size and teacher count.
#pragma once

#include "raptor/distill.hpp"
#include "raptor/evaluation.hpp"

#include <string>
#include <vector>

namespace raptor {

struct ScalingRow {
  int hidden = 0;
  int teachers = 0;
  int seed_index = 0;
  std::size_t params = 0;
  std::size_t flops = 0;
  double mean_episode_length = 0.0;
  double full_length_fraction = 0.0;
  std::string fault;  // empty on success
};

struct ScalingOptions {
  std::vector<int> hidden_sizes{16};
  std::vector<int> teacher_counts{4};
  int seeds = 1;
  int eval_episodes = 16;
  std::uint64_t eval_seed = 0x5ca1e;
};

/// Seed of one sweep cell; a cell rerun alone reproduces its row.
inline std::uint64_t scaling_cell_seed(std::uint64_t seed, int hidden, int teachers, int seed_index) {
  return derive_seed(derive_seed(derive_seed(seed, static_cast<std::uint64_t>(hidden)), static_cast<std::uint64_t>(teachers)),
                     static_cast<std::uint64_t>(seed_index));
}

/// Trains one student per (hidden size, teacher count, seed) cell on the first
/// `teachers` bindings and scores it on the held-out quadrotors.
inline ScalingRow scaling_cell(const std::vector<TeacherBinding>& bindings, const std::vector<QuadParams>& holdout,
                               int hidden, int teachers, int seed_index, DistillConfig cfg, std::uint64_t seed,
                               const ScalingOptions& opts, const EnvConfig& env_cfg = {}) {
  ScalingRow row;
  row.hidden = hidden;
  row.teachers = teachers;
  row.seed_index = seed_index;
  row.params = param_count(static_cast<std::size_t>(hidden));
  row.flops = flop_count(static_cast<std::size_t>(hidden));
  try {
    if (teachers < 1 || static_cast<std::size_t>(teachers) > bindings.size())
      throw std::invalid_argument("teacher count exceeds the available teachers");
    if (holdout.empty()) throw std::invalid_argument("scaling sweep needs held-out quadrotors");
    cfg.hidden = hidden;
    cfg.eval_every = 0;
    const std::vector<TeacherBinding> subset(bindings.begin(), bindings.begin() + teachers);
    const auto result = distill(subset, cfg, scaling_cell_seed(seed, hidden, teachers, seed_index), {}, env_cfg);
    for (std::size_t q = 0; q < holdout.size(); ++q) {
      const auto ev = evaluate_student(holdout[q], result.policy, opts.eval_episodes, derive_seed(opts.eval_seed, q), env_cfg);
      row.mean_episode_length += ev.mean_episode_length / static_cast<double>(holdout.size());
      row.full_length_fraction += ev.full_length_fraction / static_cast<double>(holdout.size());
    }
  } catch (const std::exception& e) {
    row.fault = e.what();
  }
  return row;
}

inline std::vector<ScalingRow> scaling_sweep(const std::vector<TeacherBinding>& bindings,
                                             const std::vector<QuadParams>& holdout, const DistillConfig& cfg,
                                             std::uint64_t seed, const ScalingOptions& opts, const EnvConfig& env_cfg = {},
                                             const std::function<void(const ScalingRow&)>& on_row = {}) {
  std::vector<ScalingRow> rows;
  for (int h : opts.hidden_sizes)
    for (int n : opts.teacher_counts)
      for (int s = 0; s < opts.seeds; ++s) {
        rows.push_back(scaling_cell(bindings, holdout, h, n, s, cfg, seed, opts, env_cfg));
        if (on_row) on_row(rows.back());
      }
  return rows;
}

}  // namespace raptor
