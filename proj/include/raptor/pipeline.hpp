// SPDX-License-Identifier: Apache-2.0
//
// Glue shared by the command-line tool and the acceptance runner: teacher
// directory layout and the train/held-out split of a fleet.
#pragma once

#include "raptor/distill.hpp"
#include "raptor/io.hpp"
#include "raptor/sampler.hpp"

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

namespace raptor {

/// <dir>/teacher_0007.bin (+ .json sidecar, + _curve.csv).
inline std::string teacher_path(const std::string& dir, std::size_t index) {
  char name[32];
  std::snprintf(name, sizeof name, "teacher_%04zu.bin", index);
  return (std::filesystem::path(dir) / name).string();
}

/// The last `holdout` quadrotors are held out; the rest are training quadrotors.
struct FleetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> holdout;
};

inline FleetSplit split_fleet(std::size_t fleet_size, std::size_t holdout) {
  if (holdout >= fleet_size) throw std::invalid_argument("holdout must leave at least one training quadrotor");
  FleetSplit s;
  for (std::size_t i = 0; i < fleet_size; ++i) (i + holdout < fleet_size ? s.train : s.holdout).push_back(i);
  return s;
}

/// Loads the teachers for `indices`, checking each is bound to the fleet
/// entry it is paired with. Missing files are skipped unless `require_all`.
inline std::vector<TeacherBinding> load_bindings(const std::string& dir, const std::vector<SampledQuad>& fleet,
                                                 const std::vector<std::size_t>& indices, bool require_all = false) {
  std::vector<TeacherBinding> out;
  for (std::size_t i : indices) {
    const std::string path = teacher_path(dir, i);
    if (!std::filesystem::exists(path)) {
      if (require_all) throw std::runtime_error("missing teacher " + path);
      continue;
    }
    auto loaded = load_checkpoint(path);
    if (!(loaded.params == fleet.at(i).params))
      throw FormatError(path + " is bound to different quadrotor parameters than fleet entry " + std::to_string(i));
    out.push_back({loaded.params, TeacherPolicy(std::move(loaded.checkpoint.actor))});
  }
  return out;
}

inline std::vector<QuadParams> params_of(const std::vector<SampledQuad>& fleet, const std::vector<std::size_t>& indices) {
  std::vector<QuadParams> out;
  for (std::size_t i : indices) out.push_back(fleet.at(i).params);
  return out;
}

}  // namespace raptor
