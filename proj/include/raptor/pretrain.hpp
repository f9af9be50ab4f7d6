// SPDX-License-Identifier: Apache-2.0
//
// Trains one teacher per quadrotor on a pool of worker threads.
#pragma once

#include "raptor/sac.hpp"
#include "raptor/sampler.hpp"

#include <atomic>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace raptor {

struct FleetFailure {
  std::size_t index = 0;
  std::string message;
};

struct FleetTrainResult {
  // Indexed like the fleet. Runs that threw leave an empty slot; runs that
  // hit a numerical fault keep their partial checkpoint (completed == false).
  std::vector<std::optional<TeacherTrainingResult>> runs;
  std::vector<FleetFailure> failures;
};

/// Every run uses the same `seed`; runs differ only in their quadrotor, so
/// results do not depend on the worker count or scheduling.
inline FleetTrainResult pretrain_fleet(const std::vector<QuadParams>& fleet, const SacConfig& cfg,
                                       std::uint64_t seed, int workers, const EnvConfig& env_cfg = {},
                                       const std::function<void(std::size_t, const TeacherTrainingResult&)>& on_done = {}) {
  FleetTrainResult out;
  out.runs.resize(fleet.size());
  std::vector<std::optional<std::string>> errors(fleet.size());
  std::atomic<std::size_t> next{0};
  std::mutex callback_mutex;

  auto worker = [&] {
    for (std::size_t i = next++; i < fleet.size(); i = next++) {
      try {
        auto r = train_teacher(fleet[i], cfg, seed, env_cfg);
        if (!r.checkpoint.completed) errors[i] = r.checkpoint.fault;
        if (on_done) {
          std::lock_guard lock(callback_mutex);
          on_done(i, r);
        }
        out.runs[i] = std::move(r);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };

  const int n = std::max(1, std::min<int>(workers, static_cast<int>(fleet.size())));
  std::vector<std::thread> pool;
  for (int w = 1; w < n; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (std::size_t i = 0; i < fleet.size(); ++i)
    if (errors[i]) out.failures.push_back({i, *errors[i]});
  return out;
}

}  // namespace raptor
