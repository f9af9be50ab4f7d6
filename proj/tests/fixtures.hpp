// SPDX-License-Identifier: Apache-2.0
//
// Hand-built policies with known behavior.
#pragma once

#include "raptor/distill.hpp"

namespace fixture {

/// Teacher whose deterministic action is always `u` on every motor.
inline raptor::TeacherPolicy constant_teacher(double u) {
  raptor::nn::Mlp<float> net({raptor::kTeacherObsDim, 2 * raptor::kActionDim}, raptor::nn::Activation::identity,
                             raptor::nn::Activation::identity);
  net.params().setZero();
  const auto bias = static_cast<Eigen::Index>(raptor::kTeacherObsDim * 2 * raptor::kActionDim);
  for (int i = 0; i < raptor::kActionDim; ++i) net.params()[bias + i] = static_cast<float>(std::atanh(2.0 * u - 1.0));
  return raptor::TeacherPolicy(net);
}

/// Student that ignores its input and always commands `u`.
inline raptor::StudentPolicy constant_student(double u, int hidden = 4) {
  raptor::StudentPolicy p(hidden);
  p.params().setZero();
  const auto n = static_cast<Eigen::Index>(p.num_params());
  for (int i = 0; i < raptor::kActionDim; ++i) p.params()[n - raptor::kActionDim + i] = static_cast<float>(std::atanh(2.0 * u - 1.0));
  return p;
}

}  // namespace fixture
