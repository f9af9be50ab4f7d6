// SPDX-License-Identifier: Apache-2.0
//
// Minimal dense networks with hand-written backpropagation. Parameters of a
// network live in one flat vector so optimizers, target-network averaging,
// serialization and finite-difference checks all operate on a single buffer.
// Batched tensors are column-major with one sample per column.
#pragma once

#include "raptor/rng.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace raptor::nn {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using MatMap = Eigen::Map<Mat<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const Mat<S>>;
template <typename S>
using VecMap = Eigen::Map<Vec<S>>;
template <typename S>
using ConstVecMap = Eigen::Map<const Vec<S>>;

enum class Activation { identity, relu, tanh };

template <typename Derived>
void activate_inplace(Eigen::MatrixBase<Derived>& x, Activation act) {
  using S = typename Derived::Scalar;
  switch (act) {
    case Activation::identity:
      break;
    case Activation::relu:
      x = x.cwiseMax(S(0));
      break;
    case Activation::tanh:
      x = x.array().tanh().matrix();
      break;
  }
}

/// Multiplies `grad` in place by the activation derivative, expressed in
/// terms of the activation output `y`.
template <typename S>
void activation_backward(Mat<S>& grad, const Mat<S>& y, Activation act) {
  switch (act) {
    case Activation::identity:
      break;
    case Activation::relu:
      grad = (y.array() > S(0)).select(grad, S(0));
      break;
    case Activation::tanh:
      grad.array() *= (S(1) - y.array().square());
      break;
  }
}

struct LayerShape {
  int in = 0;
  int out = 0;
  Activation act = Activation::identity;
  std::size_t weight_offset = 0;  // out x in, column-major
  std::size_t bias_offset = 0;
};

/// Fully connected network.
template <typename S>
class Mlp {
 public:
  struct Cache {
    std::vector<Mat<S>> activations;  // activations[0] = input, activations[k+1] = output of layer k
  };

  Mlp() = default;

  Mlp(const std::vector<int>& sizes, Activation hidden, Activation output) {
    if (sizes.size() < 2) throw std::invalid_argument("Mlp needs at least input and output sizes");
    std::size_t offset = 0;
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
      LayerShape l;
      l.in = sizes[i];
      l.out = sizes[i + 1];
      l.act = i + 2 == sizes.size() ? output : hidden;
      l.weight_offset = offset;
      offset += static_cast<std::size_t>(l.in) * l.out;
      l.bias_offset = offset;
      offset += static_cast<std::size_t>(l.out);
      layers_.push_back(l);
    }
    params_ = Vec<S>::Zero(static_cast<Eigen::Index>(offset));
  }

  /// Fan-in scaled uniform initialization, U(-1/sqrt(in), 1/sqrt(in)).
  void init(Rng& rng) {
    for (const auto& l : layers_) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(l.in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (std::size_t i = 0; i < static_cast<std::size_t>(l.in) * l.out; ++i)
        params_[static_cast<Eigen::Index>(l.weight_offset + i)] = static_cast<S>(dist(rng));
      for (int i = 0; i < l.out; ++i) params_[static_cast<Eigen::Index>(l.bias_offset + i)] = static_cast<S>(dist(rng));
    }
  }

  int input_dim() const { return layers_.front().in; }
  int output_dim() const { return layers_.back().out; }
  const std::vector<LayerShape>& layers() const { return layers_; }
  std::size_t num_params() const { return static_cast<std::size_t>(params_.size()); }
  Vec<S>& params() { return params_; }
  const Vec<S>& params() const { return params_; }

  ConstMatMap<S> weight(std::size_t k) const {
    const auto& l = layers_[k];
    return ConstMatMap<S>(params_.data() + l.weight_offset, l.out, l.in);
  }
  ConstVecMap<S> bias(std::size_t k) const {
    const auto& l = layers_[k];
    return ConstVecMap<S>(params_.data() + l.bias_offset, l.out);
  }

  Mat<S> forward(const Mat<S>& x, Cache* cache = nullptr) const {
    if (cache) {
      cache->activations.resize(layers_.size() + 1);
      cache->activations[0] = x;
    }
    Mat<S> h = x;
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      Mat<S> z = weight(k) * h;
      z.colwise() += bias(k);
      activate_inplace(z, layers_[k].act);
      h = std::move(z);
      if (cache) cache->activations[k + 1] = h;
    }
    return h;
  }

  /// Backpropagates dL/d(output) through the cached forward pass. Parameter
  /// gradients are accumulated into `grad` (same layout as params()); the
  /// gradient with respect to the input is returned.
  Mat<S> backward(const Cache& cache, const Mat<S>& d_out, Vec<S>* grad) const {
    Mat<S> d = d_out;
    for (std::size_t k = layers_.size(); k-- > 0;) {
      const auto& l = layers_[k];
      activation_backward<S>(d, cache.activations[k + 1], l.act);
      if (grad) {
        MatMap<S>(grad->data() + l.weight_offset, l.out, l.in).noalias() += d * cache.activations[k].transpose();
        VecMap<S>(grad->data() + l.bias_offset, l.out) += d.rowwise().sum();
      }
      Mat<S> d_in = weight(k).transpose() * d;
      d = std::move(d_in);
    }
    return d;
  }

  template <typename T>
  Mlp<T> cast() const {
    Mlp<T> out;
    out.layers_ = layers_;
    out.params_ = params_.template cast<T>();
    return out;
  }

 private:
  template <typename>
  friend class Mlp;

  std::vector<LayerShape> layers_;
  Vec<S> params_;
};

/// Adaptive-moment gradient descent over one flat parameter vector.
template <typename S>
class Adam {
 public:
  Adam() = default;
  Adam(std::size_t n, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(Vec<S>::Zero(static_cast<Eigen::Index>(n))),
        v_(Vec<S>::Zero(static_cast<Eigen::Index>(n))) {}

  void step(Vec<S>& params, const Vec<S>& grad) {
    ++t_;
    m_ = S(beta1_) * m_ + S(1 - beta1_) * grad;
    v_ = S(beta2_) * v_ + S(1 - beta2_) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    const S step_size = static_cast<S>(lr_ * std::sqrt(c2) / c1);
    params.array() -= step_size * m_.array() / (v_.array().sqrt() + S(eps_ * std::sqrt(c2)));
  }

  long steps() const { return t_; }
  double learning_rate() const { return lr_; }

 private:
  double lr_ = 1e-3;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  Vec<S> m_;
  Vec<S> v_;
  long t_ = 0;
};

/// Scales `grad` so that its Euclidean norm does not exceed `max_norm`.
/// Returns the norm before clipping.
template <typename S>
double clip_grad_norm(Vec<S>& grad, double max_norm) {
  const double norm = static_cast<double>(grad.norm());
  if (max_norm > 0.0 && norm > max_norm) grad *= static_cast<S>(max_norm / norm);
  return norm;
}

}  // namespace raptor::nn
