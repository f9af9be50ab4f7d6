// SPDX-License-Identifier: Apache-2.0
//
// Recurrent student policy: dense tanh encoder -> gated recurrent unit ->
// dense tanh head mapped affinely to [0, 1]. All parameters live in a flat
// vector in the following order (every matrix column-major):
//
//   encoder weight  H x obs      encoder bias  H
//   gru input weight  3H x H     gru hidden weight  3H x H
//   gru input bias  3H           gru hidden bias  3H
//   initial hidden  H
//   head weight  act x H         head bias  act
//
// Gate blocks inside the 3H rows are ordered (reset, update, candidate):
//   r  = sigmoid(Wx_r x + bx_r + Wh_r h + bh_r)
//   z  = sigmoid(Wx_z x + bx_z + Wh_z h + bh_z)
//   n  = tanh(Wx_n x + bx_n + r * (Wh_n h + bh_n))
//   h' = (1 - z) * n + z * h
#pragma once

#include "raptor/env.hpp"
#include "raptor/nn.hpp"
#include "raptor/rng.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace raptor {

/// Number of trainable parameters for hidden size H.
constexpr std::size_t param_count(std::size_t hidden, std::size_t obs_dim = kObsDim, std::size_t act_dim = kActionDim) {
  const std::size_t h = hidden;
  return obs_dim * h + h                       // encoder
         + 2 * 3 * h * h + 2 * 3 * h + h       // recurrent, incl. initial hidden
         + h * act_dim + act_dim;              // head
}

/// Floating-point operations of one inference step:
///   2 * (multiply-accumulates in all matrix products)
///   + bias additions (H + 6H + act)
///   + encoder tanh (H) + gate sums (3H) + sigmoids (2H) + reset product (H)
///     + candidate tanh (H) + blend (4H)
///   + head tanh (act) + affine map to [0,1] (2 act)
constexpr std::size_t flop_count(std::size_t hidden, std::size_t obs_dim = kObsDim, std::size_t act_dim = kActionDim) {
  const std::size_t h = hidden;
  const std::size_t matmul = 2 * (obs_dim * h + 6 * h * h + h * act_dim);
  const std::size_t bias = 7 * h + act_dim;
  const std::size_t elementwise = 12 * h + 3 * act_dim;
  return matmul + bias + elementwise;
}

class PolicyLoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename S>
class PolicyGRU {
 public:
  using Mat = nn::Mat<S>;
  using Vec = nn::Vec<S>;

  PolicyGRU() : PolicyGRU(16) {}

  explicit PolicyGRU(int hidden, int obs_dim = kObsDim, int act_dim = kActionDim)
      : hidden_(hidden), obs_dim_(obs_dim), act_dim_(act_dim) {
    if (hidden < 1 || obs_dim < 1 || act_dim < 1) throw std::invalid_argument("PolicyGRU dimensions must be positive");
    const auto h = static_cast<std::size_t>(hidden);
    std::size_t o = 0;
    off_.enc_w = o; o += h * static_cast<std::size_t>(obs_dim);
    off_.enc_b = o; o += h;
    off_.wx = o; o += 3 * h * h;
    off_.wh = o; o += 3 * h * h;
    off_.bx = o; o += 3 * h;
    off_.bh = o; o += 3 * h;
    off_.h0 = o; o += h;
    off_.out_w = o; o += static_cast<std::size_t>(act_dim) * h;
    off_.out_b = o; o += static_cast<std::size_t>(act_dim);
    params_ = Vec::Zero(static_cast<Eigen::Index>(o));
  }

  /// Fan-in scaled uniform weights; biases and the initial hidden state start at zero.
  void init(Rng& rng) {
    params_.setZero();
    auto fill = [&](std::size_t off, std::size_t n, int fan_in) {
      std::uniform_real_distribution<double> d(-1.0 / std::sqrt(fan_in), 1.0 / std::sqrt(fan_in));
      for (std::size_t i = 0; i < n; ++i) params_[static_cast<Eigen::Index>(off + i)] = static_cast<S>(d(rng));
    };
    const auto h = static_cast<std::size_t>(hidden_);
    fill(off_.enc_w, h * static_cast<std::size_t>(obs_dim_), obs_dim_);
    fill(off_.wx, 3 * h * h, hidden_);
    fill(off_.wh, 3 * h * h, hidden_);
    fill(off_.out_w, static_cast<std::size_t>(act_dim_) * h, hidden_);
  }

  int hidden() const { return hidden_; }
  int obs_dim() const { return obs_dim_; }
  int act_dim() const { return act_dim_; }
  std::size_t num_params() const { return static_cast<std::size_t>(params_.size()); }
  Vec& params() { return params_; }
  const Vec& params() const { return params_; }

  nn::ConstMatMap<S> enc_w() const { return cmat(off_.enc_w, hidden_, obs_dim_); }
  nn::ConstVecMap<S> enc_b() const { return cvec(off_.enc_b, hidden_); }
  nn::ConstMatMap<S> wx() const { return cmat(off_.wx, 3 * hidden_, hidden_); }
  nn::ConstMatMap<S> wh() const { return cmat(off_.wh, 3 * hidden_, hidden_); }
  nn::ConstVecMap<S> bx() const { return cvec(off_.bx, 3 * hidden_); }
  nn::ConstVecMap<S> bh() const { return cvec(off_.bh, 3 * hidden_); }
  nn::ConstVecMap<S> initial_hidden() const { return cvec(off_.h0, hidden_); }
  nn::ConstMatMap<S> out_w() const { return cmat(off_.out_w, act_dim_, hidden_); }
  nn::ConstVecMap<S> out_b() const { return cvec(off_.out_b, act_dim_); }

  /// Initial hidden state for `batch` parallel sequences.
  Mat initial_state(Eigen::Index batch = 1) const { return initial_hidden().replicate(1, batch); }

  /// Intermediate values of one step, kept for backpropagation.
  struct StepCache {
    Mat obs, x, h_prev, r, z, n, hn_lin, h, y;
  };

  /// One step for a batch of sequences (one per column). Returns the action
  /// in [0,1] and writes the next hidden state to `h_next`.
  Mat step(const Mat& obs, const Mat& h_prev, Mat& h_next, StepCache* cache = nullptr) const {
    const Eigen::Index H = hidden_;
    Mat x = enc_w() * obs;
    x.colwise() += enc_b();
    x = x.array().tanh().matrix();

    Mat gx = wx() * x;
    gx.colwise() += bx();
    Mat gh = wh() * h_prev;
    gh.colwise() += bh();

    const Mat r = sigmoid(gx.topRows(H) + gh.topRows(H));
    const Mat z = sigmoid(gx.middleRows(H, H) + gh.middleRows(H, H));
    const Mat hn_lin = gh.bottomRows(H);
    const Mat n = (gx.bottomRows(H) + r.cwiseProduct(hn_lin)).array().tanh().matrix();
    h_next = ((S(1) - z.array()) * n.array() + z.array() * h_prev.array()).matrix();

    Mat y = out_w() * h_next;
    y.colwise() += out_b();
    y = y.array().tanh().matrix();
    if (cache) {
      cache->obs = obs;
      cache->x = x;
      cache->h_prev = h_prev;
      cache->r = r;
      cache->z = z;
      cache->n = n;
      cache->hn_lin = hn_lin;
      cache->h = h_next;
      cache->y = y;
    }
    return ((y.array() + S(1)) * S(0.5)).matrix();
  }

  /// Backward through one step. `d_action` is dL/d(action), `dh` carries
  /// dL/d(h_next) in and dL/d(h_prev) out. Parameter gradients accumulate into `grad`.
  void step_backward(const StepCache& c, const Mat& d_action, Mat& dh, Vec& grad) const {
    const Eigen::Index H = hidden_;
    const Mat dy = (d_action.array() * S(0.5) * (S(1) - c.y.array().square())).matrix();
    mat(grad, off_.out_w, act_dim_, hidden_).noalias() += dy * c.h.transpose();
    vec(grad, off_.out_b, act_dim_) += dy.rowwise().sum();
    dh.noalias() += out_w().transpose() * dy;

    const Mat dn = (dh.array() * (S(1) - c.z.array())).matrix();
    const Mat dz = (dh.array() * (c.h_prev.array() - c.n.array())).matrix();
    Mat dh_prev = (dh.array() * c.z.array()).matrix();

    const Mat da_n = (dn.array() * (S(1) - c.n.array().square())).matrix();
    const Mat dr = (da_n.array() * c.hn_lin.array()).matrix();
    const Mat da_r = (dr.array() * c.r.array() * (S(1) - c.r.array())).matrix();
    const Mat da_z = (dz.array() * c.z.array() * (S(1) - c.z.array())).matrix();

    Mat gx(3 * H, dh.cols()), gh(3 * H, dh.cols());
    gx.topRows(H) = da_r;
    gx.middleRows(H, H) = da_z;
    gx.bottomRows(H) = da_n;
    gh.topRows(H) = da_r;
    gh.middleRows(H, H) = da_z;
    gh.bottomRows(H) = (da_n.array() * c.r.array()).matrix();

    mat(grad, off_.wx, 3 * hidden_, hidden_).noalias() += gx * c.x.transpose();
    vec(grad, off_.bx, 3 * hidden_) += gx.rowwise().sum();
    mat(grad, off_.wh, 3 * hidden_, hidden_).noalias() += gh * c.h_prev.transpose();
    vec(grad, off_.bh, 3 * hidden_) += gh.rowwise().sum();

    const Mat dx = wx().transpose() * gx;
    dh_prev.noalias() += wh().transpose() * gh;
    const Mat dpre = (dx.array() * (S(1) - c.x.array().square())).matrix();
    mat(grad, off_.enc_w, hidden_, obs_dim_).noalias() += dpre * c.obs.transpose();
    vec(grad, off_.enc_b, hidden_) += dpre.rowwise().sum();
    dh = std::move(dh_prev);
  }

  /// Accumulates dL/d(initial hidden) from the gradient at an episode start.
  void initial_hidden_backward(const Mat& dh0, Vec& grad) const { vec(grad, off_.h0, hidden_) += dh0.rowwise().sum(); }

  template <typename T>
  PolicyGRU<T> cast() const {
    PolicyGRU<T> out(hidden_, obs_dim_, act_dim_);
    out.params() = params_.template cast<T>();
    return out;
  }

 private:
  struct Offsets {
    std::size_t enc_w, enc_b, wx, wh, bx, bh, h0, out_w, out_b;
  };

  static Mat sigmoid(const Mat& a) { return (S(1) / (S(1) + (-a.array()).exp())).matrix(); }

  nn::ConstMatMap<S> cmat(std::size_t off, int rows, int cols) const {
    return nn::ConstMatMap<S>(params_.data() + off, rows, cols);
  }
  nn::ConstVecMap<S> cvec(std::size_t off, int n) const { return nn::ConstVecMap<S>(params_.data() + off, n); }
  static nn::MatMap<S> mat(Vec& g, std::size_t off, int rows, int cols) {
    return nn::MatMap<S>(g.data() + off, rows, cols);
  }
  static nn::VecMap<S> vec(Vec& g, std::size_t off, int n) { return nn::VecMap<S>(g.data() + off, n); }

  int hidden_;
  int obs_dim_;
  int act_dim_;
  Offsets off_{};
  Vec params_;
};

using StudentPolicy = PolicyGRU<float>;

/// Stateful single-vehicle wrapper around a shared policy.
template <typename S>
class PolicyRunner {
 public:
  explicit PolicyRunner(const PolicyGRU<S>& policy) : policy_(&policy), h_(policy.initial_state()) {}

  void reset() { h_ = policy_->initial_state(); }

  Motor4 act(const Observation& obs) {
    if (!obs.allFinite()) throw std::invalid_argument("non-finite observation");
    nn::Mat<S> next;
    const nn::Mat<S> a = policy_->step(obs.cast<S>(), h_, next);
    h_ = std::move(next);
    Motor4 m{};
    for (int i = 0; i < kActionDim; ++i) m[static_cast<std::size_t>(i)] = static_cast<double>(a(i, 0));
    return m;
  }

  const nn::Mat<S>& hidden() const { return h_; }
  std::vector<double> hidden_vector() const {
    std::vector<double> v(static_cast<std::size_t>(h_.rows()));
    for (Eigen::Index i = 0; i < h_.rows(); ++i) v[static_cast<std::size_t>(i)] = static_cast<double>(h_(i, 0));
    return v;
  }

 private:
  const PolicyGRU<S>* policy_;
  nn::Mat<S> h_;
};

// Portable export: all integers and floats little-endian.
//   bytes 0..7   magic "RPTRGRU\0"
//   u32          format version (1)
//   u32          hidden size H
//   u32          observation dimension
//   u32          action dimension
//   f32 x N      parameter blocks in the order documented at the top of this
//                file, each matrix written row-major
inline constexpr char kPolicyMagic[8] = {'R', 'P', 'T', 'R', 'G', 'R', 'U', '\0'};
inline constexpr std::uint32_t kPolicyFormatVersion = 1;
inline constexpr std::size_t kPolicyHeaderBytes = 8 + 4 * 4;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, sizeof bits);
  put_u32(out, bits);
}

inline std::uint32_t get_u32(const std::string& in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

inline float get_f32(const std::string& in, std::size_t pos) {
  const std::uint32_t bits = get_u32(in, pos);
  float f;
  std::memcpy(&f, &bits, sizeof f);
  return f;
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace detail

namespace detail {

struct ParamBlock {
  std::size_t offset;
  std::size_t rows;
  std::size_t cols;  // 1 for vectors
};

/// Parameter blocks in file order. Matrices are stored row-major in files.
inline std::vector<ParamBlock> policy_blocks(std::size_t h, std::size_t obs, std::size_t act) {
  std::vector<ParamBlock> b;
  std::size_t o = 0;
  auto add = [&](std::size_t rows, std::size_t cols) {
    b.push_back({o, rows, cols});
    o += rows * cols;
  };
  add(h, obs);
  add(h, 1);
  add(3 * h, h);
  add(3 * h, h);
  add(3 * h, 1);
  add(3 * h, 1);
  add(h, 1);
  add(act, h);
  add(act, 1);
  return b;
}

}  // namespace detail

inline std::string serialize_policy(const StudentPolicy& p) {
  std::string out(kPolicyMagic, kPolicyMagic + 8);
  detail::put_u32(out, kPolicyFormatVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(p.hidden()));
  detail::put_u32(out, static_cast<std::uint32_t>(p.obs_dim()));
  detail::put_u32(out, static_cast<std::uint32_t>(p.act_dim()));
  for (const auto& blk : detail::policy_blocks(p.hidden(), p.obs_dim(), p.act_dim()))
    for (std::size_t r = 0; r < blk.rows; ++r)
      for (std::size_t c = 0; c < blk.cols; ++c)
        detail::put_f32(out, p.params()[static_cast<Eigen::Index>(blk.offset + c * blk.rows + r)]);
  return out;
}

inline StudentPolicy deserialize_policy(const std::string& bytes) {
  if (bytes.size() < kPolicyHeaderBytes) throw PolicyLoadError("policy file truncated (header)");
  if (std::memcmp(bytes.data(), kPolicyMagic, 8) != 0) throw PolicyLoadError("bad policy magic");
  if (detail::get_u32(bytes, 8) != kPolicyFormatVersion) throw PolicyLoadError("unsupported policy format version");
  const auto hidden = detail::get_u32(bytes, 12);
  const auto obs = detail::get_u32(bytes, 16);
  const auto act = detail::get_u32(bytes, 20);
  if (hidden == 0 || obs == 0 || act == 0 || hidden > 4096 || obs > 4096 || act > 4096)
    throw PolicyLoadError("implausible policy shape");
  const std::size_t n = param_count(hidden, obs, act);
  if (bytes.size() != kPolicyHeaderBytes + 4 * n) throw PolicyLoadError("policy file size does not match its header");
  StudentPolicy p(static_cast<int>(hidden), static_cast<int>(obs), static_cast<int>(act));
  std::size_t pos = kPolicyHeaderBytes;
  for (const auto& blk : detail::policy_blocks(hidden, obs, act))
    for (std::size_t r = 0; r < blk.rows; ++r)
      for (std::size_t c = 0; c < blk.cols; ++c, pos += 4)
        p.params()[static_cast<Eigen::Index>(blk.offset + c * blk.rows + r)] = detail::get_f32(bytes, pos);
  return p;
}

inline void export_policy(const StudentPolicy& p, const std::string& path) { detail::write_file(path, serialize_policy(p)); }

inline StudentPolicy load_policy(const std::string& path) { return deserialize_policy(detail::read_file(path)); }

}  // namespace raptor
