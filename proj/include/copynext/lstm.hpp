#pragma once

#include <random>
#include <vector>

#include <Eigen/Dense>

namespace copynext {

/// Standard LSTM cell. Gate blocks are stacked [input; forget; cell; output],
/// each of size H, so the packed weights are 4H x In and 4H x H.
template <typename Scalar>
struct LstmCell {
  using M = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using V = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  M w_x;  // 4H x In
  M w_h;  // 4H x H
  V b;    // 4H

  int hidden() const { return static_cast<int>(b.size()) / 4; }
  int input() const { return static_cast<int>(w_x.cols()); }

  static LstmCell sized(int in, int h) {
    LstmCell c;
    c.w_x = M::Zero(4 * h, in);
    c.w_h = M::Zero(4 * h, h);
    c.b = V::Zero(4 * h);
    return c;
  }

  void init(std::mt19937_64& rng, Scalar scale = Scalar(0.1)) {
    std::uniform_real_distribution<double> u(-scale, scale);
    for (auto* m : {&w_x, &w_h})
      for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = Scalar(u(rng));
    b.setZero();
  }
};

/// Activations of one LSTM step, kept for the reverse pass.
template <typename Scalar>
struct LstmStepCache {
  using V = typename LstmCell<Scalar>::V;

  V x, h_prev, c_prev;
  V gates;  // post-activation [i; f; g; o]
  V c, h, tanh_c;
};

template <typename Scalar>
LstmStepCache<Scalar> lstm_forward(const LstmCell<Scalar>& cell,
                                   const typename LstmCell<Scalar>::V& x,
                                   const typename LstmCell<Scalar>::V& h_prev,
                                   const typename LstmCell<Scalar>::V& c_prev) {
  using V = typename LstmCell<Scalar>::V;
  const int h = cell.hidden();
  LstmStepCache<Scalar> s;
  s.x = x;
  s.h_prev = h_prev;
  s.c_prev = c_prev;
  V pre = cell.w_x * x + cell.w_h * h_prev + cell.b;
  s.gates = V(4 * h);
  s.gates.segment(0, h) = (Scalar(1) / (Scalar(1) + (-pre.segment(0, h).array()).exp())).matrix();
  s.gates.segment(h, h) = (Scalar(1) / (Scalar(1) + (-pre.segment(h, h).array()).exp())).matrix();
  s.gates.segment(2 * h, h) = pre.segment(2 * h, h).array().tanh().matrix();
  s.gates.segment(3 * h, h) = (Scalar(1) / (Scalar(1) + (-pre.segment(3 * h, h).array()).exp())).matrix();
  s.c = (s.gates.segment(h, h).array() * c_prev.array() +
         s.gates.segment(0, h).array() * s.gates.segment(2 * h, h).array())
            .matrix();
  s.tanh_c = s.c.array().tanh().matrix();
  s.h = (s.gates.segment(3 * h, h).array() * s.tanh_c.array()).matrix();
  return s;
}

/// Reverse pass of one step. `dh`/`dc` are gradients flowing into this
/// step's outputs; returns gradients on (x, h_prev, c_prev) and accumulates
/// weight gradients into `grad`.
template <typename Scalar>
void lstm_backward(const LstmCell<Scalar>& cell, const LstmStepCache<Scalar>& s,
                   const typename LstmCell<Scalar>::V& dh,
                   const typename LstmCell<Scalar>::V& dc_in, LstmCell<Scalar>& grad,
                   typename LstmCell<Scalar>::V& dx,
                   typename LstmCell<Scalar>::V& dh_prev,
                   typename LstmCell<Scalar>::V& dc_prev) {
  using V = typename LstmCell<Scalar>::V;
  using A = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  const int h = cell.hidden();
  A gi = s.gates.segment(0, h).array();
  A gf = s.gates.segment(h, h).array();
  A gg = s.gates.segment(2 * h, h).array();
  A go = s.gates.segment(3 * h, h).array();
  A tc = s.tanh_c.array();

  A dc = dc_in.array() + dh.array() * go * (Scalar(1) - tc * tc);
  V dpre(4 * h);
  dpre.segment(0, h) = (dc * gg * gi * (Scalar(1) - gi)).matrix();
  dpre.segment(h, h) = (dc * s.c_prev.array() * gf * (Scalar(1) - gf)).matrix();
  dpre.segment(2 * h, h) = (dc * gi * (Scalar(1) - gg * gg)).matrix();
  dpre.segment(3 * h, h) = (dh.array() * tc * go * (Scalar(1) - go)).matrix();

  grad.w_x.noalias() += dpre * s.x.transpose();
  grad.w_h.noalias() += dpre * s.h_prev.transpose();
  grad.b += dpre;

  dx.noalias() = cell.w_x.transpose() * dpre;
  dh_prev.noalias() = cell.w_h.transpose() * dpre;
  dc_prev = (dc * gf).matrix();
}

}  // namespace copynext
