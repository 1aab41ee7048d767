#pragma once
// Dynamic edge fusion: geometric baseline plus learnable semantic and
// instruction residuals, with hand-written reverse-mode gradients.

#include <cmath>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "dgnav/common.hpp"

namespace dgnav {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr int kFusionHidden = 32;

/// Two-layer perceptron In -> H (tanh) -> 1 (linear).
struct Mlp2 {
  MatrixXd w1;  // H x In
  VectorXd b1;  // H
  VectorXd w2;  // H
  double b2 = 0.0;

  static Mlp2 zeros(int in, int hidden) {
    return {MatrixXd::Zero(hidden, in), VectorXd::Zero(hidden), VectorXd::Zero(hidden), 0.0};
  }

  static Mlp2 random(int in, int hidden, Rng& rng) {
    Mlp2 m = zeros(in, hidden);
    const double s1 = 1.0 / std::sqrt(static_cast<double>(in));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (Eigen::Index i = 0; i < m.w1.size(); ++i) m.w1.data()[i] = rng.normal() * s1;
    for (Eigen::Index i = 0; i < m.w2.size(); ++i) m.w2[i] = rng.normal() * s2;
    return m;
  }

  int in_dim() const { return static_cast<int>(w1.cols()); }

  double forward(const VectorXd& x) const {
    const VectorXd h = (w1 * x + b1).array().tanh().matrix();
    return w2.dot(h) + b2;
  }
};

struct EdgeFusionParams {
  static constexpr double kGeoWeight = 1.0;  // fixed geometric baseline

  Mlp2 sem_mlp;   // [v_i; v_j] -> scalar
  Mlp2 inst_mlp;  // [v_i; W_L] -> scalar
  double omega_sem = 0.1;
  double omega_inst = 0.1;
  bool sem_enabled = true;   // ablation switches; a disabled stream has weight 0
  bool inst_enabled = true;

  static EdgeFusionParams init(int dim, Rng& rng, double omega = 0.1) {
    EdgeFusionParams p;
    p.sem_mlp = Mlp2::random(2 * dim, kFusionHidden, rng);
    p.inst_mlp = Mlp2::random(2 * dim, kFusionHidden, rng);
    p.omega_sem = omega;
    p.omega_inst = omega;
    return p;
  }

  double effective_omega_sem() const { return sem_enabled ? omega_sem : 0.0; }
  double effective_omega_inst() const { return inst_enabled ? omega_inst : 0.0; }
};

struct EdgeMatrices {
  MatrixXd e_geo;
  MatrixXd e_sem;
  MatrixXd e_inst;
  VectorXd relevance;  // w_i of the instruction stream
  MatrixXd e_dynamic;
};

/// E_sem(i, j) = MLP([v_i; v_j]) for every ordered pair, diagonal included.
inline MatrixXd semantic_edges(const MatrixXd& features, const Mlp2& mlp) {
  const auto n = features.rows();
  const auto d = features.cols();
  if (n < 1) throw Error(ErrorCode::kDimensionMismatch, "semantic_edges needs at least one node");
  if (mlp.in_dim() != 2 * d) throw Error(ErrorCode::kDimensionMismatch, "sem MLP expects 2D inputs");
  // The first layer splits over the concatenation: W1 [a; b] = W1a a + W1b b.
  const MatrixXd left = features * mlp.w1.leftCols(d).transpose();    // N x H
  const MatrixXd right = features * mlp.w1.rightCols(d).transpose();  // N x H
  MatrixXd e(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto pre = (left.row(i) + right.row(j)).transpose() + mlp.b1;
      e(i, j) = mlp.w2.dot(pre.array().tanh().matrix()) + mlp.b2;
    }
  }
  return e;
}

/// Relevance w_i = MLP([v_i; W_L]) and E_inst = w w^T.
inline std::pair<VectorXd, MatrixXd> instruction_edges(const MatrixXd& features, const VectorXd& instruction,
                                                       const Mlp2& mlp) {
  const auto n = features.rows();
  const auto d = features.cols();
  if (n < 1) throw Error(ErrorCode::kDimensionMismatch, "instruction_edges needs at least one node");
  if (instruction.size() != d || mlp.in_dim() != 2 * d)
    throw Error(ErrorCode::kDimensionMismatch, "instruction token / inst MLP dimension");
  const VectorXd shared = mlp.w1.rightCols(d) * instruction + mlp.b1;
  const MatrixXd pre = (features * mlp.w1.leftCols(d).transpose()).rowwise() + shared.transpose();
  const VectorXd w = (pre.array().tanh().matrix() * mlp.w2).array() + mlp.b2;
  return {w, w * w.transpose()};
}

/// E_dynamic = E_geo + omega_sem * E_sem + omega_inst * E_inst.
inline MatrixXd fuse(const MatrixXd& e_geo, const MatrixXd& e_sem, const MatrixXd& e_inst,
                     const EdgeFusionParams& params) {
  if (e_geo.rows() != e_geo.cols() || e_sem.rows() != e_geo.rows() || e_sem.cols() != e_geo.cols() ||
      e_inst.rows() != e_geo.rows() || e_inst.cols() != e_geo.cols())
    throw Error(ErrorCode::kDimensionMismatch, "fuse: matrices must share one N x N shape");
  if (!e_geo.allFinite() || !e_sem.allFinite() || !e_inst.allFinite())
    throw Error(ErrorCode::kNonFinite, "fuse: non-finite input");
  return EdgeFusionParams::kGeoWeight * e_geo + params.effective_omega_sem() * e_sem +
         params.effective_omega_inst() * e_inst;
}

inline EdgeMatrices compute_edges(const MatrixXd& features, const VectorXd& instruction, const MatrixXd& e_geo,
                                  const EdgeFusionParams& params) {
  EdgeMatrices m;
  m.e_geo = e_geo;
  m.e_sem = semantic_edges(features, params.sem_mlp);
  std::tie(m.relevance, m.e_inst) = instruction_edges(features, instruction, params.inst_mlp);
  m.e_dynamic = fuse(m.e_geo, m.e_sem, m.e_inst, params);
  return m;
}

// --- reverse mode -----------------------------------------------------------

/// Accumulates dL/dparams of the semantic MLP given G = dL/dE_sem.
inline void semantic_edges_backward(const MatrixXd& features, const Mlp2& mlp, const MatrixXd& grad_e, Mlp2& grad) {
  const auto n = features.rows();
  const auto d = features.cols();
  const auto h = mlp.b1.size();
  const MatrixXd left = features * mlp.w1.leftCols(d).transpose();
  const MatrixXd right = features * mlp.w1.rightCols(d).transpose();
  MatrixXd d_left = MatrixXd::Zero(n, h);
  MatrixXd d_right = MatrixXd::Zero(n, h);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double g = grad_e(i, j);
      if (g == 0.0) continue;
      const VectorXd t = ((left.row(i) + right.row(j)).transpose() + mlp.b1).array().tanh().matrix();
      grad.w2 += g * t;
      grad.b2 += g;
      const VectorXd dpre = (g * mlp.w2.array() * (1.0 - t.array().square())).matrix();
      grad.b1 += dpre;
      d_left.row(i) += dpre.transpose();
      d_right.row(j) += dpre.transpose();
    }
  }
  grad.w1.leftCols(d) += d_left.transpose() * features;
  grad.w1.rightCols(d) += d_right.transpose() * features;
}

/// Accumulates dL/dparams of the instruction MLP given G = dL/dE_inst.
inline void instruction_edges_backward(const MatrixXd& features, const VectorXd& instruction, const Mlp2& mlp,
                                       const MatrixXd& grad_e, Mlp2& grad) {
  const auto d = features.cols();
  const VectorXd shared = mlp.w1.rightCols(d) * instruction + mlp.b1;
  const MatrixXd t = ((features * mlp.w1.leftCols(d).transpose()).rowwise() + shared.transpose()).array().tanh();
  const VectorXd w = (t * mlp.w2).array() + mlp.b2;
  const VectorXd dw = (grad_e + grad_e.transpose()) * w;
  grad.w2 += t.transpose() * dw;
  grad.b2 += dw.sum();
  MatrixXd dpre = (1.0 - t.array().square()).matrix();
  dpre.array().colwise() *= dw.array();
  dpre.array().rowwise() *= mlp.w2.transpose().array();
  grad.b1 += dpre.colwise().sum().transpose();
  grad.w1.leftCols(d) += dpre.transpose() * features;
  grad.w1.rightCols(d) += dpre.colwise().sum().transpose() * instruction.transpose();
}

}  // namespace dgnav
