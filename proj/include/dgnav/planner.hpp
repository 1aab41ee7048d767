#pragma once
// Dynamic graph transformer planner: GASA layers with an additive E_dynamic
// attention bias, goal scoring over ghosts plus a virtual stop node, graph
// path extraction, imitation training and the oracle teacher.
//
// Matrix conventions: node states are rows (N x D); projections multiply on
// the right (H * W). The stop node is always the last row.

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "dgnav/common.hpp"
#include "dgnav/fusion.hpp"
#include "dgnav/topomap.hpp"
#include "dgnav/world.hpp"

namespace dgnav {

struct ModelConfig {
  int dim = kDefaultFeatureDim;
  int layers = 2;
  int heads = 4;
  bool node_gating = false;

  int head_dim() const { return dim / heads; }
};

struct LayerWeights {
  MatrixXd wq, wk, wv, wo;  // D x D
  VectorXd ln_scale, ln_shift;
  MatrixXd ffn_w1;  // D x 4D
  VectorXd ffn_b1;
  MatrixXd ffn_w2;  // 4D x D
  VectorXd ffn_b2;
};

struct PlannerModel {
  ModelConfig config;
  std::vector<LayerWeights> layers;
  VectorXd score_w;
  double score_b = 0.0;
  VectorXd stop_embedding;
  VectorXd gate_w;
  double gate_b = 0.0;
  EdgeFusionParams fusion;

  static PlannerModel zeros(const ModelConfig& cfg) {
    if (cfg.dim <= 0 || cfg.heads <= 0 || cfg.dim % cfg.heads != 0 || cfg.layers < 1)
      throw Error(ErrorCode::kConfig, "model: dim must be a positive multiple of heads, layers >= 1");
    const int d = cfg.dim;
    PlannerModel m;
    m.config = cfg;
    for (int l = 0; l < cfg.layers; ++l) {
      LayerWeights w;
      w.wq = w.wk = w.wv = w.wo = MatrixXd::Zero(d, d);
      w.ln_scale = VectorXd::Zero(d);
      w.ln_shift = VectorXd::Zero(d);
      w.ffn_w1 = MatrixXd::Zero(d, 4 * d);
      w.ffn_b1 = VectorXd::Zero(4 * d);
      w.ffn_w2 = MatrixXd::Zero(4 * d, d);
      w.ffn_b2 = VectorXd::Zero(d);
      m.layers.push_back(std::move(w));
    }
    m.score_w = VectorXd::Zero(d);
    m.stop_embedding = VectorXd::Zero(d);
    m.gate_w = VectorXd::Zero(d);
    m.fusion.sem_mlp = Mlp2::zeros(2 * d, kFusionHidden);
    m.fusion.inst_mlp = Mlp2::zeros(2 * d, kFusionHidden);
    m.fusion.omega_sem = 0.0;
    m.fusion.omega_inst = 0.0;
    return m;
  }

  static PlannerModel init(const ModelConfig& cfg, std::uint64_t seed, double omega = 0.1) {
    PlannerModel m = zeros(cfg);
    Rng rng(hash_combine(seed, 0x91A77E5ULL));
    const int d = cfg.dim;
    auto fill = [&rng](auto& x, double scale) {
      for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal() * scale;
    };
    const double s = 1.0 / std::sqrt(static_cast<double>(d));
    for (auto& w : m.layers) {
      fill(w.wq, s);
      fill(w.wk, s);
      fill(w.wv, s);
      fill(w.wo, s);
      w.ln_scale.setOnes();
      fill(w.ffn_w1, s);
      fill(w.ffn_w2, 0.5 / std::sqrt(4.0 * d));
    }
    fill(m.score_w, s);
    fill(m.stop_embedding, 0.5);
    fill(m.gate_w, s);
    m.fusion = EdgeFusionParams::init(d, rng, omega);
    return m;
  }

  PlannerModel zeros_like() const {
    PlannerModel g = zeros(config);
    g.fusion.sem_enabled = fusion.sem_enabled;
    g.fusion.inst_enabled = fusion.inst_enabled;
    return g;
  }
};

/// A named view of one parameter tensor. lr_scale multiplies the base rate.
struct ParamRef {
  std::string name;
  std::span<double> values;
  double lr_scale = 1.0;
};

inline constexpr double kOmegaLrScale = 10.0;

/// Every trainable tensor in a fixed order; used by the optimizer, the
/// gradient audit and checkpoints.
inline std::vector<ParamRef> parameters(PlannerModel& m) {
  std::vector<ParamRef> out;
  auto add = [&out](std::string name, auto& x, double scale = 1.0) {
    out.push_back({std::move(name), std::span<double>(x.data(), static_cast<std::size_t>(x.size())), scale});
  };
  auto add_scalar = [&out](std::string name, double& x, double scale = 1.0) {
    out.push_back({std::move(name), std::span<double>(&x, 1), scale});
  };
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    auto& w = m.layers[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    add(p + "wq", w.wq);
    add(p + "wk", w.wk);
    add(p + "wv", w.wv);
    add(p + "wo", w.wo);
    add(p + "ln_scale", w.ln_scale);
    add(p + "ln_shift", w.ln_shift);
    add(p + "ffn_w1", w.ffn_w1);
    add(p + "ffn_b1", w.ffn_b1);
    add(p + "ffn_w2", w.ffn_w2);
    add(p + "ffn_b2", w.ffn_b2);
  }
  add("score_w", m.score_w);
  add_scalar("score_b", m.score_b);
  add("stop_embedding", m.stop_embedding);
  add("gate_w", m.gate_w);
  add_scalar("gate_b", m.gate_b);
  add("fusion.sem.w1", m.fusion.sem_mlp.w1);
  add("fusion.sem.b1", m.fusion.sem_mlp.b1);
  add("fusion.sem.w2", m.fusion.sem_mlp.w2);
  add_scalar("fusion.sem.b2", m.fusion.sem_mlp.b2);
  add("fusion.inst.w1", m.fusion.inst_mlp.w1);
  add("fusion.inst.b1", m.fusion.inst_mlp.b1);
  add("fusion.inst.w2", m.fusion.inst_mlp.w2);
  add_scalar("fusion.inst.b2", m.fusion.inst_mlp.b2);
  add_scalar("fusion.omega_sem", m.fusion.omega_sem, kOmegaLrScale);
  add_scalar("fusion.omega_inst", m.fusion.omega_inst, kOmegaLrScale);
  return out;
}

// --- building blocks --------------------------------------------------------

namespace detail {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)

inline double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x))); }

inline double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + 0.044715 * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
}

inline void softmax_rows(MatrixXd& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double mx = s.row(i).maxCoeff();
    s.row(i) = (s.row(i).array() - mx).exp();
    s.row(i) /= s.row(i).sum();
  }
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace detail

/// Activations retained for the backward pass of one layer.
struct LayerCache {
  MatrixXd input;
  MatrixXd q, k, v;
  std::vector<MatrixXd> attention;  // per head, rows sum to 1
  MatrixXd heads_out;               // concatenated head outputs
  MatrixXd h_hat;                   // GASA(H, E) + H
  MatrixXd ln_xhat;
  VectorXd ln_rstd;
  MatrixXd ln_out;
  MatrixXd ffn_pre;
  MatrixXd ffn_act;
};

/// One transformer layer: multi-head attention with the same additive bias
/// on every head, residual, then pre-LN feed-forward with residual.
inline MatrixXd gasa_layer(const MatrixXd& h, const MatrixXd& bias, const LayerWeights& w, int heads,
                           LayerCache* cache = nullptr) {
  const auto n = h.rows();
  const auto d = h.cols();
  if (n < 1 || bias.rows() != n || bias.cols() != n || w.wq.rows() != d)
    throw Error(ErrorCode::kDimensionMismatch, "gasa_layer shapes");
  const auto dk = d / heads;
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
  const MatrixXd q = h * w.wq;
  const MatrixXd k = h * w.wk;
  const MatrixXd v = h * w.wv;
  MatrixXd heads_out(n, d);
  std::vector<MatrixXd> attention;
  if (cache) attention.reserve(heads);
  for (int hd = 0; hd < heads; ++hd) {
    const auto c0 = hd * dk;
    MatrixXd s = q.middleCols(c0, dk) * k.middleCols(c0, dk).transpose() * inv_sqrt_dk + bias;
    detail::softmax_rows(s);
    heads_out.middleCols(c0, dk) = s * v.middleCols(c0, dk);
    if (cache) attention.push_back(std::move(s));
  }
  MatrixXd h_hat = heads_out * w.wo + h;

  MatrixXd xhat(n, d);
  VectorXd rstd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = h_hat.row(i).mean();
    const double var = (h_hat.row(i).array() - mu).square().mean();
    rstd[i] = 1.0 / std::sqrt(var + detail::kLayerNormEps);
    xhat.row(i) = (h_hat.row(i).array() - mu) * rstd[i];
  }
  MatrixXd ln_out = (xhat.array().rowwise() * w.ln_scale.transpose().array()).rowwise() + w.ln_shift.transpose().array();
  MatrixXd pre = (ln_out * w.ffn_w1).rowwise() + w.ffn_b1.transpose();
  MatrixXd act = pre.unaryExpr([](double x) { return detail::gelu(x); });
  MatrixXd out = ((act * w.ffn_w2).rowwise() + w.ffn_b2.transpose()) + h_hat;
  if (!out.allFinite()) throw Error(ErrorCode::kNonFinite, "non-finite activation in GASA layer");
  if (cache) {
    cache->input = h;
    cache->q = q;
    cache->k = k;
    cache->v = v;
    cache->attention = std::move(attention);
    cache->heads_out = std::move(heads_out);
    cache->h_hat = std::move(h_hat);
    cache->ln_xhat = std::move(xhat);
    cache->ln_rstd = std::move(rstd);
    cache->ln_out = std::move(ln_out);
    cache->ffn_pre = std::move(pre);
    cache->ffn_act = std::move(act);
  }
  return out;
}

/// Reverse pass of gasa_layer. Accumulates weight gradients into `grad`,
/// the bias gradient into `grad_bias`, and returns dL/dH.
inline MatrixXd gasa_layer_backward(const LayerCache& c, const LayerWeights& w, int heads, const MatrixXd& grad_out,
                                    LayerWeights& grad, MatrixXd& grad_bias) {
  const auto n = c.input.rows();
  const auto d = c.input.cols();
  const auto dk = d / heads;
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));

  // FFN branch
  grad.ffn_w2 += c.ffn_act.transpose() * grad_out;
  grad.ffn_b2 += grad_out.colwise().sum().transpose();
  const MatrixXd d_act = grad_out * w.ffn_w2.transpose();
  const MatrixXd d_pre = d_act.cwiseProduct(c.ffn_pre.unaryExpr([](double x) { return detail::gelu_grad(x); }));
  grad.ffn_w1 += c.ln_out.transpose() * d_pre;
  grad.ffn_b1 += d_pre.colwise().sum().transpose();
  const MatrixXd d_ln = d_pre * w.ffn_w1.transpose();

  // LayerNorm
  grad.ln_scale += d_ln.cwiseProduct(c.ln_xhat).colwise().sum().transpose();
  grad.ln_shift += d_ln.colwise().sum().transpose();
  const MatrixXd d_xhat = d_ln.array().rowwise() * w.ln_scale.transpose().array();
  MatrixXd d_h_hat = grad_out;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m1 = d_xhat.row(i).mean();
    const double m2 = d_xhat.row(i).cwiseProduct(c.ln_xhat.row(i)).mean();
    d_h_hat.row(i) += (c.ln_rstd[i] * (d_xhat.row(i).array() - m1 - c.ln_xhat.row(i).array() * m2)).matrix();
  }

  // attention branch
  grad.wo += c.heads_out.transpose() * d_h_hat;
  const MatrixXd d_heads = d_h_hat * w.wo.transpose();
  MatrixXd d_q(n, d), d_k(n, d), d_v(n, d);
  for (int hd = 0; hd < heads; ++hd) {
    const auto c0 = hd * dk;
    const MatrixXd& p = c.attention[hd];
    const MatrixXd d_o = d_heads.middleCols(c0, dk);
    const MatrixXd d_p = d_o * c.v.middleCols(c0, dk).transpose();
    d_v.middleCols(c0, dk) = p.transpose() * d_o;
    const VectorXd row_dot = d_p.cwiseProduct(p).rowwise().sum();
    const MatrixXd d_s = p.cwiseProduct(d_p.colwise() - row_dot);
    grad_bias += d_s;
    d_q.middleCols(c0, dk) = d_s * c.k.middleCols(c0, dk) * inv_sqrt_dk;
    d_k.middleCols(c0, dk) = d_s.transpose() * c.q.middleCols(c0, dk) * inv_sqrt_dk;
  }
  grad.wq += c.input.transpose() * d_q;
  grad.wk += c.input.transpose() * d_k;
  grad.wv += c.input.transpose() * d_v;
  return d_h_hat + d_q * w.wq.transpose() + d_k * w.wk.transpose() + d_v * w.wv.transpose();
}

// --- planner forward / backward -------------------------------------------

/// Everything the planner consumes for one decision.
struct PlannerInput {
  MatrixXd features;         // N x D
  std::vector<int> node_ids;  // ascending
  std::vector<bool> ghost;    // selectable rows
  MatrixXd e_geo;             // N x N
  VectorXd instruction;       // pooled W_L
};

inline PlannerInput make_planner_input(const TopoGraph& graph, const Instruction& instruction) {
  if (graph.empty()) throw Error(ErrorCode::kInvalidArgument, "planner needs a non-empty graph");
  PlannerInput in;
  in.features = feature_matrix(graph);
  in.node_ids = graph.ids();
  for (int id : in.node_ids) in.ghost.push_back(graph.node(id).kind == NodeKind::kGhost);
  in.e_geo = geo_adjacency(graph);
  in.instruction = instruction.pooled();
  return in;
}

enum class BiasSource {
  kDynamic,        // E_geo + omega_sem E_sem + omega_inst E_inst
  kGeometricOnly,  // static planner: E_geo alone
};

struct ForwardOptions {
  BiasSource bias = BiasSource::kDynamic;
  bool drop_geo = false;  // geometric dropout: E_geo replaced by zeros
  bool keep_cache = false;
};

struct ForwardResult {
  EdgeMatrices edges;
  MatrixXd bias;  // (N+1) x (N+1), zero stop row/column
  std::vector<LayerCache> caches;
  MatrixXd hidden;  // final (N+1) x D
  VectorXd scores;  // score head output per row
  VectorXd gates;   // node gating factors (ones when gating is off)
  VectorXd logits;  // scores * gates
  std::vector<int> candidates;  // selectable rows: ghosts ascending, then stop (= N)

  int stop_row() const { return static_cast<int>(hidden.rows()) - 1; }
};

inline ForwardResult planner_forward(const PlannerModel& model, const PlannerInput& in,
                                     const ForwardOptions& opt = {}) {
  const auto n = in.features.rows();
  const auto d = in.features.cols();
  if (n < 1) throw Error(ErrorCode::kInvalidArgument, "planner needs at least one node");
  if (d != model.config.dim || in.e_geo.rows() != n || in.e_geo.cols() != n ||
      static_cast<Eigen::Index>(in.ghost.size()) != n)
    throw Error(ErrorCode::kDimensionMismatch, "planner input shapes");
  ForwardResult r;
  const MatrixXd geo = opt.drop_geo ? MatrixXd::Zero(n, n) : in.e_geo;
  if (opt.bias == BiasSource::kGeometricOnly) {
    r.edges.e_geo = geo;
    r.edges.e_dynamic = geo;
  } else {
    r.edges = compute_edges(in.features, in.instruction, geo, model.fusion);
  }
  r.bias = MatrixXd::Zero(n + 1, n + 1);
  r.bias.topLeftCorner(n, n) = r.edges.e_dynamic;

  MatrixXd h(n + 1, d);
  h.topRows(n) = in.features;
  h.row(n) = model.stop_embedding.transpose();
  if (opt.keep_cache) r.caches.resize(model.layers.size());
  for (std::size_t l = 0; l < model.layers.size(); ++l)
    h = gasa_layer(h, r.bias, model.layers[l], model.config.heads, opt.keep_cache ? &r.caches[l] : nullptr);
  r.hidden = std::move(h);
  r.scores = (r.hidden * model.score_w).array() + model.score_b;
  if (model.config.node_gating)
    r.gates = ((r.hidden * model.gate_w).array() + model.gate_b).unaryExpr([](double x) { return detail::sigmoid(x); });
  else
    r.gates = VectorXd::Ones(n + 1);
  r.logits = r.scores.cwiseProduct(r.gates);
  for (Eigen::Index i = 0; i < n; ++i)
    if (in.ghost[i]) r.candidates.push_back(static_cast<int>(i));
  r.candidates.push_back(static_cast<int>(n));
  return r;
}

struct Decision {
  bool stop = true;
  int node_id = -1;

  friend bool operator==(const Decision&, const Decision&) = default;
};

/// Argmax over ghosts and stop. Candidates are scanned ghosts-ascending then
/// stop, keeping the first maximum, so ties go to the lowest node id.
inline int select_row(const ForwardResult& r) {
  int best = r.candidates.front();
  for (int c : r.candidates)
    if (r.logits[c] > r.logits[best]) best = c;
  return best;
}

inline Decision decision_from_row(const PlannerInput& in, int row) {
  if (row >= static_cast<int>(in.node_ids.size())) return {true, -1};
  return {false, in.node_ids[row]};
}

/// Scores every node with precomputed edge matrices (E.e_dynamic is used as
/// the attention bias) and returns the decision.
inline Decision score_and_select(const PlannerModel& model, const PlannerInput& in, const EdgeMatrices& edges) {
  const auto n = in.features.rows();
  if (edges.e_dynamic.rows() != n || edges.e_dynamic.cols() != n)
    throw Error(ErrorCode::kDimensionMismatch, "edge matrices do not match the graph");
  // Reuse the forward pass with the supplied bias.
  ForwardResult r;
  r.bias = MatrixXd::Zero(n + 1, n + 1);
  r.bias.topLeftCorner(n, n) = edges.e_dynamic;
  MatrixXd h(n + 1, in.features.cols());
  h.topRows(n) = in.features;
  h.row(n) = model.stop_embedding.transpose();
  for (const auto& layer : model.layers) h = gasa_layer(h, r.bias, layer, model.config.heads);
  r.hidden = std::move(h);
  r.scores = (r.hidden * model.score_w).array() + model.score_b;
  r.gates = model.config.node_gating
                ? VectorXd(((r.hidden * model.gate_w).array() + model.gate_b).unaryExpr(
                      [](double x) { return detail::sigmoid(x); }))
                : VectorXd::Ones(n + 1);
  r.logits = r.scores.cwiseProduct(r.gates);
  for (Eigen::Index i = 0; i < n; ++i)
    if (in.ghost[i]) r.candidates.push_back(static_cast<int>(i));
  r.candidates.push_back(static_cast<int>(n));
  return decision_from_row(in, select_row(r));
}

inline Decision score_and_select(const PlannerModel& model, const TopoGraph& graph, const Instruction& instruction,
                                 BiasSource source = BiasSource::kDynamic) {
  const PlannerInput in = make_planner_input(graph, instruction);
  ForwardOptions opt;
  opt.bias = source;
  return decision_from_row(in, select_row(planner_forward(model, in, opt)));
}

/// Cross-entropy of the softmax over selectable rows against `target_row`.
inline double selection_loss(const ForwardResult& r, int target_row) {
  double mx = -std::numeric_limits<double>::infinity();
  for (int c : r.candidates) mx = std::max(mx, r.logits[c]);
  double z = 0.0;
  for (int c : r.candidates) z += std::exp(r.logits[c] - mx);
  return -(r.logits[target_row] - mx - std::log(z));
}

/// Full reverse pass for one sample. Gradients accumulate into `grad` scaled by `weight`.
inline double planner_backward(const PlannerModel& model, const PlannerInput& in, const ForwardResult& r,
                               int target_row, double weight, PlannerModel& grad) {
  const auto n = in.features.rows();
  const double loss = selection_loss(r, target_row);

  double mx = -std::numeric_limits<double>::infinity();
  for (int c : r.candidates) mx = std::max(mx, r.logits[c]);
  double z = 0.0;
  for (int c : r.candidates) z += std::exp(r.logits[c] - mx);
  VectorXd d_logits = VectorXd::Zero(n + 1);
  for (int c : r.candidates) d_logits[c] = weight * std::exp(r.logits[c] - mx) / z;
  d_logits[target_row] -= weight;

  VectorXd d_scores = d_logits.cwiseProduct(r.gates);
  MatrixXd d_h = d_scores * model.score_w.transpose();
  grad.score_w += r.hidden.transpose() * d_scores;
  grad.score_b += d_scores.sum();
  if (model.config.node_gating) {
    const VectorXd d_gate_pre =
        d_logits.cwiseProduct(r.scores).cwiseProduct(r.gates.cwiseProduct((1.0 - r.gates.array()).matrix()));
    d_h += d_gate_pre * model.gate_w.transpose();
    grad.gate_w += r.hidden.transpose() * d_gate_pre;
    grad.gate_b += d_gate_pre.sum();
  }

  MatrixXd d_bias = MatrixXd::Zero(n + 1, n + 1);
  for (std::size_t l = model.layers.size(); l-- > 0;)
    d_h = gasa_layer_backward(r.caches[l], model.layers[l], model.config.heads, d_h, grad.layers[l], d_bias);
  grad.stop_embedding += d_h.row(n).transpose();

  const MatrixXd d_e = d_bias.topLeftCorner(n, n);
  const auto& f = model.fusion;
  if (r.edges.e_sem.size() > 0) {
    if (f.sem_enabled) {
      grad.fusion.omega_sem += d_e.cwiseProduct(r.edges.e_sem).sum();
      semantic_edges_backward(in.features, f.sem_mlp, f.omega_sem * d_e, grad.fusion.sem_mlp);
    }
    if (f.inst_enabled) {
      grad.fusion.omega_inst += d_e.cwiseProduct(r.edges.e_inst).sum();
      instruction_edges_backward(in.features, in.instruction, f.inst_mlp, f.omega_inst * d_e, grad.fusion.inst_mlp);
    }
  }
  return loss;
}

/// Loss of a single sample (forward only); the finite-difference audit target.
inline double sample_loss(const PlannerModel& model, const PlannerInput& in, int target_row,
                          const ForwardOptions& opt = {}) {
  return selection_loss(planner_forward(model, in, opt), target_row);
}

// --- graph paths ------------------------------------------------------------

struct GraphPath {
  std::vector<int> nodes;
  double length = 0.0;
};

/// Minimal total edge length from current_node to target; equal-length paths
/// resolve to the lexicographically smallest node-id sequence.
inline GraphPath path_to(const TopoGraph& graph, int target) {
  if (!graph.contains(target)) throw Error(ErrorCode::kUnknownNode, "path target " + std::to_string(target));
  const int source = graph.current_node;
  if (!graph.contains(source)) throw Error(ErrorCode::kUnknownNode, "graph has no current node");
  constexpr double kTieEps = 1e-12;
  struct Entry {
    double dist;
    std::vector<int> path;
  };
  auto worse = [](const Entry& a, const Entry& b) {
    if (std::abs(a.dist - b.dist) > kTieEps * std::max(1.0, std::abs(a.dist))) return a.dist > b.dist;
    return a.path > b.path;
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(worse)> open(worse);
  std::map<int, Entry> best;
  std::set<int> settled;
  best[source] = {0.0, {source}};
  open.push(best[source]);
  while (!open.empty()) {
    Entry e = open.top();
    open.pop();
    const int u = e.path.back();
    if (!settled.insert(u).second) continue;
    if (u == target) return {std::move(e.path), e.dist};
    for (int v : graph.adjacency.at(u)) {
      if (settled.count(v)) continue;
      Entry cand{e.dist + graph.edge_length(u, v), e.path};
      cand.path.push_back(v);
      auto it = best.find(v);
      if (it == best.end() || worse(it->second, cand)) {
        best[v] = cand;
        open.push(std::move(cand));
      }
    }
  }
  throw Error(ErrorCode::kUnreachable, "node " + std::to_string(target) + " unreachable from current node");
}

// --- oracle teacher ---------------------------------------------------------

inline constexpr double kSuccessRadius = 3.0;

/// Imitation target: stop inside the success radius, otherwise the ghost that
/// minimizes graph travel cost plus geodesic distance to the goal.
inline Decision make_oracle_decision(const TopoGraph& graph, const GeodesicField& goal_field,
                                     double success_radius = kSuccessRadius) {
  const Vec2 here = graph.node(graph.current_node).position;
  auto to_goal = goal_field.distance_at(here);
  if (!to_goal) throw Error(ErrorCode::kUnreachable, "goal unreachable from the current node");
  if (*to_goal < success_radius) return {true, -1};
  Decision best{true, -1};
  double best_cost = std::numeric_limits<double>::infinity();
  for (int id : graph.ghost_ids()) {
    auto g = goal_field.distance_at(graph.node(id).position);
    if (!g) continue;
    const double cost = *g + path_to(graph, id).length;
    if (cost < best_cost) {
      best_cost = cost;
      best = {false, id};
    }
  }
  return best;
}

inline Decision make_oracle_decision(const OccupancyWorld& world, const TopoGraph& graph, Vec2 goal,
                                     double success_radius = kSuccessRadius) {
  return make_oracle_decision(graph, GeodesicField(world, goal), success_radius);
}

// --- training ---------------------------------------------------------------

struct TrainStrategy {
  bool node_gating = false;
  double geo_dropout_p = 0.0;
  bool annealing = false;
  double p_max = 0.3;
  int t_ramp = 1000;
  std::uint64_t seed = 0;

  /// Geometric dropout probability at `step`.
  double dropout_probability(int step) const {
    if (!annealing) return geo_dropout_p;
    if (t_ramp <= 0) return p_max;
    return p_max * std::min(1.0, static_cast<double>(step) / t_ramp);
  }
};

struct TrainSample {
  PlannerInput input;
  int target_row = 0;  // index into rows; N means stop
};

struct TrainStepResult {
  double loss = 0.0;
  double grad_norm = 0.0;
  int geo_dropped = 0;
};

/// Called once per sample with the attention bias that reached the layers
/// and whether the geometric stream was part of it.
using BiasObserver = std::function<void(const ForwardResult&, bool geo_included)>;

/// Mean cross-entropy gradient over the batch (no update).
inline TrainStepResult batch_gradient(const PlannerModel& model, std::span<const TrainSample> batch,
                                      const TrainStrategy& strategy, int step, PlannerModel& grad,
                                      const BiasObserver& observer = {}) {
  if (batch.empty()) throw Error(ErrorCode::kInvalidArgument, "empty training batch");
  TrainStepResult res;
  const double p = strategy.dropout_probability(step);
  const double weight = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Rng rng(hash_combine(hash_combine(strategy.seed, static_cast<std::uint64_t>(step)), i));
    ForwardOptions opt;
    opt.keep_cache = true;
    opt.drop_geo = p > 0.0 && rng.bernoulli(p);
    res.geo_dropped += opt.drop_geo ? 1 : 0;
    const auto r = planner_forward(model, batch[i].input, opt);
    if (observer) observer(r, !opt.drop_geo);
    res.loss += weight * planner_backward(model, batch[i].input, r, batch[i].target_row, weight, grad);
  }
  if (!std::isfinite(res.loss)) throw Error(ErrorCode::kNonFinite, "non-finite training loss");
  double sq = 0.0;
  for (const auto& g : parameters(grad))
    for (double v : g.values) sq += v * v;
  res.grad_norm = std::sqrt(sq);
  return res;
}

/// One plain gradient-descent step; omega parameters use a 10x rate.
inline TrainStepResult train_step(PlannerModel& model, std::span<const TrainSample> batch, double lr,
                                  const TrainStrategy& strategy, int step, const BiasObserver& observer = {}) {
  PlannerModel grad = model.zeros_like();
  grad.config.node_gating = model.config.node_gating;
  const auto res = batch_gradient(model, batch, strategy, step, grad, observer);
  auto params = parameters(model);
  auto grads = parameters(grad);
  for (std::size_t k = 0; k < params.size(); ++k)
    for (std::size_t i = 0; i < params[k].values.size(); ++i)
      params[k].values[i] -= lr * params[k].lr_scale * grads[k].values[i];
  return res;
}

// --- checkpoints ------------------------------------------------------------

inline constexpr int kCheckpointSchema = 1;

/// FNV-1a over parameter names and the raw bytes of their values.
inline std::uint64_t parameter_checksum(PlannerModel& model) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* p, std::size_t len) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& p : parameters(model)) {
    mix(p.name.data(), p.name.size());
    mix(p.values.data(), p.values.size_bytes());
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[i] = kDigits[v & 0xF];
  return s;
}

inline nlohmann::json checkpoint_to_json(const PlannerModel& model_in) {
  PlannerModel model = model_in;
  nlohmann::json params = nlohmann::json::object();
  for (const auto& p : parameters(model)) params[p.name] = std::vector<double>(p.values.begin(), p.values.end());
  return {{"schema_version", kCheckpointSchema},
          {"config",
           {{"D", model.config.dim},
            {"layers", model.config.layers},
            {"heads", model.config.heads},
            {"node_gating", model.config.node_gating},
            {"sem_enabled", model.fusion.sem_enabled},
            {"inst_enabled", model.fusion.inst_enabled}}},
          {"params", params},
          {"checksum", hex64(parameter_checksum(model))}};
}

inline PlannerModel checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.at("schema_version").get<int>() != kCheckpointSchema)
      throw Error(ErrorCode::kIo, "unsupported checkpoint schema");
    const auto& c = j.at("config");
    ModelConfig cfg;
    cfg.dim = c.at("D").get<int>();
    cfg.layers = c.at("layers").get<int>();
    cfg.heads = c.at("heads").get<int>();
    cfg.node_gating = c.at("node_gating").get<bool>();
    PlannerModel m = PlannerModel::zeros(cfg);
    m.fusion.sem_enabled = c.at("sem_enabled").get<bool>();
    m.fusion.inst_enabled = c.at("inst_enabled").get<bool>();
    const auto& params = j.at("params");
    for (auto& p : parameters(m)) {
      const auto values = params.at(p.name).get<std::vector<double>>();
      if (values.size() != p.values.size()) throw Error(ErrorCode::kIo, "checkpoint size mismatch for " + p.name);
      std::copy(values.begin(), values.end(), p.values.begin());
    }
    if (j.at("checksum").get<std::string>() != hex64(parameter_checksum(m)))
      throw Error(ErrorCode::kIo, "checkpoint checksum mismatch");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kIo, std::string("checkpoint: ") + e.what());
  }
}

}  // namespace dgnav
