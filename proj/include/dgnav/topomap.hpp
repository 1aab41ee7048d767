#pragma once
// The online topological map: visited and ghost nodes, threshold-controlled
// merging, connectivity and the normalized geometric adjacency.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "dgnav/common.hpp"
#include "dgnav/waypoints.hpp"
#include "dgnav/world.hpp"

namespace dgnav {

enum class NodeKind { kVisited, kGhost };

inline std::string_view to_string(NodeKind k) { return k == NodeKind::kVisited ? "visited" : "ghost"; }

inline constexpr double kFeatureBound = 10.0;

struct TopoNode {
  int id = 0;
  NodeKind kind = NodeKind::kGhost;
  Vec2 position;
  VectorXd feature;
  int observation_count = 1;
};

class TopoGraph {
 public:
  std::map<int, TopoNode> nodes;
  std::map<int, std::set<int>> adjacency;
  int current_node = -1;
  int step = 0;

  bool empty() const { return nodes.empty(); }
  std::size_t size() const { return nodes.size(); }
  bool contains(int id) const { return nodes.count(id) != 0; }
  const TopoNode& node(int id) const {
    auto it = nodes.find(id);
    if (it == nodes.end()) throw Error(ErrorCode::kUnknownNode, "node " + std::to_string(id));
    return it->second;
  }

  /// Node ids in ascending order; this is the row order of every matrix.
  std::vector<int> ids() const {
    std::vector<int> out;
    out.reserve(nodes.size());
    for (const auto& [id, _] : nodes) out.push_back(id);
    return out;
  }

  std::vector<int> ghost_ids() const {
    std::vector<int> out;
    for (const auto& [id, n] : nodes)
      if (n.kind == NodeKind::kGhost) out.push_back(id);
    return out;
  }

  std::size_t ghost_count() const { return ghost_ids().size(); }

  /// Undirected edges as (a, b) with a < b.
  std::vector<std::pair<int, int>> edges() const {
    std::vector<std::pair<int, int>> out;
    for (const auto& [a, nbrs] : adjacency)
      for (int b : nbrs)
        if (a < b) out.emplace_back(a, b);
    return out;
  }

  bool has_edge(int a, int b) const {
    auto it = adjacency.find(a);
    return it != adjacency.end() && it->second.count(b) != 0;
  }

  /// Edge lengths are always the current Euclidean distance of the endpoints.
  double edge_length(int a, int b) const { return distance(node(a).position, node(b).position); }

  void add_edge(int a, int b) {
    if (a == b) return;
    adjacency[a].insert(b);
    adjacency[b].insert(a);
  }

  int add_node(NodeKind kind, Vec2 position, const VectorXd& feature) {
    const int id = next_id_++;
    TopoNode n;
    n.id = id;
    n.kind = kind;
    n.position = position;
    n.feature = feature.cwiseMax(-kFeatureBound).cwiseMin(kFeatureBound);
    n.observation_count = 1;
    nodes.emplace(id, std::move(n));
    adjacency[id];
    return id;
  }

  /// Nearest node to p (ties: lowest id), excluding `skip`.
  std::optional<std::pair<int, double>> nearest(Vec2 p, int skip = -1) const {
    std::optional<std::pair<int, double>> best;
    for (const auto& [id, n] : nodes) {
      if (id == skip) continue;
      const double d = distance(p, n.position);
      if (!best || d < best->second) best = std::pair{id, d};
    }
    return best;
  }

  /// Every node reachable from current_node.
  bool connected() const {
    if (nodes.empty()) return true;
    if (!contains(current_node)) return false;
    std::set<int> seen{current_node};
    std::vector<int> stack{current_node};
    while (!stack.empty()) {
      const int a = stack.back();
      stack.pop_back();
      for (int b : adjacency.at(a))
        if (seen.insert(b).second) stack.push_back(b);
    }
    return seen.size() == nodes.size();
  }

  /// Folds an observation at p into node `id` with count-weighted running means.
  void absorb_point(int id, Vec2 p, const VectorXd& feature) {
    TopoNode& n = nodes.at(id);
    const double c = n.observation_count;
    n.position = (1.0 / (c + 1.0)) * (c * n.position + p);
    n.feature = ((c * n.feature + feature) / (c + 1.0)).cwiseMax(-kFeatureBound).cwiseMin(kFeatureBound);
    n.observation_count += 1;
  }

  /// Contracts `drop` into `keep`: weighted state, rewired edges.
  void contract(int keep, int drop) {
    TopoNode& k = nodes.at(keep);
    const TopoNode& d = nodes.at(drop);
    const double ck = k.observation_count, cd = d.observation_count;
    k.position = (1.0 / (ck + cd)) * (ck * k.position + cd * d.position);
    k.feature = ((ck * k.feature + cd * d.feature) / (ck + cd)).cwiseMax(-kFeatureBound).cwiseMin(kFeatureBound);
    k.observation_count += d.observation_count;
    if (d.kind == NodeKind::kVisited) k.kind = NodeKind::kVisited;
    for (int nb : adjacency.at(drop)) {
      adjacency.at(nb).erase(drop);
      if (nb != keep) add_edge(keep, nb);
    }
    adjacency.erase(drop);
    nodes.erase(drop);
    if (current_node == drop) current_node = keep;
  }

  int next_id() const { return next_id_; }

 private:
  int next_id_ = 0;
};

struct UpdateStats {
  int merged = 0;
  int created = 0;
  int cascades = 0;  // node-node contractions triggered by a moved node
};

namespace detail {

// Restores merge completeness around `id` after its position moved.
inline int cascade_merges(TopoGraph& g, int id, double gamma) {
  int count = 0;
  while (true) {
    auto nb = g.nearest(g.node(id).position, id);
    if (!nb || !(nb->second < gamma)) return count;
    const int keep = std::min(id, nb->first);
    const int drop = std::max(id, nb->first);
    g.contract(keep, drop);
    id = keep;
    ++count;
  }
}

}  // namespace detail

/// Registers the agent pose as a visited node, then folds each candidate in
/// order: merge into the nearest node when strictly closer than gamma_t,
/// otherwise add a ghost linked to the agent's node.
inline UpdateStats update_graph(TopoGraph& graph, const CandidateSet& candidates, double gamma_t, const Pose& pose,
                                const std::vector<VectorXd>& candidate_features, const VectorXd& agent_feature) {
  if (candidate_features.size() != candidates.candidates.size())
    throw Error(ErrorCode::kDimensionMismatch, "one feature vector per candidate required");
  for (const auto& f : candidate_features)
    if (f.size() != agent_feature.size()) throw Error(ErrorCode::kDimensionMismatch, "candidate feature dimension");
  UpdateStats st;
  const Vec2 here = pose.position();
  int agent_id;
  auto nb = graph.nearest(here);
  if (nb && nb->second < gamma_t) {
    agent_id = nb->first;
    graph.absorb_point(agent_id, here, agent_feature);
    graph.nodes.at(agent_id).kind = NodeKind::kVisited;
    ++st.merged;
  } else {
    agent_id = graph.add_node(NodeKind::kVisited, here, agent_feature);
    ++st.created;
  }
  if (graph.current_node >= 0 && graph.contains(graph.current_node)) graph.add_edge(graph.current_node, agent_id);
  graph.current_node = agent_id;
  st.cascades += detail::cascade_merges(graph, agent_id, gamma_t);

  for (std::size_t i = 0; i < candidates.candidates.size(); ++i) {
    const Vec2 p = candidates.candidates[i].position;
    auto near = graph.nearest(p);
    if (near && near->second < gamma_t) {
      graph.absorb_point(near->first, p, candidate_features[i]);
      ++st.merged;
      st.cascades += detail::cascade_merges(graph, near->first, gamma_t);
    } else {
      const int id = graph.add_node(NodeKind::kGhost, p, candidate_features[i]);
      graph.add_edge(graph.current_node, id);
      ++st.created;
    }
  }
  ++graph.step;
  return st;
}

/// Marks a ghost as visited and moves the agent onto it.
inline void promote_to_visited(TopoGraph& graph, int ghost_id) {
  auto it = graph.nodes.find(ghost_id);
  if (it == graph.nodes.end()) throw Error(ErrorCode::kUnknownNode, "no node " + std::to_string(ghost_id));
  if (it->second.kind != NodeKind::kGhost)
    throw Error(ErrorCode::kUnknownNode, "node " + std::to_string(ghost_id) + " is not a ghost");
  it->second.kind = NodeKind::kVisited;
  if (graph.current_node >= 0 && graph.current_node != ghost_id) graph.add_edge(graph.current_node, ghost_id);
  graph.current_node = ghost_id;
}

/// Pairwise distances divided by the largest one and negated: entries in
/// [-1, 0], zero diagonal, symmetric. Rows follow ascending node id.
inline MatrixXd geo_adjacency(const TopoGraph& graph) {
  const auto ids = graph.ids();
  const auto n = static_cast<Eigen::Index>(ids.size());
  MatrixXd d = MatrixXd::Zero(n, n);
  double dmax = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = distance(graph.node(ids[i]).position, graph.node(ids[j]).position);
      d(i, j) = d(j, i) = v;
      dmax = std::max(dmax, v);
    }
  }
  MatrixXd e = MatrixXd::Zero(n, n);
  if (dmax <= 0.0) return e;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j && d(i, j) > 0.0) e(i, j) = -d(i, j) / dmax;
  return e;
}

/// Stacked node features (N x D) in ascending id order.
inline MatrixXd feature_matrix(const TopoGraph& graph) {
  if (graph.empty()) return {};
  const auto dim = graph.nodes.begin()->second.feature.size();
  MatrixXd f(static_cast<Eigen::Index>(graph.size()), dim);
  Eigen::Index r = 0;
  for (const auto& [_, n] : graph.nodes) f.row(r++) = n.feature.transpose();
  return f;
}

inline nlohmann::json graph_snapshot(const TopoGraph& g) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& [id, n] : g.nodes)
    nodes.push_back({{"id", id}, {"kind", to_string(n.kind)}, {"x", n.position.x}, {"y", n.position.y}});
  nlohmann::json edges = nlohmann::json::array();
  for (auto [a, b] : g.edges()) edges.push_back({a, b});
  return {{"step", g.step}, {"nodes", nodes}, {"edges", edges}, {"current", g.current_node}};
}

}  // namespace dgnav
