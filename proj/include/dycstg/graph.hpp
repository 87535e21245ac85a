#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "dycstg/errors.hpp"

namespace dycstg {

enum class SensorKind { Temperature, Humidity, Light, Door };

inline std::string kind_name(SensorKind k) {
  switch (k) {
    case SensorKind::Temperature: return "temperature";
    case SensorKind::Humidity: return "humidity";
    case SensorKind::Light: return "light";
    case SensorKind::Door: return "door";
  }
  return "?";
}

inline SensorKind kind_from_name(const std::string& s) {
  if (s == "temperature") return SensorKind::Temperature;
  if (s == "humidity") return SensorKind::Humidity;
  if (s == "light") return SensorKind::Light;
  if (s == "door") return SensorKind::Door;
  throw ConfigError("unknown sensor kind '" + s + "'");
}

// Latent static topology A_Base: symmetric, unit diagonal, weights in [0,1].
struct BaseGraph {
  std::int64_t n_nodes = 0;
  std::vector<double> a_base;  // n_nodes * n_nodes, row-major
  std::vector<SensorKind> node_kind;
  std::vector<int> node_room;

  double at(std::int64_t i, std::int64_t j) const { return a_base[i * n_nodes + j]; }
  double& at(std::int64_t i, std::int64_t j) { return a_base[i * n_nodes + j]; }

  static BaseGraph empty(std::int64_t n) {
    BaseGraph g;
    g.n_nodes = n;
    g.a_base.assign(static_cast<std::size_t>(n * n), 0.0);
    for (std::int64_t i = 0; i < n; ++i) g.at(i, i) = 1.0;
    g.node_kind.assign(static_cast<std::size_t>(n), SensorKind::Temperature);
    g.node_room.assign(static_cast<std::size_t>(n), 0);
    return g;
  }

  void set_edge(std::int64_t i, std::int64_t j, double w) {
    if (i < 0 || i >= n_nodes || j < 0 || j >= n_nodes)
      throw ConfigError("set_edge: node index out of range");
    if (i == j) throw ConfigError("set_edge: the diagonal is fixed at 1 (self-loops)");
    if (w < 0.0 || w > 1.0) throw ConfigError("edge weight must be in [0,1]");
    at(i, j) = w;
    at(j, i) = w;
  }

  void validate() const {
    for (std::int64_t i = 0; i < n_nodes; ++i) {
      if (at(i, i) != 1.0) throw ConfigError("a_base diagonal must be 1 (self-loops)");
      for (std::int64_t j = 0; j < n_nodes; ++j) {
        if (at(i, j) != at(j, i)) throw ConfigError("a_base must be symmetric");
        if (at(i, j) < 0.0 || at(i, j) > 1.0) throw ConfigError("a_base weights in [0,1]");
      }
    }
  }
};

enum class ModFn { BinaryIdentity };

// One control node gating a set of undirected base edges.
struct ControlBinding {
  std::int64_t control_node = -1;
  std::vector<std::pair<std::int64_t, std::int64_t>> gated_edges;  // both orders stored
  ModFn f_mod = ModFn::BinaryIdentity;

  void add_edge(std::int64_t i, std::int64_t j) {
    if (i == j) throw ConfigError("self-loops cannot be gated");
    gated_edges.emplace_back(i, j);
    gated_edges.emplace_back(j, i);
  }
};

// control_node -> length-T series of s_c^t in [0,1] ({0,1} for binary).
struct ControlStateSeries {
  std::map<std::int64_t, std::vector<double>> states;
};

struct DynamicAdjacencySequence {
  std::int64_t n_nodes = 0;
  std::int64_t T = 0;
  std::vector<double> mats;  // T * n * n

  const double* mat(std::int64_t t) const { return mats.data() + t * n_nodes * n_nodes; }
  double at(std::int64_t t, std::int64_t i, std::int64_t j) const {
    return mats[(t * n_nodes + i) * n_nodes + j];
  }
};

inline double apply_mod(ModFn f, double s) {
  switch (f) {
    case ModFn::BinaryIdentity: return s;
  }
  return s;
}

// A^t(i,j) = f_mod(s_c^t) * a_base(i,j) on gated edges; copies a_base elsewhere.
inline DynamicAdjacencySequence build_adjacency_sequence(
    const BaseGraph& base, const std::vector<ControlBinding>& bindings,
    const ControlStateSeries& states, std::int64_t T) {
  const std::int64_t n = base.n_nodes;
  std::set<std::pair<std::int64_t, std::int64_t>> seen;
  for (const auto& b : bindings) {
    if (b.control_node < 0 || b.control_node >= n)
      throw ConfigError("binding control node " + std::to_string(b.control_node) +
                        " out of range");
    auto it = states.states.find(b.control_node);
    if (it == states.states.end())
      throw ConfigError("missing state series for control node " +
                        std::to_string(b.control_node));
    if (static_cast<std::int64_t>(it->second.size()) != T)
      throw ConfigError("state series for control node " + std::to_string(b.control_node) +
                        " has length " + std::to_string(it->second.size()) + ", expected " +
                        std::to_string(T));
    for (const auto& e : b.gated_edges) {
      if (e.first < 0 || e.first >= n || e.second < 0 || e.second >= n)
        throw ConfigError("gated edge node out of range");
      if (e.first == e.second) throw ConfigError("self-loops cannot be gated");
      if (base.at(e.first, e.second) <= 0.0)
        throw ConfigError("gated edge (" + std::to_string(e.first) + "," +
                          std::to_string(e.second) + ") absent from a_base");
      if (!seen.insert(e).second)
        throw ConfigError("edge (" + std::to_string(e.first) + "," +
                          std::to_string(e.second) + ") gated by more than one control");
    }
  }

  DynamicAdjacencySequence seq;
  seq.n_nodes = n;
  seq.T = T;
  seq.mats.resize(static_cast<std::size_t>(T * n * n));
  for (std::int64_t t = 0; t < T; ++t)
    std::copy(base.a_base.begin(), base.a_base.end(), seq.mats.begin() + t * n * n);
  for (const auto& b : bindings) {
    const auto& s = states.states.at(b.control_node);
    for (std::int64_t t = 0; t < T; ++t) {
      const double f = apply_mod(b.f_mod, s[static_cast<std::size_t>(t)]);
      for (const auto& e : b.gated_edges)
        seq.mats[(t * n + e.first) * n + e.second] = f * base.at(e.first, e.second);
    }
  }
  return seq;
}

// Binary neighbor mask at snapshot t: 1 iff A^t(i,j) > 0; diagonal always 1.
inline std::vector<double> neighbor_mask_at(const DynamicAdjacencySequence& seq,
                                            std::int64_t t) {
  if (t < 0 || t >= seq.T)
    throw ContractError("neighbor_mask_at: t=" + std::to_string(t) + " out of [0," +
                        std::to_string(seq.T) + ")");
  const std::int64_t n = seq.n_nodes;
  std::vector<double> mask(static_cast<std::size_t>(n * n), 0.0);
  const double* m = seq.mat(t);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < n; ++j)
      mask[i * n + j] = (i == j || m[i * n + j] > 0.0) ? 1.0 : 0.0;
  return mask;
}

}  // namespace dycstg
