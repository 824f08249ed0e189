#pragma once

// Causal graph over named nodes. One node is the protected attribute; it
// must be exogenous (no parents). After validation the node list is stored
// in topological order with the protected node first, and feature j refers
// to node j+1 of that order.

#include <algorithm>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "cfsense/errors.hpp"

namespace cfsense {

struct CausalGraph {
  std::vector<std::string> nodes;
  std::vector<std::pair<std::string, std::string>> edges;
  std::string protected_node;

  // Filled by validate(): per-node parent indices, ascending.
  std::vector<std::vector<std::size_t>> parent_ids;
  bool validated = false;

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < nodes.size(); ++i)
      if (nodes[i] == name) return i;
    throw UnknownNode("unknown node '" + name + "'");
  }

  // Feature count; features are all non-protected nodes.
  std::size_t num_features() const { return nodes.size() - 1; }

  const std::string& feature_name(std::size_t j) const {
    return nodes[j + 1];
  }

  // Parent indices of feature j (indices into `nodes`, protected node = 0).
  const std::vector<std::size_t>& feature_parents(std::size_t j) const {
    return parent_ids[j + 1];
  }
};

// Checks names and acyclicity, then reorders nodes topologically with the
// protected node first. Ties are broken by original position, so the
// result is deterministic and validation is idempotent.
inline CausalGraph validate(CausalGraph g) {
  if (g.nodes.empty()) throw UnknownNode("graph has no nodes");
  bool has_protected = false;
  for (const auto& n : g.nodes) has_protected |= (n == g.protected_node);
  if (!has_protected)
    throw UnknownNode("protected node '" + g.protected_node +
                      "' not in node list");
  for (std::size_t i = 0; i < g.nodes.size(); ++i)
    for (std::size_t j = i + 1; j < g.nodes.size(); ++j)
      if (g.nodes[i] == g.nodes[j])
        throw UnknownNode("duplicate node '" + g.nodes[i] + "'");

  const std::size_t n = g.nodes.size();
  auto find = [&](const std::string& name) -> std::size_t {
    for (std::size_t i = 0; i < n; ++i)
      if (g.nodes[i] == name) return i;
    throw UnknownNodeInEdge("edge references unknown node '" + name + "'");
  };

  std::vector<std::vector<std::size_t>> children(n);
  std::vector<std::vector<std::size_t>> parents(n);
  for (const auto& [from, to] : g.edges) {
    const std::size_t a = find(from);
    const std::size_t b = find(to);
    children[a].push_back(b);
    parents[b].push_back(a);
  }

  const std::size_t prot = g.index_of(g.protected_node);
  if (!parents[prot].empty())
    throw ProtectedHasParents("protected node '" + g.protected_node +
                              "' has incoming edges");

  // Kahn's algorithm; always pick the protected node first, then the
  // lowest original index among ready nodes.
  std::vector<std::size_t> indeg(n);
  for (std::size_t i = 0; i < n; ++i) indeg[i] = parents[i].size();
  std::vector<bool> emitted(n, false);
  std::vector<std::size_t> order;
  order.reserve(n);
  for (std::size_t step = 0; step < n; ++step) {
    std::size_t pick = n;
    if (step == 0) {
      pick = prot;
    } else {
      for (std::size_t i = 0; i < n; ++i)
        if (!emitted[i] && indeg[i] == 0) {
          pick = i;
          break;
        }
    }
    if (pick == n) throw CycleDetected("graph contains a cycle");
    emitted[pick] = true;
    order.push_back(pick);
    for (std::size_t c : children[pick]) --indeg[c];
  }

  std::vector<std::size_t> new_pos(n);
  for (std::size_t i = 0; i < n; ++i) new_pos[order[i]] = i;

  CausalGraph out;
  out.protected_node = g.protected_node;
  out.nodes.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.nodes.push_back(g.nodes[order[i]]);
  out.edges = std::move(g.edges);
  out.parent_ids.assign(n, {});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p : parents[order[i]])
      out.parent_ids[i].push_back(new_pos[p]);
    std::sort(out.parent_ids[i].begin(), out.parent_ids[i].end());
  }
  out.validated = true;
  return out;
}

// Parent names of a node, in stored node order.
inline std::vector<std::string> parents(const CausalGraph& g,
                                        const std::string& node) {
  const std::size_t i = g.index_of(node);
  std::vector<std::string> out;
  if (g.validated) {
    for (std::size_t p : g.parent_ids[i]) out.push_back(g.nodes[p]);
    return out;
  }
  for (const auto& [from, to] : g.edges)
    if (to == node) out.push_back(from);
  return out;
}

// Splits features into descendants of the protected node reached through
// unfair paths vs. features treated as fair inputs. Used for
// path-specific evaluation: unfair features contribute through their
// residuals, fair features pass through factually.
struct PathSpecMask {
  std::vector<std::string> unfair_nodes;
  std::vector<std::string> fair_nodes;
};

// Checks the mask is a partition of the feature set.
inline PathSpecMask validate_mask(const CausalGraph& g,
                                  const PathSpecMask& mask) {
  std::vector<bool> seen(g.nodes.size(), false);
  auto mark = [&](const std::string& name) {
    const std::size_t i = g.index_of(name);
    if (i == 0 || g.nodes[i] == g.protected_node)
      throw InvalidPathMask("protected node cannot appear in a path mask");
    if (seen[i]) throw InvalidPathMask("node '" + name + "' listed twice");
    seen[i] = true;
  };
  for (const auto& n : mask.unfair_nodes) mark(n);
  for (const auto& n : mask.fair_nodes) mark(n);
  for (std::size_t i = 1; i < g.nodes.size(); ++i)
    if (!seen[i])
      throw InvalidPathMask("feature '" + g.nodes[i] + "' missing from mask");
  return mask;
}

}  // namespace cfsense
