#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "specdraft/types.hpp"

namespace specdraft {

/// Weighted trie of token continuations observed after a matched prefix.
///
/// Node 0 is the root and stands for the prefix itself; its count is
/// `root_count()`. Every other node carries the number of sampled
/// occurrences of the path from the root to it. Children are kept in
/// insertion order, which makes iteration order deterministic for a given
/// sequence of inserts.
class ContinuationTree {
public:
  using NodeIndex = std::uint32_t;
  static constexpr NodeIndex kRoot = 0;

  struct Node {
    TokenId token = 0;
    std::uint64_t count = 0;
    NodeIndex parent = kRoot;
    std::uint32_t depth = 0;
    std::vector<NodeIndex> children;
  };

  ContinuationTree() : nodes_(1) {}

  std::uint64_t root_count() const noexcept { return nodes_[kRoot].count; }
  bool empty() const noexcept { return nodes_.size() == 1; }
  std::size_t size() const noexcept { return nodes_.size(); }

  const Node& node(NodeIndex i) const { return nodes_[i]; }
  std::span<const NodeIndex> children(NodeIndex i) const { return nodes_[i].children; }

  /// Probability of reaching node `i` from the root: count(i) / root_count.
  /// This is the telescoped product of the per-edge count ratios.
  double path_prob(NodeIndex i) const {
    if (i == kRoot) return 1.0;
    return static_cast<double>(nodes_[i].count) / static_cast<double>(nodes_[kRoot].count);
  }

  /// Returns the child of `parent` carrying `token`, or kRoot if none.
  NodeIndex find_child(NodeIndex parent, TokenId token) const {
    for (NodeIndex c : nodes_[parent].children)
      if (nodes_[c].token == token) return c;
    return kRoot;
  }

  /// Records `weight` occurrences of the prefix followed by `path`.
  /// An empty path only bumps the root count.
  void add_path(std::span<const TokenId> path, std::uint64_t weight = 1) {
    nodes_[kRoot].count += weight;
    NodeIndex cur = kRoot;
    for (TokenId t : path) {
      cur = child_or_insert(cur, t);
      nodes_[cur].count += weight;
    }
  }

  /// Adds a child with an explicit count. Used when copying a subtree out of
  /// another index; the caller maintains the count invariants.
  NodeIndex add_child(NodeIndex parent, TokenId token, std::uint64_t count) {
    NodeIndex c = child_or_insert(parent, token);
    nodes_[c].count += count;
    return c;
  }

  void add_root_count(std::uint64_t n) { nodes_[kRoot].count += n; }

  /// Sums counts edge-by-edge with `other`.
  void merge(const ContinuationTree& other) {
    nodes_[kRoot].count += other.root_count();
    merge_rec(other, kRoot, kRoot);
  }

  /// Token path from the root to `i` (root excluded).
  std::vector<TokenId> path_to(NodeIndex i) const {
    std::vector<TokenId> out;
    while (i != kRoot) {
      out.push_back(nodes_[i].token);
      i = nodes_[i].parent;
    }
    return {out.rbegin(), out.rend()};
  }

  /// Canonical view: every non-root path mapped to its count. Independent of
  /// insertion order, so two trees with equal `as_map()` are equivalent.
  std::map<std::vector<TokenId>, std::uint64_t> as_map() const {
    std::map<std::vector<TokenId>, std::uint64_t> out;
    for (NodeIndex i = 1; i < nodes_.size(); ++i) out.emplace(path_to(i), nodes_[i].count);
    return out;
  }

  std::uint32_t max_depth() const {
    std::uint32_t d = 0;
    for (const auto& n : nodes_) d = std::max(d, n.depth);
    return d;
  }

private:
  NodeIndex child_or_insert(NodeIndex parent, TokenId token) {
    if (NodeIndex c = find_child(parent, token); c != kRoot) return c;
    auto idx = static_cast<NodeIndex>(nodes_.size());
    Node n;
    n.token = token;
    n.parent = parent;
    n.depth = nodes_[parent].depth + 1;
    nodes_.push_back(std::move(n));
    nodes_[parent].children.push_back(idx);
    return idx;
  }

  void merge_rec(const ContinuationTree& other, NodeIndex from, NodeIndex to) {
    for (NodeIndex oc : other.nodes_[from].children) {
      const Node& on = other.nodes_[oc];
      NodeIndex c = child_or_insert(to, on.token);
      nodes_[c].count += on.count;
      merge_rec(other, oc, c);
    }
  }

  std::vector<Node> nodes_;
};

}  // namespace specdraft
