#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <queue>
#include <span>
#include <stdexcept>
#include <vector>

#include "specdraft/continuation_tree.hpp"
#include "specdraft/datastore.hpp"
#include "specdraft/types.hpp"

namespace specdraft {

/// Drafting parameters shared by retrieval, fusion and simulation.
struct FusionConfig {
  std::uint32_t dec_len = 16;           // draft tree size including the root
  std::uint32_t branch_len = 0;         // datastore continuation depth; 0 = min(8, dec_len - 1)
  std::uint32_t max_prefix_len = 4;     // P
  std::uint32_t input_branch_len = 8;
  std::uint32_t sample_cap = 100;       // M
  std::uint32_t min_continuations = 16; // T
  double input_scale = 0.8;             // alpha
  double prefix_len_decay = 0.8;        // beta, per unit of P - p
  double depth_decay_datastore = 1.0;   // gamma_ds
  double depth_decay_input = 0.95;      // gamma_in
  bool use_datastore = true;
  bool use_input = true;

  std::uint32_t effective_branch_len() const {
    if (branch_len != 0) return branch_len;
    return std::min<std::uint32_t>(8, dec_len > 0 ? dec_len - 1 : 0);
  }

  DatastoreQueryConfig datastore_query() const {
    DatastoreQueryConfig q;
    q.max_prefix_len = max_prefix_len;
    q.sample_cap = sample_cap;
    q.min_continuations = min_continuations;
    q.branch_len = std::max<std::uint32_t>(1, effective_branch_len());
    return q;
  }

  void validate() const {
    auto unit = [](double v) { return v > 0.0 && v <= 1.0; };
    if (dec_len < 1) throw std::invalid_argument("dec_len must be >= 1");
    if (max_prefix_len < 1) throw std::invalid_argument("P must be >= 1");
    if (sample_cap < 1) throw std::invalid_argument("M must be >= 1");
    if (!unit(input_scale)) throw std::invalid_argument("alpha must be in (0, 1]");
    if (!unit(prefix_len_decay)) throw std::invalid_argument("beta must be in (0, 1]");
    if (!unit(depth_decay_datastore)) throw std::invalid_argument("gamma_ds must be in (0, 1]");
    if (!unit(depth_decay_input)) throw std::invalid_argument("gamma_in must be in (0, 1]");
  }

  friend bool operator==(const FusionConfig&, const FusionConfig&) = default;
};

/// Where a draft candidate came from.
struct Source {
  enum class Kind : std::uint8_t { Datastore, Input };
  Kind kind = Kind::Datastore;
  std::uint32_t prefix_len = 0;  // only meaningful for Input

  static Source datastore() { return {Kind::Datastore, 0}; }
  static Source input(std::uint32_t p) { return {Kind::Input, p}; }

  /// Tie-break rank: datastore first, then input from longest prefix down.
  std::uint32_t rank(std::uint32_t max_prefix_len) const {
    return kind == Kind::Datastore ? 0 : 1 + (max_prefix_len - prefix_len);
  }

  friend bool operator==(const Source&, const Source&) = default;
};

/// Damping applied to a source's path probability at a given depth (>= 1).
inline double discount(const FusionConfig& cfg, Source src, std::uint32_t depth) {
  if (depth < 1) throw std::invalid_argument("discount: depth must be >= 1");
  const double d = static_cast<double>(depth - 1);
  if (src.kind == Source::Kind::Datastore) return std::pow(cfg.depth_decay_datastore, d);
  if (src.prefix_len < 1 || src.prefix_len > cfg.max_prefix_len)
    throw std::invalid_argument("discount: input prefix length out of range");
  const double gap = static_cast<double>(cfg.max_prefix_len - src.prefix_len);
  return cfg.input_scale * std::pow(cfg.prefix_len_decay, gap) * std::pow(cfg.depth_decay_input, d);
}

/// Fused candidate tree. Node 0 is the root (last accepted token).
class DraftTree {
public:
  struct Node {
    TokenId token = 0;
    std::int32_t parent = kNoParent;
    std::uint32_t depth = 0;
    Source source{};
    double priority = 1.0;
    std::vector<std::uint32_t> children;

    friend bool operator==(const Node&, const Node&) = default;
  };

  explicit DraftTree(TokenId root_token) { nodes_.push_back(Node{root_token, kNoParent, 0, {}, 1.0, {}}); }

  std::size_t size() const noexcept { return nodes_.size(); }
  const Node& node(std::size_t i) const { return nodes_.at(i); }
  std::span<const Node> nodes() const noexcept { return nodes_; }
  TokenId root_token() const noexcept { return nodes_[0].token; }

  std::int32_t find_child(std::uint32_t parent, TokenId token) const {
    for (std::uint32_t c : nodes_[parent].children)
      if (nodes_[c].token == token) return static_cast<std::int32_t>(c);
    return kNoParent;
  }

  /// Adds `token` under `parent` unless that child already exists. Returns
  /// the child's index and whether it was newly created.
  std::pair<std::uint32_t, bool> insert(std::uint32_t parent, TokenId token, Source src = {}, double priority = 0.0) {
    if (parent >= nodes_.size()) throw std::out_of_range("DraftTree::insert: bad parent");
    if (std::int32_t c = find_child(parent, token); c != kNoParent) return {static_cast<std::uint32_t>(c), false};
    auto idx = static_cast<std::uint32_t>(nodes_.size());
    nodes_.push_back(Node{token, static_cast<std::int32_t>(parent), nodes_[parent].depth + 1, src, priority, {}});
    nodes_[parent].children.push_back(idx);
    return {idx, true};
  }

  /// Tokens from the root's first child down to node `i`.
  std::vector<TokenId> path_tokens(std::uint32_t i) const {
    std::vector<TokenId> out;
    while (i != 0) {
      out.push_back(nodes_[i].token);
      i = static_cast<std::uint32_t>(nodes_[i].parent);
    }
    return {out.rbegin(), out.rend()};
  }

  friend bool operator==(const DraftTree&, const DraftTree&) = default;

private:
  std::vector<Node> nodes_;
};

namespace detail {

struct QueueEntry {
  double priority;
  std::uint32_t depth;
  std::uint32_t source_rank;
  std::uint64_t seq;
  const ContinuationTree* tree;
  ContinuationTree::NodeIndex node;
  std::uint32_t draft_parent;
  Source source;
};

// Orders the heap so that top() is the next element to expand.
struct PopsLater {
  bool operator()(const QueueEntry& a, const QueueEntry& b) const {
    if (a.priority != b.priority) return a.priority < b.priority;
    if (a.depth != b.depth) return a.depth > b.depth;
    if (a.source_rank != b.source_rank) return a.source_rank > b.source_rank;
    return a.seq > b.seq;
  }
};

}  // namespace detail

/// Best-first fusion of the datastore tree and the per-prefix-length input
/// trees into one draft tree of at most `cfg.dec_len` nodes.
///
/// `input_trees[i]` holds the continuations for prefix length i + 1. Empty
/// trees contribute nothing. Candidate priority is the node's path
/// probability in its source times `discount(source, depth)`.
inline DraftTree merge(TokenId root_token, const ContinuationTree& datastore_tree,
                       std::span<const ContinuationTree> input_trees, const FusionConfig& cfg) {
  if (input_trees.size() > cfg.max_prefix_len)
    throw std::invalid_argument("merge: more input trees than max_prefix_len");
  DraftTree draft(root_token);
  std::priority_queue<detail::QueueEntry, std::vector<detail::QueueEntry>, detail::PopsLater> queue;
  std::uint64_t seq = 0;

  auto push_children = [&](const ContinuationTree& tree, ContinuationTree::NodeIndex from, std::uint32_t depth,
                           Source src, std::uint32_t draft_parent) {
    const double d = discount(cfg, src, depth);
    for (auto c : tree.children(from))
      queue.push({tree.path_prob(c) * d, depth, src.rank(cfg.max_prefix_len), seq++, &tree, c, draft_parent, src});
  };

  if (!datastore_tree.empty()) push_children(datastore_tree, ContinuationTree::kRoot, 1, Source::datastore(), 0);
  for (std::size_t i = 0; i < input_trees.size(); ++i)
    if (!input_trees[i].empty())
      push_children(input_trees[i], ContinuationTree::kRoot, 1, Source::input(static_cast<std::uint32_t>(i + 1)), 0);

  [[maybe_unused]] double last = INFINITY;
  while (!queue.empty() && draft.size() < cfg.dec_len) {
    detail::QueueEntry e = queue.top();
    queue.pop();
    assert(e.priority <= last && "popped priorities must be non-increasing");
    last = e.priority;
    const TokenId token = e.tree->node(e.node).token;
    auto [idx, inserted] = draft.insert(e.draft_parent, token, e.source, e.priority);
    push_children(*e.tree, e.node, e.depth + 1, e.source, idx);
  }
  return draft;
}

}  // namespace specdraft
