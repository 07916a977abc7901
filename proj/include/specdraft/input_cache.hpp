#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "specdraft/continuation_tree.hpp"
#include "specdraft/types.hpp"

namespace specdraft {

/// Per-request index over prompt + generated tokens.
///
/// Stores every n-gram of length up to P + branch_len with its exact number
/// of (possibly overlapping) occurrences. Appending a token extends each
/// window that is still open, so an append costs O(P + branch_len).
class InputCache {
public:
  InputCache(std::uint32_t max_prefix_len, std::uint32_t branch_len)
      : max_prefix_len_(max_prefix_len), branch_len_(branch_len), nodes_(1) {
    if (max_prefix_len_ < 1) throw std::invalid_argument("InputCache: max_prefix_len must be >= 1");
  }

  InputCache(std::span<const TokenId> prompt, std::uint32_t max_prefix_len, std::uint32_t branch_len)
      : InputCache(max_prefix_len, branch_len) {
    append(prompt);
  }

  std::uint32_t max_prefix_len() const noexcept { return max_prefix_len_; }
  std::uint32_t branch_len() const noexcept { return branch_len_; }
  std::uint32_t window() const noexcept { return max_prefix_len_ + branch_len_; }
  std::span<const TokenId> sequence() const noexcept { return sequence_; }
  std::size_t node_count() const noexcept { return nodes_.size(); }

  void append(std::span<const TokenId> tokens) {
    for (TokenId t : tokens) push(t);
  }

  void push(TokenId t) {
    sequence_.push_back(t);
    // Windows that reached full length cannot grow any further.
    if (!open_.empty() && nodes_[open_.front()].depth == window()) open_.pop_front();
    for (auto& cur : open_) {
      cur = child_or_insert(cur, t);
      ++nodes_[cur].count;
    }
    std::uint32_t fresh = child_or_insert(0, t);
    ++nodes_[fresh].count;
    open_.push_back(fresh);
  }

  /// Exact occurrence count of `ngram` (length <= window()), 0 if absent.
  std::uint64_t count(std::span<const TokenId> ngram) const {
    std::uint32_t cur = 0;
    for (TokenId t : ngram) {
      cur = find_child(cur, t);
      if (cur == 0) return 0;
    }
    return ngram.empty() ? sequence_.size() : nodes_[cur].count;
  }

  /// One tree per prefix length p = 1..P, matching the final p tokens. The
  /// trailing occurrence is excluded from each root count since nothing
  /// follows it yet.
  std::vector<ContinuationTree> get_conts() const {
    std::vector<ContinuationTree> out(max_prefix_len_);
    for (std::uint32_t p = 1; p <= max_prefix_len_ && p <= sequence_.size(); ++p) {
      std::uint32_t cur = 0;
      for (std::size_t i = sequence_.size() - p; i < sequence_.size(); ++i) cur = find_child(cur, sequence_[i]);
      // The trailing occurrence guarantees cur exists.
      ContinuationTree& tree = out[p - 1];
      tree.add_root_count(nodes_[cur].count - 1);
      copy_subtree(tree, cur, ContinuationTree::kRoot, branch_len_);
    }
    return out;
  }

  /// All stored n-grams with their counts; used to compare cache states.
  std::map<std::vector<TokenId>, std::uint64_t> snapshot() const {
    std::map<std::vector<TokenId>, std::uint64_t> out;
    std::vector<TokenId> path;
    snapshot_rec(0, path, out);
    return out;
  }

private:
  struct Node {
    TokenId token = 0;
    std::uint32_t depth = 0;
    std::uint64_t count = 0;
    std::vector<std::uint32_t> children;
  };

  static std::uint64_t edge_key(std::uint32_t parent, TokenId t) {
    return (static_cast<std::uint64_t>(parent) << 32) | t;
  }

  std::uint32_t find_child(std::uint32_t parent, TokenId t) const {
    auto it = edges_.find(edge_key(parent, t));
    return it == edges_.end() ? 0 : it->second;
  }

  std::uint32_t child_or_insert(std::uint32_t parent, TokenId t) {
    auto [it, inserted] = edges_.try_emplace(edge_key(parent, t), static_cast<std::uint32_t>(nodes_.size()));
    if (inserted) {
      Node n;
      n.token = t;
      n.depth = nodes_[parent].depth + 1;
      nodes_.push_back(std::move(n));
      nodes_[parent].children.push_back(it->second);
    }
    return it->second;
  }

  void copy_subtree(ContinuationTree& tree, std::uint32_t from, ContinuationTree::NodeIndex to,
                    std::uint32_t depth_left) const {
    if (depth_left == 0) return;
    for (std::uint32_t c : nodes_[from].children) {
      auto dst = tree.add_child(to, nodes_[c].token, nodes_[c].count);
      copy_subtree(tree, c, dst, depth_left - 1);
    }
  }

  void snapshot_rec(std::uint32_t n, std::vector<TokenId>& path,
                    std::map<std::vector<TokenId>, std::uint64_t>& out) const {
    for (std::uint32_t c : nodes_[n].children) {
      path.push_back(nodes_[c].token);
      out.emplace(path, nodes_[c].count);
      snapshot_rec(c, path, out);
      path.pop_back();
    }
  }

  std::uint32_t max_prefix_len_;
  std::uint32_t branch_len_;
  std::vector<TokenId> sequence_;
  std::vector<Node> nodes_;
  std::unordered_map<std::uint64_t, std::uint32_t> edges_;
  std::deque<std::uint32_t> open_;  // deepest node of each window still growing
};

}  // namespace specdraft
