#pragma once

// Brute-force references used by the unit and acceptance suites. Each one
// recomputes a result the slow, obvious way so the library can be checked
// against it.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "specdraft/specdraft.hpp"

namespace specdraft::testing {

using PathCounts = std::map<std::vector<TokenId>, std::uint64_t>;

struct BruteTree {
  std::uint64_t root_count = 0;
  PathCounts paths;
};

inline std::vector<std::uint64_t> brute_suffix_array(std::span<const TokenId> c) {
  std::vector<std::uint64_t> idx(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::uint64_t a, std::uint64_t b) {
    return std::lexicographical_compare(c.begin() + static_cast<std::ptrdiff_t>(a), c.end(),
                                        c.begin() + static_cast<std::ptrdiff_t>(b), c.end());
  });
  return idx;
}

inline std::vector<std::uint64_t> occurrences(std::span<const TokenId> c, std::span<const TokenId> prefix) {
  std::vector<std::uint64_t> out;
  if (prefix.size() > c.size()) return out;
  for (std::size_t i = 0; i + prefix.size() <= c.size(); ++i)
    if (std::equal(prefix.begin(), prefix.end(), c.begin() + static_cast<std::ptrdiff_t>(i))) out.push_back(i);
  return out;
}

/// Adds one occurrence whose continuation is `cont` (all prefixes counted).
inline void add_continuation(BruteTree& t, std::span<const TokenId> cont) {
  ++t.root_count;
  std::vector<TokenId> path;
  for (TokenId x : cont) {
    path.push_back(x);
    ++t.paths[path];
  }
}

/// Continuations of every occurrence of `prefix` in a corpus.
inline BruteTree brute_corpus_conts(std::span<const TokenId> c, std::span<const TokenId> prefix,
                                    std::uint32_t branch_len, std::optional<TokenId> separator = {}) {
  BruteTree t;
  for (std::uint64_t i : occurrences(c, prefix)) {
    std::vector<TokenId> cont;
    for (std::size_t k = i + prefix.size(); k < c.size() && cont.size() < branch_len; ++k) {
      if (separator && c[k] == *separator) break;
      cont.push_back(c[k]);
    }
    add_continuation(t, cont);
  }
  return t;
}

/// Sliding-window scan for the input-cache trees: occurrences of the last p
/// tokens, excluding the trailing one.
inline BruteTree brute_input_conts(std::span<const TokenId> seq, std::size_t p, std::uint32_t branch_len) {
  BruteTree t;
  if (seq.size() < p || p == 0) return t;
  auto prefix = seq.subspan(seq.size() - p);
  for (std::size_t j = 0; j + p < seq.size(); ++j) {
    if (!std::equal(prefix.begin(), prefix.end(), seq.begin() + static_cast<std::ptrdiff_t>(j))) continue;
    std::vector<TokenId> cont;
    for (std::size_t k = j + p; k < seq.size() && cont.size() < branch_len; ++k) cont.push_back(seq[k]);
    add_continuation(t, cont);
  }
  return t;
}

inline bool same(const ContinuationTree& tree, const BruteTree& ref) {
  return tree.root_count() == ref.root_count && tree.as_map() == ref.paths;
}

/// Best-first fusion by linear scan over an explicit frontier.
inline DraftTree reference_merge(TokenId root, const ContinuationTree& ds, std::span<const ContinuationTree> inputs,
                                 const FusionConfig& cfg) {
  struct Cand {
    double priority;
    std::uint32_t depth;
    std::uint32_t rank;
    std::uint64_t seq;
    const ContinuationTree* tree;
    ContinuationTree::NodeIndex node;
    std::uint32_t parent;
    Source src;
  };
  std::vector<Cand> frontier;
  std::uint64_t seq = 0;
  auto expand = [&](const ContinuationTree& t, ContinuationTree::NodeIndex from, std::uint32_t depth, Source src,
                    std::uint32_t parent) {
    for (auto c : t.children(from)) {
      const double prob = static_cast<double>(t.node(c).count) / static_cast<double>(t.root_count());
      frontier.push_back({prob * discount(cfg, src, depth), depth, src.rank(cfg.max_prefix_len), seq++, &t, c,
                          parent, src});
    }
  };
  DraftTree out(root);
  if (!ds.empty()) expand(ds, 0, 1, Source::datastore(), 0);
  for (std::size_t i = 0; i < inputs.size(); ++i)
    if (!inputs[i].empty()) expand(inputs[i], 0, 1, Source::input(static_cast<std::uint32_t>(i + 1)), 0);
  while (!frontier.empty() && out.size() < cfg.dec_len) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < frontier.size(); ++i) {
      const Cand& a = frontier[i];
      const Cand& b = frontier[best];
      bool better = a.priority != b.priority ? a.priority > b.priority
                    : a.depth != b.depth     ? a.depth < b.depth
                    : a.rank != b.rank       ? a.rank < b.rank
                                             : a.seq < b.seq;
      if (better) best = i;
    }
    Cand c = frontier[best];
    frontier.erase(frontier.begin() + static_cast<std::ptrdiff_t>(best));
    auto [idx, inserted] = out.insert(c.parent, c.tree->node(c.node).token, c.src, c.priority);
    expand(*c.tree, c.node, c.depth + 1, c.src, idx);
  }
  return out;
}

/// Reflexive-transitive closure of the parent relation, row-major.
inline std::vector<std::uint8_t> closure_mask(std::span<const std::int32_t> parents) {
  const std::size_t n = parents.size();
  std::vector<std::uint8_t> m(n * n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    m[i * n + i] = 1;
    for (std::size_t j = 0; j < n; ++j) {
      // j is an ancestor of i if walking up from i reaches j.
      for (std::int32_t a = parents[i]; a != kNoParent; a = parents[static_cast<std::size_t>(a)])
        if (static_cast<std::size_t>(a) == j) m[i * n + j] = 1;
    }
  }
  return m;
}

/// Longest root-to-node chain whose every token equals the prediction made
/// at its parent.
inline AcceptResult longest_matching_path(const FlattenedDraft& fd, std::span<const TokenId> preds) {
  std::size_t best = 0;
  std::size_t best_depth = 0;
  for (std::size_t i = 1; i < fd.size(); ++i) {
    bool ok = true;
    for (std::size_t j = i; j != 0; j = static_cast<std::size_t>(fd.parents[j]))
      ok = ok && fd.tokens[j] == preds[static_cast<std::size_t>(fd.parents[j])];
    if (ok && fd.depths[i] > best_depth) {
      best = i;
      best_depth = fd.depths[i];
    }
  }
  AcceptResult r;
  for (std::size_t j = best; j != 0; j = static_cast<std::size_t>(fd.parents[j]))
    r.accepted_path.push_back(static_cast<std::uint32_t>(j));
  std::reverse(r.accepted_path.begin(), r.accepted_path.end());
  r.bonus_token = preds[best];
  return r;
}

/// Deterministic context-dependent target: a hashed order-k Markov model
/// over a small alphabet, so outputs repeat and drafts get accepted.
struct MarkovOracle {
  std::uint32_t alphabet = 6;
  std::uint32_t order = 2;
  std::uint64_t salt = 0;

  TokenId next(std::span<const TokenId> ctx) const {
    std::uint64_t h = 0x9E3779B97F4A7C15ull ^ salt;
    const std::size_t k = std::min<std::size_t>(order, ctx.size());
    for (std::size_t i = ctx.size() - k; i < ctx.size(); ++i) {
      h ^= ctx[i] + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
      h *= 0xBF58476D1CE4E5B9ull;
    }
    h ^= h >> 31;
    return static_cast<TokenId>(h % alphabet);
  }
};

/// Plain autoregression with the oracle, the reference for losslessness.
template <typename O>
std::vector<TokenId> autoregress(std::span<const TokenId> prompt, const O& oracle, std::size_t n) {
  std::vector<TokenId> ctx(prompt.begin(), prompt.end());
  for (std::size_t i = 0; i < n; ++i) ctx.push_back(oracle.next(ctx));
  return {ctx.begin() + static_cast<std::ptrdiff_t>(prompt.size()), ctx.end()};
}

inline std::vector<TokenId> random_tokens(std::mt19937_64& rng, std::size_t n, std::uint32_t alphabet,
                                          TokenId offset = 0) {
  std::uniform_int_distribution<std::uint32_t> d(0, alphabet - 1);
  std::vector<TokenId> v(n);
  for (auto& x : v) x = offset + d(rng);
  return v;
}

/// Random source tree with small counts so equal probabilities are common.
inline ContinuationTree random_tree(std::mt19937_64& rng, std::uint32_t alphabet, std::size_t max_paths,
                                    std::uint32_t max_depth) {
  ContinuationTree t;
  std::uniform_int_distribution<std::size_t> np(0, max_paths);
  std::uniform_int_distribution<std::uint32_t> len(0, max_depth);
  const std::size_t paths = np(rng);
  for (std::size_t i = 0; i < paths; ++i) {
    auto p = random_tokens(rng, len(rng), alphabet);
    t.add_path(p);
  }
  return t;
}

}  // namespace specdraft::testing
