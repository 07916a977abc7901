#pragma once

#include <chrono>
#include <concepts>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "specdraft/datastore.hpp"
#include "specdraft/draft.hpp"
#include "specdraft/fusion.hpp"
#include "specdraft/input_cache.hpp"

namespace specdraft {

/// A target model reduced to its greedy next-token function. Must be
/// deterministic for a given context.
template <typename O>
concept GreedyOracle = requires(const O& o, std::span<const TokenId> ctx) {
  { o.next(ctx) } -> std::convertible_to<TokenId>;
};

/// Everything retrieval produces for one step, before verification.
struct DraftProposal {
  DraftTree tree;
  FlattenedDraft flat;
};

/// One generation request: the running sequence, its input cache and a
/// shared read-only datastore (may be null to disable that source).
class Session {
public:
  Session(const Datastore* datastore, FusionConfig cfg, std::span<const TokenId> prompt)
      : datastore_(datastore),
        cfg_(cfg),
        cache_(cfg.max_prefix_len, cfg.input_branch_len),
        sequence_(prompt.begin(), prompt.end()) {
    cfg_.validate();
    cache_.append(prompt);
  }

  std::span<const TokenId> sequence() const noexcept { return sequence_; }
  const FusionConfig& config() const noexcept { return cfg_; }
  const InputCache& cache() const noexcept { return cache_; }

  /// Retrieval + fusion + flattening for the current sequence. Requires a
  /// non-empty sequence.
  DraftProposal propose() const {
    if (sequence_.empty()) throw std::logic_error("propose: empty sequence");
    const std::size_t p = std::min<std::size_t>(cfg_.max_prefix_len, sequence_.size());
    auto prefix = std::span<const TokenId>(sequence_).subspan(sequence_.size() - p);

    ContinuationTree ds_tree;
    std::vector<ContinuationTree> input_trees;
    if (cfg_.dec_len > 1) {
      if (cfg_.use_datastore && datastore_ != nullptr && cfg_.effective_branch_len() > 0)
        ds_tree = datastore_->get_conts(prefix, cfg_.datastore_query());
      if (cfg_.use_input) input_trees = cache_.get_conts();
    }
    DraftTree tree = merge(prefix.back(), ds_tree, input_trees, cfg_);
    FlattenedDraft flat = flatten(tree);
    return {std::move(tree), std::move(flat)};
  }

  /// Target predictions at every flattened node, one oracle call per node
  /// with the context extended by the node's path.
  template <GreedyOracle O>
  std::vector<TokenId> predict(const FlattenedDraft& fd, const O& oracle) const {
    std::vector<TokenId> preds(fd.size());
    std::vector<TokenId> ctx = sequence_;
    const std::size_t base = ctx.size();
    for (std::size_t i = 0; i < fd.size(); ++i) {
      ctx.resize(base + fd.depths[i]);
      // Write the path bottom-up; parents precede children so this is cheap.
      for (std::int32_t j = static_cast<std::int32_t>(i); fd.parents[static_cast<std::size_t>(j)] != kNoParent;
           j = fd.parents[static_cast<std::size_t>(j)])
        ctx[base + fd.depths[static_cast<std::size_t>(j)] - 1] = fd.tokens[static_cast<std::size_t>(j)];
      preds[i] = oracle.next(ctx);
    }
    return preds;
  }

  /// Appends tokens to the sequence and the input cache.
  void advance(std::span<const TokenId> tokens) {
    sequence_.insert(sequence_.end(), tokens.begin(), tokens.end());
    cache_.append(tokens);
  }

  struct StepOutcome {
    AcceptResult result;
    std::vector<TokenId> emitted;
    double retrieval_seconds = 0.0;
    std::size_t draft_size = 1;
  };

  /// One simulated forward pass: draft, verify against `oracle`, advance.
  template <GreedyOracle O>
  StepOutcome step(const O& oracle) {
    StepOutcome out;
    if (sequence_.empty()) {
      // Nothing to match against yet: plain autoregressive step.
      out.result.bonus_token = oracle.next(std::span<const TokenId>{});
      out.emitted = {out.result.bonus_token};
      advance(out.emitted);
      return out;
    }
    auto t0 = std::chrono::steady_clock::now();
    DraftProposal prop = propose();
    out.retrieval_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.draft_size = prop.flat.size();
    std::vector<TokenId> preds = predict(prop.flat, oracle);
    out.result = verify_greedy(prop.flat, preds);
    out.emitted = out.result.emitted(prop.flat);
    advance(out.emitted);
    return out;
  }

private:
  const Datastore* datastore_;
  FusionConfig cfg_;
  InputCache cache_;
  std::vector<TokenId> sequence_;
};

/// Replays a recorded reference: the prediction after `prompt_len + k`
/// tokens is reference[k], whatever the context holds. Past the end it
/// returns `end_token`.
class TeacherForcedOracle {
public:
  TeacherForcedOracle(std::size_t prompt_len, std::span<const TokenId> reference, TokenId end_token = 0xFFFFFFFFu)
      : prompt_len_(prompt_len), reference_(reference), end_token_(end_token) {}

  TokenId next(std::span<const TokenId> ctx) const {
    if (ctx.size() < prompt_len_) throw std::logic_error("TeacherForcedOracle: context shorter than prompt");
    const std::size_t k = ctx.size() - prompt_len_;
    return k < reference_.size() ? reference_[k] : end_token_;
  }

private:
  std::size_t prompt_len_;
  std::span<const TokenId> reference_;
  TokenId end_token_;
};

}  // namespace specdraft
