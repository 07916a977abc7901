#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "specdraft/fusion.hpp"
#include "specdraft/types.hpp"

namespace specdraft {

/// Verification input for one step: candidates in depth-first order plus the
/// tree-attention mask (row i attends to i's ancestors and itself).
struct FlattenedDraft {
  std::vector<TokenId> tokens;
  std::vector<std::int32_t> parents;
  std::vector<std::uint32_t> depths;
  std::vector<std::uint8_t> mask;  // row-major size() x size(), 0/1

  std::size_t size() const noexcept { return tokens.size(); }
  bool attends(std::size_t i, std::size_t j) const { return mask[i * size() + j] != 0; }

  friend bool operator==(const FlattenedDraft&, const FlattenedDraft&) = default;
};

/// Depth-first flattening with children visited in insertion order.
inline FlattenedDraft flatten(const DraftTree& tree) {
  FlattenedDraft fd;
  const std::size_t n = tree.size();
  fd.tokens.reserve(n);
  fd.parents.reserve(n);
  fd.depths.reserve(n);
  fd.mask.assign(n * n, 0);

  // (tree node, flat parent)
  std::vector<std::pair<std::uint32_t, std::int32_t>> stack{{0, kNoParent}};
  while (!stack.empty()) {
    auto [node, parent] = stack.back();
    stack.pop_back();
    const auto row = static_cast<std::int32_t>(fd.tokens.size());
    fd.tokens.push_back(tree.node(node).token);
    fd.parents.push_back(parent);
    fd.depths.push_back(parent == kNoParent ? 0 : fd.depths[static_cast<std::size_t>(parent)] + 1);
    if (parent != kNoParent) {
      const auto* src = &fd.mask[static_cast<std::size_t>(parent) * n];
      std::copy(src, src + n, fd.mask.begin() + static_cast<std::ptrdiff_t>(row) * static_cast<std::ptrdiff_t>(n));
    }
    fd.mask[static_cast<std::size_t>(row) * n + static_cast<std::size_t>(row)] = 1;
    const auto& kids = tree.node(node).children;
    for (auto it = kids.rbegin(); it != kids.rend(); ++it) stack.emplace_back(*it, row);
  }
  return fd;
}

struct AcceptResult {
  std::vector<std::uint32_t> accepted_path;  // flat indices, root excluded
  TokenId bonus_token = 0;

  std::size_t tokens_emitted() const noexcept { return accepted_path.size() + 1; }

  /// Accepted candidate tokens followed by the bonus token.
  std::vector<TokenId> emitted(const FlattenedDraft& fd) const {
    std::vector<TokenId> out;
    out.reserve(tokens_emitted());
    for (auto i : accepted_path) out.push_back(fd.tokens[i]);
    out.push_back(bonus_token);
    return out;
  }

  friend bool operator==(const AcceptResult&, const AcceptResult&) = default;
};

/// Greedy acceptance: follow the child whose token equals the target's
/// prediction at the current node until no child matches.
inline AcceptResult verify_greedy(const FlattenedDraft& fd, std::span<const TokenId> node_predictions) {
  if (node_predictions.size() != fd.size())
    throw std::invalid_argument("verify_greedy: expected " + std::to_string(fd.size()) + " predictions, got " +
                                std::to_string(node_predictions.size()));
  AcceptResult r;
  std::size_t cur = 0;
  for (;;) {
    const TokenId want = node_predictions[cur];
    std::size_t next = 0;
    for (std::size_t i = cur + 1; i < fd.size(); ++i) {
      if (fd.parents[i] == static_cast<std::int32_t>(cur) && fd.tokens[i] == want) {
        next = i;
        break;
      }
    }
    if (next == 0) {
      r.bonus_token = want;
      return r;
    }
    r.accepted_path.push_back(static_cast<std::uint32_t>(next));
    cur = next;
  }
}

/// Bit-packed mask: u64 little-endian side length, then row-major bits,
/// least significant bit first within each byte.
inline std::vector<std::uint8_t> pack_mask(const FlattenedDraft& fd) {
  const std::uint64_t n = fd.size();
  std::vector<std::uint8_t> out(8 + (n * n + 7) / 8, 0);
  for (int i = 0; i < 8; ++i) out[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>((n >> (8 * i)) & 0xFF);
  for (std::uint64_t b = 0; b < n * n; ++b)
    if (fd.mask[b]) out[8 + b / 8] |= static_cast<std::uint8_t>(1u << (b % 8));
  return out;
}

/// Inverse of pack_mask; returns the row-major 0/1 mask and its side length.
inline std::pair<std::uint64_t, std::vector<std::uint8_t>> unpack_mask(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw FormatError("length", "truncated");
  std::uint64_t n = 0;
  for (int i = 0; i < 8; ++i) n |= static_cast<std::uint64_t>(bytes[static_cast<std::size_t>(i)]) << (8 * i);
  if (n > (1u << 20) || bytes.size() != 8 + (n * n + 7) / 8) throw FormatError("mask", "truncated");
  std::vector<std::uint8_t> mask(n * n);
  for (std::uint64_t b = 0; b < n * n; ++b) mask[b] = (bytes[8 + b / 8] >> (b % 8)) & 1u;
  return {n, std::move(mask)};
}

inline nlohmann::json to_json(const FlattenedDraft& fd) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < fd.size(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t j = 0; j < fd.size(); ++j) row.push_back(fd.attends(i, j) ? 1 : 0);
    rows.push_back(std::move(row));
  }
  return {{"tokens", fd.tokens}, {"parents", fd.parents}, {"depths", fd.depths}, {"mask", std::move(rows)}};
}

}  // namespace specdraft
