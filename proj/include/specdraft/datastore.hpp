#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "specdraft/continuation_tree.hpp"
#include "specdraft/types.hpp"

namespace specdraft {

struct DatastoreQueryConfig {
  std::uint32_t max_prefix_len = 4;       // P
  std::uint32_t sample_cap = 100;         // M, per prefix length
  std::uint32_t min_continuations = 16;   // T
  std::uint32_t branch_len = 8;
  std::optional<TokenId> separator;       // continuations stop before this token

  void validate() const {
    if (max_prefix_len < 1) throw std::invalid_argument("max_prefix_len must be >= 1");
    if (sample_cap < 1) throw std::invalid_argument("sample_cap must be >= 1");
    if (branch_len < 1) throw std::invalid_argument("branch_len must be >= 1");
  }
};

/// Half-open range [lo, hi) of suffix-array entries.
struct SuffixRange {
  std::uint64_t lo = 0;
  std::uint64_t hi = 0;
  std::uint64_t size() const noexcept { return hi - lo; }
  bool empty() const noexcept { return lo == hi; }
  friend bool operator==(const SuffixRange&, const SuffixRange&) = default;
};

/// Evenly spaced picks from [lo, hi): everything when the range fits in
/// `cap`, otherwise lo + floor(k * (hi - lo) / cap) for k in [0, cap).
inline std::vector<std::uint64_t> sample_range(std::uint64_t lo, std::uint64_t hi, std::uint64_t cap) {
  if (hi < lo) throw std::invalid_argument("sample_range: hi < lo");
  std::vector<std::uint64_t> out;
  const std::uint64_t len = hi - lo;
  if (len <= cap) {
    out.reserve(len);
    for (std::uint64_t i = lo; i < hi; ++i) out.push_back(i);
    return out;
  }
  out.reserve(cap);
  for (std::uint64_t k = 0; k < cap; ++k) {
    // k * len can overflow 64 bits only for absurd corpora; widen anyway.
    auto off = static_cast<std::uint64_t>((static_cast<unsigned __int128>(k) * len) / cap);
    out.push_back(lo + off);
  }
  return out;
}

namespace detail {

/// Prefix-doubling suffix array with counting-sort passes, O(n log n).
/// Shorter suffixes sort before longer ones that extend them.
inline std::vector<std::uint64_t> build_suffix_array(std::span<const TokenId> text) {
  const std::size_t n = text.size();
  std::vector<std::uint64_t> sa(n), tmp(n);
  if (n == 0) return sa;

  // Initial ranks: dense token ranks.
  std::vector<TokenId> alphabet(text.begin(), text.end());
  std::sort(alphabet.begin(), alphabet.end());
  alphabet.erase(std::unique(alphabet.begin(), alphabet.end()), alphabet.end());
  std::vector<std::uint64_t> rank(n), next_rank(n);
  for (std::size_t i = 0; i < n; ++i)
    rank[i] = static_cast<std::uint64_t>(
        std::lower_bound(alphabet.begin(), alphabet.end(), text[i]) - alphabet.begin());
  std::size_t classes = alphabet.size();

  std::vector<std::uint64_t> cnt;
  auto counting_sort = [&](const std::vector<std::uint64_t>& in, std::vector<std::uint64_t>& out) {
    cnt.assign(classes + 1, 0);
    for (std::uint64_t p : in) ++cnt[rank[p] + 1];
    for (std::size_t c = 1; c <= classes; ++c) cnt[c] += cnt[c - 1];
    for (std::uint64_t p : in) out[cnt[rank[p]]++] = p;
  };

  for (std::size_t i = 0; i < n; ++i) tmp[i] = i;
  counting_sort(tmp, sa);

  for (std::size_t k = 1; classes < n; k <<= 1) {
    // Order by second key: suffixes with no second half come first.
    std::size_t p = 0;
    for (std::size_t i = n - std::min(k, n); i < n; ++i) tmp[p++] = i;
    for (std::uint64_t j : sa)
      if (j >= k) tmp[p++] = j - k;
    counting_sort(tmp, sa);

    auto key2 = [&](std::uint64_t i) -> std::int64_t {
      return i + k < n ? static_cast<std::int64_t>(rank[i + k]) : -1;
    };
    next_rank[sa[0]] = 0;
    std::size_t c = 0;
    for (std::size_t i = 1; i < n; ++i) {
      const std::uint64_t a = sa[i - 1], b = sa[i];
      if (rank[a] != rank[b] || key2(a) != key2(b)) ++c;
      next_rank[b] = c;
    }
    rank.swap(next_rank);
    classes = c + 1;
  }
  return sa;
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
  std::array<char, 4> b{};
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b.data(), b.size());
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  std::array<char, 8> b{};
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b.data(), b.size());
}

inline std::uint64_t get_le(const unsigned char* p, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace detail

/// Immutable token corpus plus its suffix array. All query methods are const
/// and safe to call from any number of threads.
class Datastore {
public:
  static constexpr std::array<char, 4> kMagic{'S', 'S', 'S', 'D'};
  static constexpr std::uint32_t kVersion = 1;

  Datastore() = default;

  static Datastore build(std::vector<TokenId> corpus, std::optional<std::uint32_t> vocab_size = {}) {
    if (corpus.empty()) throw std::invalid_argument("empty corpus");
    if (vocab_size && *vocab_size == 0) vocab_size.reset();
    if (vocab_size) {
      for (std::size_t i = 0; i < corpus.size(); ++i)
        if (corpus[i] >= *vocab_size)
          throw std::invalid_argument("token " + std::to_string(corpus[i]) + " at position " +
                                      std::to_string(i) + " exceeds vocab_size");
    }
    Datastore ds;
    ds.suffix_index_ = detail::build_suffix_array(corpus);
    ds.tokens_ = std::move(corpus);
    ds.vocab_size_ = vocab_size;
    return ds;
  }

  std::span<const TokenId> tokens() const noexcept { return tokens_; }
  std::span<const std::uint64_t> suffix_index() const noexcept { return suffix_index_; }
  std::optional<std::uint32_t> vocab_size() const noexcept { return vocab_size_; }
  std::size_t n_tokens() const noexcept { return tokens_.size(); }

  /// Suffix-array entries whose suffix starts with `prefix`. Suffixes shorter
  /// than the prefix never match.
  SuffixRange find_range(std::span<const TokenId> prefix) const {
    if (prefix.empty()) throw std::invalid_argument("find_range: empty prefix");
    auto lo = std::partition_point(suffix_index_.begin(), suffix_index_.end(),
                                   [&](std::uint64_t pos) { return compare(pos, prefix) < 0; });
    auto hi = std::partition_point(lo, suffix_index_.end(),
                                   [&](std::uint64_t pos) { return compare(pos, prefix) == 0; });
    return {static_cast<std::uint64_t>(lo - suffix_index_.begin()),
            static_cast<std::uint64_t>(hi - suffix_index_.begin())};
  }

  /// Continuation tree for the tail of `prefix`. Starts at the longest usable
  /// prefix length and shortens while fewer than `min_continuations` samples
  /// have been collected; per-length trees are summed edge-wise.
  ContinuationTree get_conts(std::span<const TokenId> prefix, const DatastoreQueryConfig& cfg) const {
    cfg.validate();
    if (prefix.empty()) throw std::invalid_argument("get_conts: empty prefix");
    ContinuationTree tree;
    std::vector<TokenId> cont;
    cont.reserve(cfg.branch_len);
    const std::size_t longest = std::min<std::size_t>(cfg.max_prefix_len, prefix.size());
    for (std::size_t p = longest; p >= 1; --p) {
      auto tail = prefix.subspan(prefix.size() - p);
      SuffixRange r = find_range(tail);
      for (std::uint64_t idx : sample_range(r.lo, r.hi, cfg.sample_cap)) {
        const std::uint64_t start = suffix_index_[idx] + p;
        const std::uint64_t end = std::min<std::uint64_t>(start + cfg.branch_len, tokens_.size());
        cont.clear();
        for (std::uint64_t i = start; i < end; ++i) {
          if (cfg.separator && tokens_[i] == *cfg.separator) break;
          cont.push_back(tokens_[i]);
        }
        tree.add_path(cont);
      }
      if (tree.root_count() >= cfg.min_continuations) break;
    }
    return tree;
  }

  /// Checks the suffix-array invariants (permutation + sorted order).
  bool is_valid() const {
    const std::size_t n = tokens_.size();
    if (suffix_index_.size() != n) return false;
    std::vector<bool> seen(n, false);
    for (std::uint64_t p : suffix_index_) {
      if (p >= n || seen[p]) return false;
      seen[p] = true;
    }
    for (std::size_t i = 1; i < n; ++i) {
      auto a = tokens_.begin() + static_cast<std::ptrdiff_t>(suffix_index_[i - 1]);
      auto b = tokens_.begin() + static_cast<std::ptrdiff_t>(suffix_index_[i]);
      if (std::lexicographical_compare(b, tokens_.end(), a, tokens_.end())) return false;
    }
    return true;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    os.write(kMagic.data(), kMagic.size());
    detail::put_u32(os, kVersion);
    detail::put_u32(os, vocab_size_.value_or(0));
    detail::put_u64(os, tokens_.size());
    for (TokenId t : tokens_) detail::put_u32(os, t);
    for (std::uint64_t p : suffix_index_) detail::put_u64(os, p);
    if (!os) throw std::runtime_error("write failed: " + path.string());
  }

  static Datastore load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return from_bytes(buf);
  }

  static Datastore from_bytes(std::span<const unsigned char> buf) {
    constexpr std::size_t kHeader = 4 + 4 + 4 + 8;
    if (buf.size() < 4) throw FormatError("magic", "truncated");
    if (std::memcmp(buf.data(), kMagic.data(), 4) != 0) throw FormatError("magic", "bad magic");
    if (buf.size() < kHeader) throw FormatError("header", "truncated");
    const auto version = static_cast<std::uint32_t>(detail::get_le(buf.data() + 4, 4));
    if (version != kVersion)
      throw FormatError("version", "unsupported version " + std::to_string(version));
    const auto vocab = static_cast<std::uint32_t>(detail::get_le(buf.data() + 8, 4));
    const std::uint64_t n = detail::get_le(buf.data() + 12, 8);
    if (n == 0) throw FormatError("n_tokens", "empty corpus");

    const std::size_t avail = buf.size() - kHeader;
    if (n > avail / 4) throw FormatError("tokens", "truncated");
    if ((avail - n * 4) / 8 < n) throw FormatError("suffix_index", "truncated");
    if (avail != n * 12) throw FormatError("suffix_index", "trailing bytes");

    Datastore ds;
    ds.tokens_.resize(n);
    ds.suffix_index_.resize(n);
    const unsigned char* p = buf.data() + kHeader;
    for (std::uint64_t i = 0; i < n; ++i, p += 4) {
      ds.tokens_[i] = static_cast<TokenId>(detail::get_le(p, 4));
      if (vocab != 0 && ds.tokens_[i] >= vocab) throw FormatError("tokens", "token exceeds vocab_size");
    }
    std::vector<bool> seen(n, false);
    for (std::uint64_t i = 0; i < n; ++i, p += 8) {
      std::uint64_t pos = detail::get_le(p, 8);
      if (pos >= n || seen[pos]) throw FormatError("suffix_index", "not a permutation");
      seen[pos] = true;
      ds.suffix_index_[i] = pos;
    }
    if (vocab != 0) ds.vocab_size_ = vocab;
    return ds;
  }

  friend bool operator==(const Datastore&, const Datastore&) = default;

private:
  // Compares the suffix at `pos`, truncated to |prefix| tokens, with prefix.
  int compare(std::uint64_t pos, std::span<const TokenId> prefix) const {
    const std::size_t n = tokens_.size();
    for (std::size_t k = 0; k < prefix.size(); ++k) {
      if (pos + k >= n) return -1;
      const TokenId t = tokens_[pos + k];
      if (t != prefix[k]) return t < prefix[k] ? -1 : 1;
    }
    return 0;
  }

  std::vector<TokenId> tokens_;
  std::vector<std::uint64_t> suffix_index_;
  std::optional<std::uint32_t> vocab_size_;
};

/// Reads a token stream: raw little-endian u32 when the extension is ".tok",
/// whitespace-separated decimal IDs otherwise.
inline std::vector<TokenId> read_token_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::vector<TokenId> out;
  if (path.extension() == ".tok") {
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (buf.size() % 4 != 0) throw FormatError("tokens", "truncated");
    out.reserve(buf.size() / 4);
    for (std::size_t i = 0; i < buf.size(); i += 4)
      out.push_back(static_cast<TokenId>(detail::get_le(buf.data() + i, 4)));
    return out;
  }
  std::string word;
  std::size_t index = 0;
  while (is >> word) {
    std::uint64_t v = 0;
    bool ok = !word.empty() && word.size() <= 10;
    for (char c : word) {
      if (!std::isdigit(static_cast<unsigned char>(c))) ok = false;
      else v = v * 10 + static_cast<std::uint64_t>(c - '0');
    }
    if (!ok || v > 0xFFFFFFFFull)
      throw FormatError("tokens", "invalid token '" + word + "' at index " + std::to_string(index));
    out.push_back(static_cast<TokenId>(v));
    ++index;
  }
  return out;
}

inline void write_token_file(const std::filesystem::path& path, std::span<const TokenId> tokens) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (TokenId t : tokens) detail::put_u32(os, t);
}

}  // namespace specdraft
