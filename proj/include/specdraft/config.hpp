#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "specdraft/fusion.hpp"
#include "specdraft/perf_model.hpp"
#include "specdraft/types.hpp"

namespace specdraft {

/// Flat `key = value` text; `#` starts a comment. Keys keep file order of
/// first appearance in `order`.
struct KeyValues {
  std::map<std::string, std::string> values;
  std::map<std::string, std::size_t> line_of;
  std::vector<std::string> order;

  bool has(const std::string& k) const { return values.contains(k); }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace detail

inline KeyValues parse_key_values(std::istream& is) {
  KeyValues kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw FormatError("line " + std::to_string(lineno), "expected key = value");
    std::string key = detail::trim(std::string_view(t).substr(0, eq));
    std::string val = detail::trim(std::string_view(t).substr(eq + 1));
    if (key.empty()) throw FormatError("line " + std::to_string(lineno), "empty key");
    if (kv.values.contains(key)) throw FormatError(key, "duplicate key on line " + std::to_string(lineno));
    kv.values.emplace(key, val);
    kv.line_of.emplace(key, lineno);
    kv.order.push_back(key);
  }
  return kv;
}

inline KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return parse_key_values(is);
}

inline double parse_double(const std::string& key, const std::string& text) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size()) throw FormatError(key, "not a number: '" + text + "'");
  return v;
}

inline std::uint32_t parse_u32(const std::string& key, const std::string& text) {
  std::uint32_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size())
    throw FormatError(key, "not an unsigned integer: '" + text + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "1" || text == "true") return true;
  if (text == "0" || text == "false") return false;
  throw FormatError(key, "not a boolean: '" + text + "'");
}

/// Canonical key order for FusionConfig files and grids.
inline const std::vector<std::string>& fusion_keys() {
  static const std::vector<std::string> keys{"P",     "dec_len", "branch_len", "input_branch_len",
                                             "M",     "T",       "alpha",      "beta",
                                             "gamma_ds", "gamma_in", "use_datastore", "use_input"};
  return keys;
}

/// Sets one FusionConfig field from its textual value.
inline void set_fusion_key(FusionConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "P") cfg.max_prefix_len = parse_u32(key, value);
  else if (key == "dec_len") cfg.dec_len = parse_u32(key, value);
  else if (key == "branch_len") cfg.branch_len = parse_u32(key, value);
  else if (key == "input_branch_len") cfg.input_branch_len = parse_u32(key, value);
  else if (key == "M") cfg.sample_cap = parse_u32(key, value);
  else if (key == "T") cfg.min_continuations = parse_u32(key, value);
  else if (key == "alpha") cfg.input_scale = parse_double(key, value);
  else if (key == "beta") cfg.prefix_len_decay = parse_double(key, value);
  else if (key == "gamma_ds") cfg.depth_decay_datastore = parse_double(key, value);
  else if (key == "gamma_in") cfg.depth_decay_input = parse_double(key, value);
  else if (key == "use_datastore") cfg.use_datastore = parse_bool(key, value);
  else if (key == "use_input") cfg.use_input = parse_bool(key, value);
  else throw FormatError(key, "unknown config key");
}

inline FusionConfig fusion_config_from(const KeyValues& kv, FusionConfig base = {}) {
  for (const auto& key : kv.order) set_fusion_key(base, key, kv.values.at(key));
  base.validate();
  return base;
}

inline std::string format_number(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline std::string to_config_text(const FusionConfig& cfg) {
  std::ostringstream os;
  os << "P = " << cfg.max_prefix_len << '\n'
     << "dec_len = " << cfg.dec_len << '\n'
     << "branch_len = " << cfg.branch_len << '\n'
     << "input_branch_len = " << cfg.input_branch_len << '\n'
     << "M = " << cfg.sample_cap << '\n'
     << "T = " << cfg.min_continuations << '\n'
     << "alpha = " << format_number(cfg.input_scale) << '\n'
     << "beta = " << format_number(cfg.prefix_len_decay) << '\n'
     << "gamma_ds = " << format_number(cfg.depth_decay_datastore) << '\n'
     << "gamma_in = " << format_number(cfg.depth_decay_input) << '\n'
     << "use_datastore = " << (cfg.use_datastore ? 1 : 0) << '\n'
     << "use_input = " << (cfg.use_input ? 1 : 0) << '\n';
  return os.str();
}

/// Grid file: same keys as a config, each value a comma-separated list.
/// Expands to the cartesian product in canonical key order, last key
/// varying fastest.
inline std::vector<FusionConfig> expand_grid(const KeyValues& kv, const FusionConfig& base) {
  std::vector<std::pair<std::string, std::vector<std::string>>> axes;
  for (const auto& key : fusion_keys()) {
    if (!kv.has(key)) continue;
    std::vector<std::string> vals;
    std::stringstream ss(kv.values.at(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = detail::trim(item);
      if (item.empty()) throw FormatError(key, "empty grid value");
      vals.push_back(item);
    }
    if (vals.empty()) throw FormatError(key, "empty grid axis");
    axes.emplace_back(key, std::move(vals));
  }
  for (const auto& key : kv.order) {
    bool known = false;
    for (const auto& k : fusion_keys()) known = known || k == key;
    if (!known) throw FormatError(key, "unknown config key");
  }
  std::vector<FusionConfig> out{base};
  for (const auto& [key, vals] : axes) {
    std::vector<FusionConfig> next;
    for (const auto& c : out) {
      for (const auto& v : vals) {
        FusionConfig x = c;
        set_fusion_key(x, key, v);
        next.push_back(x);
      }
    }
    out = std::move(next);
  }
  for (const auto& c : out) c.validate();
  return out;
}

inline perf::ModelSpec model_spec_from(const KeyValues& kv) {
  perf::ModelSpec m;
  for (const auto& key : kv.order) {
    const double v = parse_double(key, kv.values.at(key));
    if (key == "h") m.h = v;
    else if (key == "n") m.n = v;
    else if (key == "d") m.d = v;
    else if (key == "h_mlp") m.h_mlp = v;
    else if (key == "n_layers") m.n_layers = v;
    else if (key == "bytes_per_param") m.bytes_per_param = v;
    else throw FormatError(key, "unknown model key");
  }
  m.validate();
  return m;
}

inline perf::HardwareSpec hardware_spec_from(const KeyValues& kv) {
  perf::HardwareSpec hw;
  for (const auto& key : kv.order) {
    const double v = parse_double(key, kv.values.at(key));
    if (key == "peak_flops") hw.peak_flops = v;
    else if (key == "mem_bandwidth") hw.mem_bandwidth = v;
    else throw FormatError(key, "unknown hardware key");
  }
  hw.validate();
  return hw;
}

}  // namespace specdraft
