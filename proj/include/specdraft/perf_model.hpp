#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace specdraft::perf {

/// Dense decoder-only transformer dimensions (query and KV heads equal).
struct ModelSpec {
  double h = 4096;          // hidden size, = n * d
  double n = 32;            // heads
  double d = 128;           // per-head size
  double h_mlp = 11008;     // MLP intermediate size
  double n_layers = 32;
  double bytes_per_param = 2;

  static ModelSpec llama2_7b() { return {}; }

  void validate() const {
    if (!(h > 0 && n > 0 && d > 0 && h_mlp > 0 && n_layers > 0 && bytes_per_param > 0))
      throw std::invalid_argument("ModelSpec: all dimensions must be positive");
    if (std::abs(n * d - h) > 1e-9 * h) throw std::invalid_argument("ModelSpec: h must equal n * d");
  }
};

struct HardwareSpec {
  double peak_flops = 280e12;     // FLOP/s
  double mem_bandwidth = 0.8e12;  // bytes/s

  static HardwareSpec ascend_910b4() { return {}; }

  double ridge() const noexcept { return peak_flops / mem_bandwidth; }

  void validate() const {
    if (!(peak_flops > 0 && mem_bandwidth > 0)) throw std::invalid_argument("HardwareSpec: values must be positive");
  }
};

enum class Op : std::uint8_t { QProj, KProj, VProj, Attention, OProj, Mlp };
inline constexpr std::array<Op, 6> kAllOps{Op::QProj, Op::KProj, Op::VProj, Op::Attention, Op::OProj, Op::Mlp};

constexpr std::string_view op_name(Op op) {
  switch (op) {
    case Op::QProj: return "q_proj";
    case Op::KProj: return "k_proj";
    case Op::VProj: return "v_proj";
    case Op::Attention: return "attention";
    case Op::OProj: return "o_proj";
    case Op::Mlp: return "mlp";
  }
  return "?";
}

constexpr bool is_projection(Op op) { return op != Op::Attention && op != Op::Mlp; }

/// Per-layer cost of one operator.
struct CostRow {
  double flops = 0;
  double bytes_read = 0;
  double bytes_written = 0;
  double bytes_per_element = 2;

  double bytes() const noexcept { return bytes_read + bytes_written; }
  /// FLOPs per element moved, the unit used by the closed forms.
  double flops_to_io() const noexcept { return flops / (bytes() / bytes_per_element); }

  friend bool operator==(const CostRow&, const CostRow&) = default;
};

struct CostTable {
  std::array<CostRow, 6> rows{};

  const CostRow& operator[](Op op) const { return rows[static_cast<std::size_t>(op)]; }
  CostRow& operator[](Op op) { return rows[static_cast<std::size_t>(op)]; }

  double total_flops() const {
    double s = 0;
    for (const auto& r : rows) s += r.flops;
    return s;
  }
  double total_bytes() const {
    double s = 0;
    for (const auto& r : rows) s += r.bytes();
    return s;
  }
};

struct CostOptions {
  bool include_mask = false;  // adds b * s_q * s_q bits to the attention read
};

inline void check_shape(double b, double s_q, double s_kv) {
  if (!(b >= 1 && s_q >= 1 && s_kv >= 0)) throw std::invalid_argument("op_costs: need b >= 1, s_q >= 1, s_kv >= 0");
}

/// Per-layer FLOPs and memory traffic for a decode step with batch `b`,
/// `s_q` query tokens per sequence and `s_kv` cached tokens.
inline CostTable op_costs(const ModelSpec& m, double b, double s_q, double s_kv, CostOptions opts = {}) {
  m.validate();
  check_shape(b, s_q, s_kv);
  const double e = m.bytes_per_param;
  const double tokens = b * s_q;
  CostTable t;

  CostRow proj;
  proj.flops = 2 * tokens * m.h * m.h;
  proj.bytes_read = (tokens * m.h + m.h * m.h) * e;
  proj.bytes_written = tokens * m.h * e;
  proj.bytes_per_element = e;
  t[Op::QProj] = t[Op::KProj] = t[Op::VProj] = t[Op::OProj] = proj;

  CostRow& att = t[Op::Attention];
  att.flops = 4 * tokens * (s_q + s_kv) * m.n * m.d;
  att.bytes_read = b * m.n * (2 * s_kv + 3 * s_q) * m.d * e;
  if (opts.include_mask) att.bytes_read += std::ceil(b * s_q * s_q / 8.0);
  att.bytes_written = b * m.n * s_q * m.d * e;
  att.bytes_per_element = e;

  CostRow& mlp = t[Op::Mlp];
  mlp.flops = 4 * tokens * m.h * m.h_mlp;
  mlp.bytes_read = (tokens * m.h + 2 * m.h * m.h_mlp) * e;
  mlp.bytes_written = tokens * m.h * e;
  mlp.bytes_per_element = e;
  return t;
}

/// Roofline time of one operator: bound by compute or by memory.
inline double roofline_seconds(const HardwareSpec& hw, const CostRow& row) {
  return std::max(row.flops / hw.peak_flops, row.bytes() / hw.mem_bandwidth);
}

/// Whole-model time per operator (all layers).
inline std::array<double, 6> forward_breakdown(const HardwareSpec& hw, const ModelSpec& m, double b, double s_q,
                                               double s_kv, CostOptions opts = {}) {
  hw.validate();
  const CostTable t = op_costs(m, b, s_q, s_kv, opts);
  std::array<double, 6> out{};
  for (Op op : kAllOps) out[static_cast<std::size_t>(op)] = m.n_layers * roofline_seconds(hw, t[op]);
  return out;
}

inline double forward_time(const HardwareSpec& hw, const ModelSpec& m, double b, double s_q, double s_kv,
                           CostOptions opts = {}) {
  double s = 0;
  for (double v : forward_breakdown(hw, m, b, s_q, s_kv, opts)) s += v;
  return s;
}

/// forward_time(s_q) / forward_time(1).
inline double relative_cost(const HardwareSpec& hw, const ModelSpec& m, double b, double s_q, double s_kv,
                            CostOptions opts = {}) {
  return forward_time(hw, m, b, s_q, s_kv, opts) / forward_time(hw, m, b, 1, s_kv, opts);
}

/// Largest b * s_q for which the projection matmuls stay memory-bound:
/// solves 1 / (bytes * (1/h + 1/(2x))) = peak / bandwidth for x. Returns
/// +inf when the projections can never become compute-bound.
inline double free_budget(const HardwareSpec& hw, const ModelSpec& m) {
  hw.validate();
  m.validate();
  const double denom = 1.0 / (m.bytes_per_param * hw.ridge()) - 1.0 / m.h;
  if (denom <= 0) return std::numeric_limits<double>::infinity();
  return 1.0 / (2.0 * denom);
}

struct SpeedupPoint {
  std::uint32_t s_q = 1;
  double speedup = 1.0;
  friend bool operator==(const SpeedupPoint&, const SpeedupPoint&) = default;
};

/// argmax over s_q of accept(s_q) / cost(s_q); ties go to the smaller s_q.
inline SpeedupPoint expected_speedup(const std::map<std::uint32_t, double>& accept,
                                     const std::map<std::uint32_t, double>& cost) {
  if (accept.size() != cost.size() || !std::equal(accept.begin(), accept.end(), cost.begin(),
                                                  [](const auto& a, const auto& c) { return a.first == c.first; }))
    throw std::invalid_argument("expected_speedup: curves have different s_q domains");
  if (!accept.contains(1)) throw std::invalid_argument("expected_speedup: domain must contain s_q = 1");
  SpeedupPoint best{0, -std::numeric_limits<double>::infinity()};
  for (const auto& [s_q, a] : accept) {
    const double c = cost.at(s_q);
    if (!(c > 0)) throw std::invalid_argument("expected_speedup: cost must be positive");
    const double v = a / c;
    if (v > best.speedup) best = {s_q, v};
  }
  return best;
}

/// Locations of slope changes in a curve sampled at x = first_x, first_x+1,
/// ... Each kink is placed at the intersection of the straight segments on
/// either side of it, so a kink between two samples gets a fractional x.
inline std::vector<double> slope_breakpoints(std::span<const double> y, double first_x = 1.0, double rel_tol = 1e-6) {
  std::vector<double> out;
  if (y.size() < 3) return out;
  std::vector<double> slope(y.size() - 1);
  for (std::size_t i = 0; i + 1 < y.size(); ++i) slope[i] = y[i + 1] - y[i];
  auto changes = [&](std::size_t k) {  // slope into k differs from slope out of k
    const double a = slope[k - 1], c = slope[k];
    return std::abs(c - a) > rel_tol * std::max({std::abs(a), std::abs(c), 1e-300});
  };
  std::size_t k = 1;
  while (k + 1 < y.size()) {
    if (!changes(k)) {
      ++k;
      continue;
    }
    std::size_t last = k;
    while (last + 2 < y.size() && changes(last + 1)) ++last;
    const double left = slope[k - 1], right = slope[last];
    const double xk = static_cast<double>(k), xl = static_cast<double>(last);
    double x = xk;
    if (left != right) x = (y[last] - y[k] - xl * right + xk * left) / (left - right);
    out.push_back(x + first_x);
    k = last + 1;
  }
  return out;
}

}  // namespace specdraft::perf
