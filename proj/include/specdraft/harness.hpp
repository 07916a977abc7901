#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "specdraft/config.hpp"
#include "specdraft/datastore.hpp"
#include "specdraft/draft.hpp"
#include "specdraft/fusion.hpp"
#include "specdraft/session.hpp"

namespace specdraft {

struct SimRecord {
  std::vector<TokenId> prompt;
  std::vector<TokenId> reference;
  friend bool operator==(const SimRecord&, const SimRecord&) = default;
};

/// JSONL with one {"prompt": [...], "reference": [...]} object per line.
/// Blank lines are skipped; errors name the 1-based line.
inline std::vector<SimRecord> parse_dataset(std::istream& is) {
  std::vector<SimRecord> out;
  std::string line;
  std::size_t lineno = 0;
  auto read_tokens = [&](const nlohmann::json& obj, const char* key) {
    const std::string where = "line " + std::to_string(lineno);
    if (!obj.contains(key) || !obj[key].is_array()) throw FormatError(where, std::string("missing array '") + key + "'");
    std::vector<TokenId> v;
    for (const auto& x : obj[key]) {
      if (!x.is_number_unsigned() || x.get<std::uint64_t>() > 0xFFFFFFFFull)
        throw FormatError(where, std::string("non-token value in '") + key + "'");
      v.push_back(x.get<TokenId>());
    }
    return v;
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError("line " + std::to_string(lineno), std::string("invalid JSON: ") + e.what());
    }
    if (!obj.is_object()) throw FormatError("line " + std::to_string(lineno), "expected an object");
    SimRecord r{read_tokens(obj, "prompt"), read_tokens(obj, "reference")};
    if (r.reference.empty()) throw FormatError("line " + std::to_string(lineno), "empty reference");
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<SimRecord> read_dataset(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return parse_dataset(is);
}

inline void write_dataset(std::ostream& os, const std::vector<SimRecord>& data) {
  for (const auto& r : data) os << nlohmann::json{{"prompt", r.prompt}, {"reference", r.reference}}.dump() << '\n';
}

/// Runs fn(i) for i in [0, n) over `threads` workers with static chunks.
/// Each index is handled exactly once, so writes by index are race-free.
inline void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max(1u, threads);
  if (threads == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(threads, n);
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w * n / workers; i < (w + 1) * n / workers; ++i) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct RecordStats {
  std::size_t steps = 0;
  std::size_t tokens_emitted = 0;
  double retrieval_seconds = 0;
  bool lossless = true;  // emitted tokens equal the reference
  std::vector<std::size_t> per_step;

  double mean_accepted_per_step() const {
    return steps == 0 ? 0.0 : static_cast<double>(tokens_emitted) / static_cast<double>(steps);
  }
};

struct SimulationReport {
  FusionConfig config;
  std::vector<RecordStats> records;
  std::size_t total_steps = 0;
  std::size_t total_tokens = 0;
  double retrieval_seconds = 0;

  double mean_accepted_per_step() const {
    return total_steps == 0 ? 0.0 : static_cast<double>(total_tokens) / static_cast<double>(total_steps);
  }
  double retrieval_ms_per_step() const {
    return total_steps == 0 ? 0.0 : 1e3 * retrieval_seconds / static_cast<double>(total_steps);
  }
  bool lossless() const {
    return std::all_of(records.begin(), records.end(), [](const RecordStats& r) { return r.lossless; });
  }
};

inline nlohmann::json to_json(const FusionConfig& c) {
  return {{"P", c.max_prefix_len},
          {"dec_len", c.dec_len},
          {"branch_len", c.branch_len},
          {"input_branch_len", c.input_branch_len},
          {"M", c.sample_cap},
          {"T", c.min_continuations},
          {"alpha", c.input_scale},
          {"beta", c.prefix_len_decay},
          {"gamma_ds", c.depth_decay_datastore},
          {"gamma_in", c.depth_decay_input},
          {"use_datastore", c.use_datastore},
          {"use_input", c.use_input}};
}

/// Report as JSON. Timing fields vary run to run; leave them out when the
/// report must be byte-comparable.
inline nlohmann::json to_json(const SimulationReport& r, bool include_timing = true) {
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& s : r.records) {
    nlohmann::json j{{"steps", s.steps},
                     {"tokens_emitted", s.tokens_emitted},
                     {"mean_accepted_per_step", s.mean_accepted_per_step()},
                     {"lossless", s.lossless}};
    if (include_timing) j["retrieval_ms"] = 1e3 * s.retrieval_seconds;
    recs.push_back(std::move(j));
  }
  nlohmann::json agg{{"steps", r.total_steps},
                     {"tokens_emitted", r.total_tokens},
                     {"mean_accepted_per_step", r.mean_accepted_per_step()},
                     {"lossless", r.lossless()}};
  if (include_timing) {
    agg["retrieval_ms_total"] = 1e3 * r.retrieval_seconds;
    agg["retrieval_ms_per_step"] = r.retrieval_ms_per_step();
  }
  return {{"config", to_json(r.config)}, {"aggregate", std::move(agg)}, {"records", std::move(recs)}};
}

/// Generates one record's reference with the teacher-forced oracle.
inline RecordStats simulate_record(const SimRecord& rec, const Datastore* ds, const FusionConfig& cfg) {
  RecordStats st;
  Session session(ds, cfg, rec.prompt);
  TeacherForcedOracle oracle(rec.prompt.size(), rec.reference);
  while (st.tokens_emitted < rec.reference.size()) {
    auto out = session.step(oracle);
    const std::size_t take = std::min(out.emitted.size(), rec.reference.size() - st.tokens_emitted);
    for (std::size_t i = 0; i < take; ++i)
      st.lossless = st.lossless && out.emitted[i] == rec.reference[st.tokens_emitted + i];
    st.tokens_emitted += take;
    st.per_step.push_back(take);
    ++st.steps;
    st.retrieval_seconds += out.retrieval_seconds;
  }
  return st;
}

/// Teacher-forced simulation of every record. One session per record;
/// `threads` only changes wall-clock time.
inline SimulationReport simulate(std::span<const SimRecord> dataset, const Datastore* ds, const FusionConfig& cfg,
                                 unsigned threads = 1) {
  cfg.validate();
  SimulationReport rep;
  rep.config = cfg;
  rep.records.resize(dataset.size());
  parallel_for(dataset.size(), threads, [&](std::size_t i) { rep.records[i] = simulate_record(dataset[i], ds, cfg); });
  for (const auto& r : rep.records) {
    rep.total_steps += r.steps;
    rep.total_tokens += r.tokens_emitted;
    rep.retrieval_seconds += r.retrieval_seconds;
  }
  return rep;
}

struct SweepPoint {
  std::uint32_t s_q;
  SimulationReport report;
};

inline std::vector<SweepPoint> sweep(std::span<const SimRecord> dataset, const Datastore* ds,
                                     const FusionConfig& base, std::span<const std::uint32_t> s_q_values,
                                     unsigned threads = 1) {
  std::vector<SweepPoint> out;
  for (std::uint32_t s : s_q_values) {
    FusionConfig cfg = base;
    cfg.dec_len = s;
    out.push_back({s, simulate(dataset, ds, cfg, threads)});
  }
  return out;
}

/// `s_q,mean_accepted,retrieval_ms_per_step`
inline std::string curve_csv(std::span<const SweepPoint> points) {
  std::ostringstream os;
  os.precision(10);
  os << "s_q,mean_accepted,retrieval_ms_per_step\n";
  for (const auto& p : points)
    os << p.s_q << ',' << p.report.mean_accepted_per_step() << ',' << p.report.retrieval_ms_per_step() << '\n';
  return os.str();
}

/// Reads the s_q -> mean_accepted columns of a curve CSV.
inline std::map<std::uint32_t, double> parse_curve_csv(std::istream& is) {
  std::map<std::uint32_t, double> out;
  std::string line;
  if (!std::getline(is, line)) throw FormatError("header", "empty curve file");
  if (detail::trim(line).rfind("s_q,mean_accepted", 0) != 0) throw FormatError("header", "unexpected curve header");
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string a, b;
    if (!std::getline(ss, a, ',') || !std::getline(ss, b, ','))
      throw FormatError("line " + std::to_string(lineno), "expected s_q,mean_accepted");
    out[parse_u32("s_q", detail::trim(a))] = parse_double("mean_accepted", detail::trim(b));
  }
  return out;
}

struct CalibrationResult {
  FusionConfig best;
  std::size_t best_index = 0;
  std::vector<double> scores;  // mean accepted tokens per step, per grid point
};

/// Grid search: the config with the highest mean accepted tokens per step.
/// Ties keep the earliest grid point.
inline CalibrationResult calibrate(std::span<const SimRecord> dataset, const Datastore* ds,
                                   std::span<const FusionConfig> grid, unsigned threads = 1) {
  if (dataset.empty()) throw std::invalid_argument("calibrate: empty dataset");
  if (grid.empty()) throw std::invalid_argument("calibrate: empty grid");
  CalibrationResult res;
  double best = -1;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double score = simulate(dataset, ds, grid[i], threads).mean_accepted_per_step();
    res.scores.push_back(score);
    if (score > best) {
      best = score;
      res.best_index = i;
    }
  }
  res.best = grid[res.best_index];
  return res;
}

struct BenchRow {
  std::size_t batch = 0;
  unsigned threads = 1;
  double ms_per_batch = 0;
  double ms_per_request = 0;
  double parallel_efficiency = 1;  // t(threads=1) / (threads * t)
};

struct BenchResult {
  std::vector<BenchRow> rows;
  bool deterministic = true;  // drafts identical across thread counts
  /// Flattened drafts per batch size, from the first thread count.
  std::map<std::size_t, std::vector<FlattenedDraft>> drafts;
};

/// Times retrieval + fusion + flattening for batches of requests. Each
/// workload entry is a request context; its input cache is built outside
/// the timed region.
inline BenchResult bench_retrieval(const Datastore& ds, std::span<const std::vector<TokenId>> workload,
                                   const FusionConfig& cfg, std::span<const std::size_t> batch_sizes,
                                   std::span<const unsigned> thread_counts, unsigned repeats = 3) {
  if (workload.empty()) throw std::invalid_argument("bench_retrieval: empty workload");
  BenchResult res;
  for (std::size_t batch : batch_sizes) {
    std::vector<Session> sessions;
    sessions.reserve(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      const auto& ctx = workload[i % workload.size()];
      if (ctx.empty()) throw std::invalid_argument("bench_retrieval: empty request context");
      sessions.emplace_back(&ds, cfg, ctx);
    }
    double base_ms = 0;
    bool first = true;
    for (unsigned threads : thread_counts) {
      std::vector<FlattenedDraft> drafts(batch);
      double best = INFINITY;
      for (unsigned r = 0; r < std::max(1u, repeats); ++r) {
        auto t0 = std::chrono::steady_clock::now();
        parallel_for(batch, threads, [&](std::size_t i) { drafts[i] = sessions[i].propose().flat; });
        best = std::min(best, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
      }
      if (first) {
        base_ms = best;
        res.drafts[batch] = drafts;
        first = false;
      } else if (drafts != res.drafts[batch]) {
        res.deterministic = false;
      }
      BenchRow row{batch, threads, best, best / static_cast<double>(std::max<std::size_t>(1, batch)), 1.0};
      row.parallel_efficiency = best > 0 ? base_ms / (static_cast<double>(threads) * best) : 1.0;
      res.rows.push_back(row);
    }
  }
  return res;
}

inline std::string bench_csv(const BenchResult& r) {
  std::ostringstream os;
  os.precision(6);
  os << "batch,threads,ms_per_batch,ms_per_request,parallel_efficiency\n";
  for (const auto& row : r.rows)
    os << row.batch << ',' << row.threads << ',' << row.ms_per_batch << ',' << row.ms_per_request << ','
       << row.parallel_efficiency << '\n';
  return os.str();
}

}  // namespace specdraft
