// Command-line front end: datastore construction, simulation, calibration,
// cost planning and retrieval benchmarking.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "specdraft/specdraft.hpp"

using namespace specdraft;

namespace {

FusionConfig load_config(const std::string& path) {
  if (path.empty()) return FusionConfig{};
  return fusion_config_from(read_key_values(path));
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << text;
}

std::vector<TokenId> parse_context(const std::string& text) {
  std::vector<TokenId> out;
  std::istringstream is(text);
  std::string w;
  while (is >> w) out.push_back(static_cast<TokenId>(parse_u32("context", w)));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Retrieval-based speculative drafting toolkit"};
  app.require_subcommand(1);

  // build-datastore
  auto* build = app.add_subcommand("build-datastore", "Build a suffix-array datastore from token files");
  std::vector<std::string> inputs;
  std::string build_out;
  std::uint32_t vocab = 0;
  std::optional<std::uint32_t> separator;
  build->add_option("--in", inputs, ".tok (raw u32 LE) or whitespace-separated text token files")->required();
  build->add_option("--out", build_out, "Output datastore path")->required();
  build->add_option("--vocab-size", vocab, "Declared vocabulary size (0 = undeclared)");
  build->add_option("--separator", separator, "Token inserted between input files");

  // simulate
  auto* sim = app.add_subcommand("simulate", "Teacher-forced acceptance simulation");
  std::string ds_path, data_path, cfg_path, report_path, curve_path;
  std::vector<std::uint32_t> sweep_values;
  unsigned threads = 1;
  sim->add_option("--datastore", ds_path, "Datastore file (omit to use the input source only)");
  sim->add_option("--data", data_path, "JSONL dataset")->required();
  sim->add_option("--config", cfg_path, "Fusion config file");
  sim->add_option("--sweep", sweep_values, "Speculation lengths to sweep")->delimiter(',');
  sim->add_option("--report", report_path, "JSON report output (default stdout)");
  sim->add_option("--curve", curve_path, "CSV acceptance curve output (with --sweep)");
  sim->add_option("--threads", threads, "Worker threads");

  // calibrate
  auto* cal = app.add_subcommand("calibrate", "Grid-search fusion parameters");
  std::string grid_path, cal_out;
  cal->add_option("--datastore", ds_path, "Datastore file");
  cal->add_option("--data", data_path, "JSONL dataset")->required();
  cal->add_option("--grid", grid_path, "Grid file: key = v1, v2, ...")->required();
  cal->add_option("--config", cfg_path, "Base config for keys not in the grid");
  cal->add_option("--out", cal_out, "Write the best config here (default stdout)");
  cal->add_option("--threads", threads, "Worker threads");

  // plan
  auto* plan = app.add_subcommand("plan", "Roofline cost curve, free budget and optimal speculation length");
  std::string model_path, hw_path, accept_path, plan_out;
  double batch = 8, s_kv = 1024;
  std::uint32_t max_s_q = 128;
  bool with_mask = false;
  plan->add_option("--model", model_path, "Model spec file")->required();
  plan->add_option("--hardware", hw_path, "Hardware spec file")->required();
  plan->add_option("--batch", batch, "Batch size");
  plan->add_option("--s-kv", s_kv, "KV-cache length");
  plan->add_option("--max-s-q", max_s_q, "Largest speculation length in the cost CSV");
  plan->add_option("--accept-curve", accept_path, "CSV from simulate --curve");
  plan->add_option("--out", plan_out, "Cost CSV output (default stdout)");
  plan->add_flag("--mask", with_mask, "Include the attention-mask read term");

  // bench-retrieval
  auto* bench = app.add_subcommand("bench-retrieval", "Time batched retrieval + fusion");
  std::vector<std::size_t> batch_sizes{1, 8, 64};
  std::vector<unsigned> thread_counts{1, 2, 8};
  unsigned repeats = 3;
  std::string bench_out;
  bench->add_option("--datastore", ds_path, "Datastore file")->required();
  bench->add_option("--data", data_path, "JSONL dataset; prompt + reference form each request context")->required();
  bench->add_option("--config", cfg_path, "Fusion config file");
  bench->add_option("--batch-sizes", batch_sizes, "Batch sizes")->delimiter(',');
  bench->add_option("--threads", thread_counts, "Thread counts")->delimiter(',');
  bench->add_option("--repeats", repeats, "Timing repetitions (best is kept)");
  bench->add_option("--out", bench_out, "CSV output (default stdout)");

  // draft
  auto* draft = app.add_subcommand("draft", "Show the draft tree and attention mask for one context");
  std::string context_text, mask_out;
  draft->add_option("--datastore", ds_path, "Datastore file");
  draft->add_option("--config", cfg_path, "Fusion config file");
  draft->add_option("--context", context_text, "Space-separated token IDs")->required();
  draft->add_option("--mask-out", mask_out, "Write the bit-packed mask here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*build) {
      std::vector<TokenId> corpus;
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (i > 0 && separator) corpus.push_back(*separator);
        auto toks = read_token_file(inputs[i]);
        corpus.insert(corpus.end(), toks.begin(), toks.end());
      }
      auto ds = Datastore::build(std::move(corpus), vocab == 0 ? std::nullopt : std::optional(vocab));
      ds.save(build_out);
      std::cerr << "datastore: " << ds.n_tokens() << " tokens -> " << build_out << '\n';
      return 0;
    }

    std::optional<Datastore> ds;
    if (!ds_path.empty()) ds = Datastore::load(ds_path);
    const Datastore* dsp = ds ? &*ds : nullptr;

    if (*sim) {
      auto cfg = load_config(cfg_path);
      auto data = read_dataset(data_path);
      nlohmann::json out;
      if (sweep_values.empty()) {
        out = to_json(simulate(data, dsp, cfg, threads));
      } else {
        auto points = sweep(data, dsp, cfg, sweep_values, threads);
        out = nlohmann::json::array();
        for (const auto& p : points) out.push_back({{"s_q", p.s_q}, {"report", to_json(p.report)}});
        if (!curve_path.empty()) write_text(curve_path, curve_csv(points));
      }
      write_text(report_path, out.dump(2) + "\n");
      return 0;
    }

    if (*cal) {
      auto base = load_config(cfg_path);
      auto grid = expand_grid(read_key_values(grid_path), base);
      auto data = read_dataset(data_path);
      auto res = calibrate(data, dsp, grid, threads);
      for (std::size_t i = 0; i < grid.size(); ++i)
        std::cerr << "grid[" << i << "] mean_accepted_per_step=" << res.scores[i] << '\n';
      std::cerr << "best: grid[" << res.best_index << "]\n";
      write_text(cal_out, to_config_text(res.best));
      return 0;
    }

    if (*plan) {
      auto m = model_spec_from(read_key_values(model_path));
      auto hw = hardware_spec_from(read_key_values(hw_path));
      perf::CostOptions opts{with_mask};
      std::ostringstream csv;
      csv.precision(10);
      csv << "s_q,flops,bytes,est_time,relative_cost\n";
      const double base = perf::forward_time(hw, m, batch, 1, s_kv, opts);
      for (std::uint32_t s = 1; s <= max_s_q; ++s) {
        auto t = perf::op_costs(m, batch, s, s_kv, opts);
        const double time = perf::forward_time(hw, m, batch, s, s_kv, opts);
        csv << s << ',' << m.n_layers * t.total_flops() << ',' << m.n_layers * t.total_bytes() << ',' << time << ','
            << time / base << '\n';
      }
      write_text(plan_out, csv.str());
      const double budget = perf::free_budget(hw, m);
      std::cerr << "free_budget_b_s_q=" << budget << " s_q_limit=" << budget / batch << '\n';
      if (!accept_path.empty()) {
        std::ifstream is(accept_path);
        if (!is) throw std::runtime_error("cannot open " + accept_path);
        auto accept = parse_curve_csv(is);
        std::map<std::uint32_t, double> cost;
        for (const auto& [s, a] : accept) cost[s] = perf::relative_cost(hw, m, batch, s, s_kv, opts);
        auto best = perf::expected_speedup(accept, cost);
        std::cerr << "s_q*=" << best.s_q << " speedup*=" << best.speedup << '\n';
      }
      return 0;
    }

    if (*bench) {
      auto cfg = load_config(cfg_path);
      auto data = read_dataset(data_path);
      std::vector<std::vector<TokenId>> workload;
      for (const auto& r : data) {
        auto ctx = r.prompt;
        ctx.insert(ctx.end(), r.reference.begin(), r.reference.end());
        workload.push_back(std::move(ctx));
      }
      auto res = bench_retrieval(*ds, workload, cfg, batch_sizes, thread_counts, repeats);
      write_text(bench_out, bench_csv(res));
      std::cerr << "deterministic=" << (res.deterministic ? "true" : "false") << '\n';
      return res.deterministic ? 0 : 3;
    }

    if (*draft) {
      auto cfg = load_config(cfg_path);
      auto ctx = parse_context(context_text);
      if (ctx.empty()) throw std::invalid_argument("empty context");
      Session s(dsp, cfg, ctx);
      auto prop = s.propose();
      std::cout << to_json(prop.flat).dump() << '\n';
      if (!mask_out.empty()) {
        auto bytes = pack_mask(prop.flat);
        std::ofstream os(mask_out, std::ios::binary);
        os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
