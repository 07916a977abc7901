#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "oracles.hpp"
#include "specdraft/harness.hpp"

using namespace specdraft;
namespace st = specdraft::testing;

namespace {

struct Fixture {
  std::vector<TokenId> corpus;
  Datastore ds;
  std::vector<SimRecord> data;
};

// References are corpus excerpts; prompts are the preceding tokens.
Fixture corpus_fixture(std::uint64_t seed, std::size_t records) {
  std::mt19937_64 rng(seed);
  Fixture f;
  f.corpus = st::random_tokens(rng, 20000, 400);
  f.ds = Datastore::build(f.corpus);
  for (std::size_t i = 0; i < records; ++i) {
    const std::size_t at = 10 + rng() % (f.corpus.size() - 200);
    SimRecord r;
    r.prompt.assign(f.corpus.begin() + static_cast<std::ptrdiff_t>(at - 8), f.corpus.begin() + static_cast<std::ptrdiff_t>(at));
    r.reference.assign(f.corpus.begin() + static_cast<std::ptrdiff_t>(at),
                       f.corpus.begin() + static_cast<std::ptrdiff_t>(at + 60 + rng() % 60));
    f.data.push_back(std::move(r));
  }
  return f;
}

}  // namespace

TEST(Dataset, ParsesJsonl) {
  std::istringstream is("{\"prompt\": [1,2], \"reference\": [3]}\n\n{\"prompt\": [], \"reference\": [4,5]}\n");
  auto d = parse_dataset(is);
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d[0].prompt, (std::vector<TokenId>{1, 2}));
  EXPECT_EQ(d[1].reference, (std::vector<TokenId>{4, 5}));
  std::ostringstream os;
  write_dataset(os, d);
  std::istringstream again(os.str());
  EXPECT_EQ(parse_dataset(again), d);
}

TEST(Dataset, ErrorsNameTheLine) {
  auto line_of = [](const std::string& text) {
    std::istringstream is(text);
    try {
      parse_dataset(is);
    } catch (const FormatError& e) {
      return e.field();
    }
    return std::string("none");
  };
  EXPECT_EQ(line_of("{\"prompt\":[1],\"reference\":[2]}\n{oops\n"), "line 2");
  EXPECT_EQ(line_of("{\"prompt\":[1],\"reference\":[]}\n"), "line 1");
  EXPECT_EQ(line_of("{\"prompt\":[-1],\"reference\":[2]}\n"), "line 1");
  EXPECT_EQ(line_of("\n{\"reference\":[2]}\n"), "line 2");
  EXPECT_EQ(line_of("[1,2]\n"), "line 1");
}

TEST(Simulate, AutoregressiveBaseline) {
  auto f = corpus_fixture(1, 10);
  FusionConfig cfg;
  cfg.dec_len = 1;
  auto rep = simulate(f.data, &f.ds, cfg);
  EXPECT_EQ(rep.mean_accepted_per_step(), 1.0);
  EXPECT_TRUE(rep.lossless());
}

TEST(Simulate, CorpusExcerptsAcceptLongBranches) {
  auto f = corpus_fixture(2, 10);
  FusionConfig cfg;
  cfg.dec_len = 9;
  cfg.branch_len = 8;
  auto rep = simulate(f.data, &f.ds, cfg);
  EXPECT_TRUE(rep.lossless());
  // Interior steps: all but the final (possibly truncated) one of each record.
  std::size_t tokens = 0, steps = 0;
  for (const auto& rec : rep.records) {
    for (std::size_t i = 0; i + 1 < rec.per_step.size(); ++i) tokens += rec.per_step[i];
    steps += rec.per_step.empty() ? 0 : rec.per_step.size() - 1;
  }
  ASSERT_GT(steps, 0u);
  EXPECT_GE(static_cast<double>(tokens) / static_cast<double>(steps), 5.0);
}

TEST(Simulate, DisjointReferencesAcceptNothing) {
  auto f = corpus_fixture(3, 5);
  std::mt19937_64 rng(4);
  for (auto& r : f.data) {
    // Tokens never seen in the corpus or prompt, all distinct.
    r.reference.clear();
    for (TokenId t = 0; t < 50; ++t) r.reference.push_back(100000 + t + 1000 * static_cast<TokenId>(rng() % 50));
  }
  FusionConfig cfg;
  auto rep = simulate(f.data, &f.ds, cfg);
  EXPECT_EQ(rep.mean_accepted_per_step(), 1.0);
}

TEST(Simulate, ReportArithmetic) {
  auto f = corpus_fixture(5, 12);
  FusionConfig cfg;
  cfg.dec_len = 6;
  auto rep = simulate(f.data, &f.ds, cfg);
  std::size_t steps = 0, tokens = 0;
  for (std::size_t i = 0; i < rep.records.size(); ++i) {
    const auto& r = rep.records[i];
    std::size_t sum = 0;
    for (auto s : r.per_step) {
      EXPECT_GE(s, 1u);
      EXPECT_LE(s, cfg.dec_len);
      sum += s;
    }
    EXPECT_EQ(sum, r.tokens_emitted);
    EXPECT_EQ(r.tokens_emitted, f.data[i].reference.size());
    EXPECT_EQ(r.steps, r.per_step.size());
    steps += r.steps;
    tokens += r.tokens_emitted;
  }
  EXPECT_EQ(rep.total_steps, steps);
  EXPECT_EQ(rep.total_tokens, tokens);
  EXPECT_DOUBLE_EQ(rep.mean_accepted_per_step(), static_cast<double>(tokens) / static_cast<double>(steps));
  auto j = to_json(rep, false);
  EXPECT_EQ(j["aggregate"]["tokens_emitted"], tokens);
  EXPECT_FALSE(j["aggregate"].contains("retrieval_ms_total"));
  EXPECT_TRUE(to_json(rep)["aggregate"].contains("retrieval_ms_per_step"));
}

TEST(Simulate, FinalStepTruncation) {
  // Reference of 3 tokens drawn from a chain the datastore knows deeply.
  std::vector<TokenId> corpus(100);
  for (std::size_t i = 0; i < corpus.size(); ++i) corpus[i] = static_cast<TokenId>(i);
  auto ds = Datastore::build(corpus);
  FusionConfig cfg;
  cfg.dec_len = 9;
  cfg.branch_len = 8;
  std::vector<SimRecord> data{{{1, 2, 3, 4}, {5, 6, 7}}};
  auto rep = simulate(data, &ds, cfg);
  EXPECT_EQ(rep.total_steps, 1u);
  EXPECT_EQ(rep.total_tokens, 3u);
  EXPECT_TRUE(rep.lossless());
}

TEST(Simulate, ThreadCountAndOrderIndependent) {
  auto f = corpus_fixture(6, 16);
  FusionConfig cfg;
  const auto base = to_json(simulate(f.data, &f.ds, cfg, 1), false);
  EXPECT_EQ(to_json(simulate(f.data, &f.ds, cfg, 3), false), base);
  auto reversed = f.data;
  std::reverse(reversed.begin(), reversed.end());
  auto rep = simulate(reversed, &f.ds, cfg, 2);
  for (std::size_t i = 0; i < f.data.size(); ++i) {
    EXPECT_EQ(to_json(rep, false)["records"][f.data.size() - 1 - i], base["records"][i]);
  }
}

TEST(Sweep, SinglePointAndMonotoneWhenNested) {
  auto f = corpus_fixture(7, 8);
  FusionConfig base;
  base.branch_len = 8;  // fixed so larger trees extend smaller ones
  std::vector<std::uint32_t> one{1};
  auto single = sweep(f.data, &f.ds, base, one);
  ASSERT_EQ(single.size(), 1u);
  EXPECT_EQ(single[0].report.mean_accepted_per_step(), 1.0);

  std::vector<std::uint32_t> s_q{1, 2, 4, 8, 16, 32};
  auto curve = sweep(f.data, &f.ds, base, s_q);
  for (std::size_t i = 1; i < curve.size(); ++i)
    EXPECT_GE(curve[i].report.mean_accepted_per_step(), curve[i - 1].report.mean_accepted_per_step());

  auto doubled = f.data;
  doubled.insert(doubled.end(), f.data.begin(), f.data.end());
  auto curve2 = sweep(doubled, &f.ds, base, s_q);
  for (std::size_t i = 0; i < curve.size(); ++i)
    EXPECT_DOUBLE_EQ(curve2[i].report.mean_accepted_per_step(), curve[i].report.mean_accepted_per_step());
}

TEST(Sweep, CurveCsvRoundTrip) {
  auto f = corpus_fixture(8, 3);
  std::vector<std::uint32_t> s_q{1, 4};
  auto curve = sweep(f.data, &f.ds, FusionConfig{}, s_q);
  auto csv = curve_csv(curve);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "s_q,mean_accepted,retrieval_ms_per_step");
  std::istringstream is(csv);
  auto parsed = parse_curve_csv(is);
  ASSERT_EQ(parsed.size(), 2u);
  EXPECT_EQ(parsed.at(1), 1.0);
  EXPECT_NEAR(parsed.at(4), curve[1].report.mean_accepted_per_step(), 1e-8);
  std::istringstream bad("x,y\n");
  EXPECT_THROW(parse_curve_csv(bad), FormatError);
}

TEST(Calibrate, PicksInputWhenReferencesRepeatPrompt) {
  std::mt19937_64 rng(9);
  auto corpus = st::random_tokens(rng, 5000, 300);
  auto ds = Datastore::build(corpus);
  std::vector<SimRecord> data;
  for (int i = 0; i < 8; ++i) {
    auto prompt = st::random_tokens(rng, 80, 1000, 5000);  // disjoint from corpus
    data.push_back({prompt, std::vector<TokenId>(prompt.begin() + 20, prompt.begin() + 70)});
  }
  FusionConfig off;
  off.use_input = false;
  FusionConfig on;
  on.input_scale = 0.8;
  std::vector<FusionConfig> grid{off, on};
  auto res = calibrate(data, &ds, grid);
  EXPECT_EQ(res.best_index, 1u);
  EXPECT_GT(res.scores[1], res.scores[0]);
}

TEST(Calibrate, SinglePointAndTies) {
  auto f = corpus_fixture(10, 3);
  std::vector<FusionConfig> one{FusionConfig{}};
  EXPECT_EQ(calibrate(f.data, &f.ds, one).best, FusionConfig{});
  FusionConfig a;
  a.dec_len = 7;
  std::vector<FusionConfig> same{a, a};
  EXPECT_EQ(calibrate(f.data, &f.ds, same).best_index, 0u);
  EXPECT_THROW(calibrate({}, &f.ds, one), std::invalid_argument);
  EXPECT_THROW(calibrate(f.data, &f.ds, {}), std::invalid_argument);
}

TEST(BenchRetrieval, DeterministicAcrossThreads) {
  auto f = corpus_fixture(11, 20);
  std::vector<std::vector<TokenId>> workload;
  for (const auto& r : f.data) {
    auto ctx = r.prompt;
    ctx.insert(ctx.end(), r.reference.begin(), r.reference.begin() + 10);
    workload.push_back(ctx);
  }
  std::vector<std::size_t> batches{1, 8, 64};
  std::vector<unsigned> threads{1, 8};
  auto res = bench_retrieval(f.ds, workload, FusionConfig{}, batches, threads, 1);
  EXPECT_TRUE(res.deterministic);
  EXPECT_EQ(res.rows.size(), 6u);
  EXPECT_EQ(res.drafts.at(64).size(), 64u);
  EXPECT_GT(res.drafts.at(1)[0].size(), 1u);
  EXPECT_NE(bench_csv(res).find("batch,threads"), std::string::npos);
}

TEST(ParallelFor, VisitsEachIndexOnceAndPropagatesErrors) {
  std::vector<int> hits(1000, 0);
  parallel_for(hits.size(), 7, [&](std::size_t i) { ++hits[i]; });
  EXPECT_TRUE(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
  EXPECT_THROW(parallel_for(10, 3, [](std::size_t i) { if (i == 5) throw std::runtime_error("x"); }),
               std::runtime_error);
}
