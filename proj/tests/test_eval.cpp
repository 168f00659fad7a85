// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "lab.hpp"
#include "tal/error.hpp"
#include "tal/eval.hpp"

using namespace tal;
namespace fs = std::filesystem;

namespace {

std::vector<char> labels(const std::string& s) { return {s.begin(), s.end()}; }

std::string read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> row;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) row.push_back(cell);
    rows.push_back(row);
  }
  return rows;
}

// Independent macro-F1: per-class counts straight from the definition.
double oracle_macro_f1(const std::vector<char>& pred, const std::vector<char>& gold) {
  std::set<char> classes(pred.begin(), pred.end());
  classes.insert(gold.begin(), gold.end());
  double sum = 0.0;
  for (char c : classes) {
    double tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
      tp += pred[i] == c && gold[i] == c;
      fp += pred[i] == c && gold[i] != c;
      fn += pred[i] != c && gold[i] == c;
    }
    sum += tp == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn);
  }
  return sum / static_cast<double>(classes.size());
}

EvalReport five_seed_report() {
  EvalReport r;
  r.seeds = {1, 2, 3, 4, 5};
  r.ratios = {10};
  for (const auto& condition : kConditions)
    for (auto seed : r.seeds) {
      CellResult c{condition, 10, seed, true, "", 0.5 + 0.01 * static_cast<double>(seed), 0.4, 0.9, 0.6};
      if (condition == "coach-relearned" && seed == 4) {
        c.ok = false;
        c.gap_reason = "coach relearning failed: backend-unavailable";
      }
      r.cells.push_back(c);
    }
  Trajectory t;
  t.ratio = 10;
  t.seed = 1;
  t.scores = {0.0, 1.0, 0.5};
  t.rolling = rolling_accuracy(t.scores);
  t.cumulative = cumulative_accuracy(t.scores);
  t.sessions = 3;
  t.mastered = 1;
  r.trajectories.push_back(t);
  return r;
}

}  // namespace

TEST_CASE("accuracy counts exact matches") {
  CHECK(accuracy(labels("ABBC"), labels("AABC")) == 0.75);
  CHECK(accuracy(labels("ABCD"), labels("ABCD")) == 1.0);
  CHECK(accuracy(labels("BCDA"), labels("ABCD")) == 0.0);
  CHECK_THROWS_AS(accuracy(labels(""), labels("")), Error);
  CHECK_THROWS_AS(accuracy(labels("A"), labels("AB")), Error);
}

TEST_CASE("macro-F1 matches the hand-computed values") {
  CHECK(macro_f1(labels("ABBC"), labels("AABC")) == doctest::Approx(7.0 / 9.0).epsilon(1e-12));
  CHECK(macro_f1(labels("AA"), labels("AB")) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(macro_f1(labels("ABCD"), labels("ABCD")) == 1.0);
  CHECK(macro_f1(labels("AAA"), labels("AAA")) == accuracy(labels("AAA"), labels("AAA")));
  CHECK_THROWS_AS(macro_f1(labels(""), labels("")), Error);
}

TEST_CASE("macro-F1 agrees with the oracle and is permutation-invariant") {
  std::mt19937 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<char> p(12), g(12);
    for (size_t i = 0; i < p.size(); ++i) {
      p[i] = static_cast<char>('A' + rng() % 4);
      g[i] = static_cast<char>('A' + rng() % 4);
    }
    const double f = macro_f1(p, g);
    CHECK(f == doctest::Approx(oracle_macro_f1(p, g)).epsilon(1e-12));
    std::vector<size_t> order(p.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<char> ps, gs;
    for (size_t i : order) {
      ps.push_back(p[i]);
      gs.push_back(g[i]);
    }
    CHECK(macro_f1(ps, gs) == doctest::Approx(f).epsilon(1e-12));
    CHECK(accuracy(ps, gs) == accuracy(p, g));
  }
}

TEST_CASE("rolling and cumulative series") {
  const std::vector<double> two = {0.0, 1.0};
  CHECK(rolling_accuracy(two, 2) == std::vector<double>{0.0, 0.5});
  const std::vector<double> ones = {1, 1, 1, 1};
  CHECK(cumulative_accuracy(ones) == ones);
  const std::vector<double> s = {0.2, 0.9, 0.4, 0.7, 0.1};
  CHECK(cumulative_accuracy(s).back() == doctest::Approx(mean(s)));
  const auto r = rolling_accuracy(s, 3);
  CHECK(r[4] == doctest::Approx((0.4 + 0.7 + 0.1) / 3));
  CHECK_THROWS_AS(rolling_accuracy(s, 0), Error);
  CHECK_THROWS_AS(cumulative_accuracy(std::vector<double>{}), Error);
}

TEST_CASE("items to threshold needs a full window and is censored past the end") {
  std::vector<double> s(12, 1.0);
  CHECK(items_to_threshold(s) == 10);
  std::vector<double> low(15, 0.5);
  CHECK(items_to_threshold(low) == 16);
  std::vector<double> late(20, 0.0);
  for (size_t i = 8; i < 20; ++i) late[i] = 1.0;
  // Window ending at index k (1-based) averages (k - 8) / 10 ones.
  CHECK(items_to_threshold(late) == 14);
}

TEST_CASE("sample standard deviation uses n - 1") {
  const std::vector<double> v = {1, 2, 3, 4};
  CHECK(sample_std(v) == doctest::Approx(std::sqrt(5.0 / 3.0)));
  CHECK(sample_std(std::vector<double>{3}) == 0.0);
}

TEST_CASE("a uniform stub sits at chance and evaluation is deterministic") {
  const auto& lab = lab::toy_lab();
  std::vector<McqItem> items;
  for (int k = 0; k < 40; ++k) items.push_back(lab::sample_item("u" + std::to_string(k), static_cast<char>('A' + k % 4)));
  const Corpus balanced(items);
  std::vector<std::string> ids;
  for (const auto& i : balanced.items()) ids.push_back(i.id);
  const auto stub = Transformer<float>::allocate(lab.model_config);
  const auto e = evaluate_model(ModelView<float>(stub), balanced, ids);
  CHECK(e.accuracy == doctest::Approx(0.25));
  CHECK(e.complete);

  const std::vector<std::string> test_ids(lab.manifest.test.begin(), lab.manifest.test.end());
  const ModelView<float> base(lab.base);
  const auto a = evaluate_model(base, lab.corpus, test_ids);
  const auto b = evaluate_model(base, lab.corpus, test_ids);
  REQUIRE(a.records.size() == test_ids.size());
  for (size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].id == b.records[i].id);
    CHECK(a.records[i].predicted == b.records[i].predicted);
    CHECK(a.records[i].distribution == b.records[i].distribution);
  }
  CHECK(a.accuracy == b.accuracy);
  CHECK_THROWS_AS(evaluate_model(base, lab.corpus, {}), Error);
}

TEST_CASE("targeted test items share a knowledge component with the forget subset") {
  const auto& lab = lab::toy_lab();
  for (int ratio : {10, 50}) {
    std::set<std::string> kcs;
    for (const auto& id : forget_subset(lab.manifest, ratio)) kcs.insert(lab.corpus.at(id).kc);
    const auto targeted = targeted_test_ids(lab.manifest, lab.corpus, ratio);
    CHECK(!targeted.empty());
    size_t expected = 0;
    for (const auto& id : lab.manifest.test) expected += kcs.contains(lab.corpus.at(id).kc);
    CHECK(targeted.size() == expected);
    for (const auto& id : targeted) CHECK(lab.manifest.test.contains(id));
  }
}

TEST_CASE("a five-seed report lists every seed plus mean and std, with NA for gaps") {
  const auto report = five_seed_report();
  lab::TempDir dir("report");
  emit_report(report, dir.path());
  for (const char* f : {"metrics.csv", "trajectories.csv", "plot_data.json", "report.json", "gaps.json"})
    CHECK(fs::exists(dir.path() / f));

  const auto rows = read_csv(dir.path() / "metrics.csv");
  REQUIRE(!rows.empty());
  CHECK(rows[0] == std::vector<std::string>{"condition", "ratio", "metric", "seed_1", "seed_2", "seed_3", "seed_4",
                                            "seed_5", "mean", "std"});
  bool saw_gap = false;
  for (size_t i = 1; i < rows.size(); ++i) {
    REQUIRE(rows[i].size() == 10);
    if (rows[i][0] == "coach-relearned") {
      CHECK(rows[i][6] == "NA");
      saw_gap = true;
    }
    if (rows[i][0] == "base" && rows[i][2] == "accuracy") {
      std::vector<double> v;
      for (int k = 3; k < 8; ++k) v.push_back(std::stod(rows[i][static_cast<size_t>(k)]));
      CHECK(std::stod(rows[i][8]) == doctest::Approx(mean(v)).epsilon(1e-6));
      CHECK(std::stod(rows[i][9]) == doctest::Approx(sample_std(v)).epsilon(1e-6));
    }
  }
  CHECK(saw_gap);
  const auto gaps = nlohmann::json::parse(read_all(dir.path() / "gaps.json"));
  REQUIRE(gaps.size() == 1);
  CHECK(gaps[0].at("seed") == 4);
  CHECK(gaps[0].at("reason").get<std::string>().find("backend-unavailable") != std::string::npos);

  const auto back = report_from_json(report_to_json(report));
  CHECK(back.seeds == report.seeds);
  CHECK(back.cells.size() == report.cells.size());
  CHECK(back.trajectories[0].rolling == report.trajectories[0].rolling);
  const auto s = summarize(report, "coach-relearned", 10, "accuracy");
  CHECK_FALSE(s.complete);
  CHECK_FALSE(s.values[3].has_value());
}

TEST_CASE("emitting into an unwritable location fails with io") {
  lab::TempDir dir("unwritable");
  std::ofstream(dir.path() / "file") << "x";
  try {
    emit_report(five_seed_report(), dir.path() / "file" / "sub");
    FAIL("expected io");
  } catch (const Error& e) {
    CHECK(e.code() == errc::kIo);
  }
}

TEST_CASE("a small grid keeps base flat and writes identical bytes twice") {
  const auto& lab = lab::toy_lab();
  GridConfig cfg;
  cfg.seeds = {1};
  cfg.ratios = {10, 50};
  cfg.model = lab.model_config;
  cfg.pretrain = lab::toy_pretrain_config();
  cfg.pretrain.epochs = 3;
  cfg.unlearn = lab::toy_unlearn_config();
  cfg.unlearn.epochs = 1;
  cfg.relearn.epochs = 1;
  cfg.curriculum_items = 3;
  lab::TempDir a("grid-a"), b("grid-b");
  std::vector<std::string> stages;
  const auto ra = run_experiment_grid(lab.corpus, lab.pretraining, lab.manifest, cfg, a.path(),
                                      [&](const GridProgress& p) { stages.push_back(p.stage); });
  const auto rb = run_experiment_grid(lab.corpus, lab.pretraining, lab.manifest, cfg, b.path());
  CHECK(!stages.empty());
  for (int ratio : cfg.ratios)
    for (const auto& condition : kConditions) {
      const auto* cell = ra.find(condition, ratio, 1);
      REQUIRE(cell != nullptr);
      CHECK(cell->ok);
    }
  CHECK(ra.find("base", 10, 1)->accuracy == ra.find("base", 50, 1)->accuracy);
  CHECK(ra.trajectories.size() == 2);
  CHECK(ra.trajectories[0].scores.size() == 3);

  emit_report(ra, a.path() / "report");
  emit_report(rb, b.path() / "report");
  CHECK(read_all(a.path() / "report" / "metrics.csv") == read_all(b.path() / "report" / "metrics.csv"));
  CHECK(read_all(a.path() / "report" / "trajectories.csv") == read_all(b.path() / "report" / "trajectories.csv"));
  CHECK(fs::exists(a.path() / "seed-1" / "ratio-50" / "coach" / "dialogue.jsonl"));
  CHECK(fs::exists(a.path() / "seed-1" / "ratio-10" / "unlearn" / "adapter" / "adapter.json"));
}
