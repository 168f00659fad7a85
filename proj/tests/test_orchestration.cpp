// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdlib>
#include <fstream>

#include "lab.hpp"
#include "tal/checkpoint.hpp"
#include "tal/error.hpp"
#include "tal/orchestration.hpp"

using namespace tal;
namespace fs = std::filesystem;

namespace {

std::string not_found_message(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    if (e.code() == errc::kNotFound) return e.what();
  }
  return "";
}

size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

}  // namespace

TEST_CASE("run config defaults") {
  const RunConfig c;
  CHECK(c.seeds == std::vector<std::uint64_t>{1, 2, 3, 4, 5});
  CHECK(c.pretrain.epochs == 14);
  CHECK(c.unlearn.learning_rate == 1e-3);
  CHECK(c.unlearn.beta == 0.1);
  CHECK(c.curriculum_items == 0);
  CHECK(c.agent.update_steps == 2);
  CHECK(c.agent.label_weight == 8.0);
  CHECK(c.agent.learning_rate == 1e-4);
  CHECK(c.agent.max_rounds == 3);
  CHECK(c.coach_endpoint.empty());
}

TEST_CASE("run config round-trips and merges onto defaults") {
  lab::TempDir dir("config");
  RunConfig c = lab::toy_run_config(dir.path());
  c.coach_endpoint = "http://127.0.0.1:9/coach";
  const auto j = run_config_to_json(c);
  CHECK(run_config_to_json(run_config_from_json(j)) == j);

  const RunConfig partial = run_config_from_json(nlohmann::json{{"seeds", {7, 8}}, {"unlearn", {{"epochs", 3}}}});
  CHECK(partial.seeds == std::vector<std::uint64_t>{7, 8});
  CHECK(partial.unlearn.epochs == 3);
  CHECK(partial.unlearn.learning_rate == 1e-3);
  CHECK(partial.pretrain.epochs == 14);

  std::ofstream(dir.path() / "c.json") << j.dump(2);
  CHECK(run_config_to_json(load_run_config(dir.path() / "c.json")) == j);
  CHECK(!not_found_message([&] { load_run_config(dir.path() / "absent.json"); }).empty());
  CHECK_THROWS_AS(run_config_from_json(nlohmann::json{{"seeds", nlohmann::json::array()}}), Error);
}

TEST_CASE("environment variables override the output root and coach endpoint") {
  RunConfig c;
  ::setenv("TAL_OUTPUT_ROOT", "/tmp/elsewhere", 1);
  ::setenv("TAL_COACH_ENDPOINT", "http://127.0.0.1:1/c", 1);
  apply_env_overrides(c);
  ::unsetenv("TAL_OUTPUT_ROOT");
  ::unsetenv("TAL_COACH_ENDPOINT");
  CHECK(c.output_root == "/tmp/elsewhere");
  CHECK(c.coach_endpoint == "http://127.0.0.1:1/c");
}

TEST_CASE("missing artifacts name the command that produces them") {
  lab::TempDir dir("empty-ws");
  const Workspace ws(lab::toy_run_config(dir.path()));
  CHECK(not_found_message([&] { ws.corpus(); }).find("tal gen-corpus") != std::string::npos);
  CHECK(not_found_message([&] { ws.manifest(); }).find("tal split") != std::string::npos);
  CHECK(not_found_message([&] { ws.base(1); }).find(" pretrain`") != std::string::npos);
  CHECK(ws.grid_runs().empty());
  CHECK(ws.trained_seeds().empty());
}

TEST_CASE("the workspace pipeline writes every stage's artifacts") {
  const auto& ws = lab::toy_workspace();
  CHECK(fs::exists(ws.corpus_path()));
  CHECK(fs::exists(ws.pretraining_path()));
  CHECK(fs::exists(ws.manifest_path()));
  CHECK(fs::exists(ws.model_dir(1)));
  CHECK(ws.trained_seeds() == std::vector<std::uint64_t>{1});
  CHECK(ws.unlearned_ratios(1) == std::vector<int>{10, 50});
  CHECK(not_found_message([&] { ws.relearned(1, 30, ws.base(1)); }).find(" relearn`") != std::string::npos);
  CHECK(not_found_message([&] { ws.unlearned(1, 30, ws.base(1)); }).find(" unlearn`") != std::string::npos);

  ws.relearn(1, 50);
  const auto base = ws.base(1);
  const auto stack = ws.relearned(1, 50, base);
  CHECK(!stack.empty());
  CHECK(fs::exists(ws.relearn_dir(1, 50) / "consumed_ids.txt"));

  const auto result = ws.teach(1, 50, "toy", 4);
  CHECK(result.sessions.size() == 4);
  const auto dir = ws.teach_dir("toy");
  for (const char* f : {"config.json", "dialogue.jsonl", "sessions.jsonl", "trajectory.csv"})
    CHECK(fs::exists(dir / f));
  CHECK(line_count(dir / "trajectory.csv") == 5);
  CHECK(line_count(dir / "sessions.jsonl") == 4);
  size_t turns = 0;
  for (const auto& s : result.sessions) turns += s.turns.size();
  CHECK(line_count(dir / "dialogue.jsonl") == turns);
  const auto config = nlohmann::json::parse(std::ifstream(dir / "config.json"));
  CHECK(config.contains("teach"));

  // The stored unlearned adapter is never modified by teaching.
  const auto before = adapter_fingerprint(ws.unlearned(1, 50, base));
  ws.teach(1, 50, "toy-2", 2);
  CHECK(adapter_fingerprint(ws.unlearned(1, 50, base)) == before);
}

TEST_CASE("teaching the same seed and ratio twice gives the same dialogue") {
  const auto& ws = lab::toy_workspace();
  const auto a = ws.teach(1, 10, "det-a", 3);
  const auto b = ws.teach(1, 10, "det-b", 3);
  REQUIRE(a.sessions.size() == b.sessions.size());
  for (size_t i = 0; i < a.sessions.size(); ++i) {
    CHECK(a.sessions[i].item_id == b.sessions[i].item_id);
    CHECK(a.sessions[i].turns == b.sessions[i].turns);
  }
}
