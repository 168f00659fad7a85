// SPDX-License-Identifier: Apache-2.0
// Command-line entry point: tal <subcommand> [flags]

#include <chrono>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "tal/error.hpp"
#include "tal/eval.hpp"
#include "tal/orchestration.hpp"
#include "tal/service.hpp"

#include <CLI11.hpp>
#include <httplib.h>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct GlobalFlags {
  std::string config_path;
  std::string output_root;
  std::string coach_endpoint;
  std::vector<std::string> sets;
  std::vector<std::uint64_t> seeds;
  std::vector<int> ratios;
  bool quiet = false;
};

// "a.b.c=value": value parsed as JSON when it parses, else taken as a string.
void apply_set(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) tal::fail(tal::errc::kPrecondition, "--set expects key=value, got " + assignment);
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &j;
  size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

tal::RunConfig resolve_config(const GlobalFlags& flags) {
  fs::path root = "tal-runs";
  if (const char* env = std::getenv("TAL_OUTPUT_ROOT"); env != nullptr && *env != '\0') root = env;
  if (!flags.output_root.empty()) root = flags.output_root;

  tal::RunConfig cfg;
  if (!flags.config_path.empty())
    cfg = tal::load_run_config(flags.config_path);
  else if (fs::exists(root / "config.json"))
    cfg = tal::load_run_config(root / "config.json");

  json j = tal::run_config_to_json(cfg);
  for (const auto& s : flags.sets) apply_set(j, s);
  if (!flags.seeds.empty()) j["seeds"] = flags.seeds;
  if (!flags.ratios.empty()) j["split"]["ratios"] = flags.ratios;
  cfg = tal::run_config_from_json(j);
  tal::apply_env_overrides(cfg);
  cfg.output_root = root;
  if (!flags.coach_endpoint.empty()) cfg.coach_endpoint = flags.coach_endpoint;
  cfg.validate();
  return cfg;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fixed(double v, int digits = 3) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::vector<std::string> ids_of(const tal::IdSet& set) { return {set.begin(), set.end()}; }

void print_eval(const std::string& what, const tal::ModelView<float>& view, const tal::Workspace& ws, int ratio) {
  const auto& m = ws.manifest();
  const auto targeted = ratio > 0 ? tal::targeted_test_ids(m, ws.corpus(), ratio) : ids_of(m.test);
  const auto t = tal::evaluate_model(view, ws.corpus(), targeted);
  const auto r = tal::evaluate_model(view, ws.corpus(), ids_of(m.retain));
  std::cout << what << ": " << (ratio > 0 ? "targeted" : "test") << " accuracy " << fixed(t.accuracy) << " macro-F1 "
            << fixed(t.macro_f1) << " (n=" << targeted.size() << "), retain accuracy " << fixed(r.accuracy) << "\n";
}

std::string latest_grid_run(const tal::Workspace& ws) {
  const auto runs = ws.grid_runs();
  if (runs.empty()) tal::fail(tal::errc::kNotFound, "no grid report under " + ws.root().string() + "; run `tal grid` first");
  return runs.back();
}

void print_report(const tal::EvalReport& report) {
  std::cout << "condition        ratio  accuracy (mean +- std)  macro-F1  retain  complete\n";
  for (const auto& condition : tal::kConditions) {
    for (int ratio : report.ratios) {
      const auto a = tal::summarize(report, condition, ratio, "accuracy");
      const auto f = tal::summarize(report, condition, ratio, "macro_f1");
      const auto r = tal::summarize(report, condition, ratio, "retain_accuracy");
      char line[160];
      std::snprintf(line, sizeof line, "%-16s %5d  %.3f +- %.3f         %.3f     %.3f   %s\n", condition.c_str(), ratio,
                    a.mean, a.std, f.mean, r.mean, a.complete ? "yes" : "no");
      std::cout << line;
    }
  }
  for (const auto& t : report.trajectories) {
    std::cout << "trajectory seed " << t.seed << " ratio " << t.ratio << ": " << t.sessions << " items, "
              << t.mastered << " mastered, rolling 0.6 after "
              << tal::items_to_threshold(t.scores) << " items, cumulative "
              << fixed(t.cumulative.empty() ? 0.0 : t.cumulative.back()) << "\n";
  }
}

httplib::Server* g_server = nullptr;

void stop_server(int) {
  if (g_server != nullptr) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Teachable-agent lab: corpus, split, pretraining, unlearning, relearning, teaching and reports"};
  app.failure_message(CLI::FailureMessage::help);
  app.require_subcommand(1);

  GlobalFlags g;
  app.add_option("--config", g.config_path, "RunConfig JSON (default: <output-root>/config.json when present)");
  app.add_option("--output-root", g.output_root, "Artifact root (env TAL_OUTPUT_ROOT; default tal-runs)");
  app.add_option("--set", g.sets, "Override a RunConfig field, e.g. --set unlearn.learning_rate=1e-3");
  app.add_option("--seeds", g.seeds, "Seeds (RunConfig.seeds)");
  app.add_option("--ratios", g.ratios, "Unlearning ratios (RunConfig.split.ratios)");
  app.add_option("--coach-endpoint", g.coach_endpoint, "External coach URL (env TAL_COACH_ENDPOINT)");
  app.add_flag("-q,--quiet", g.quiet, "No per-epoch output");

  auto* gen = app.add_subcommand("gen-corpus", "Generate (or ingest) the corpus and the pretraining corpus");
  std::string ingest;
  std::optional<std::uint64_t> corpus_seed;
  gen->add_option("--corpus", ingest, "Ingest this JSONL corpus instead of generating one")->check(CLI::ExistingFile);
  gen->add_option("--corpus-seed", corpus_seed, "Synthetic corpus seed");

  auto* split = app.add_subcommand("split", "Two-level split and nested forget subsets");
  std::optional<std::uint64_t> split_seed;
  split->add_option("--split-seed", split_seed, "Split seed");

  auto* pretrain = app.add_subcommand("pretrain", "Pretrain base models (one per seed)");
  auto* unlearn = app.add_subcommand("unlearn", "Unlearn at each ratio for each seed");
  auto* relearn = app.add_subcommand("relearn", "SFT relearning on the forget subset of each ratio");

  auto* teach = app.add_subcommand("teach", "Coach curriculum on an unlearned model");
  int teach_items = -1;
  std::string teach_run;
  teach->add_option("--items", teach_items, "Curriculum length (default: curriculum_items; 0: every targeted item)")->check(CLI::NonNegativeNumber);
  teach->add_option("--run-id", teach_run, "Run id (default: timestamp)");

  auto* grid = app.add_subcommand("grid", "Full seeds x ratios x conditions experiment and report");
  std::string grid_run;
  bool no_sft = false, no_coach = false;
  grid->add_option("--run-id", grid_run, "Run id (default: timestamp)");
  grid->add_flag("--no-sft", no_sft, "Skip the SFT-relearned condition");
  grid->add_flag("--no-coach", no_coach, "Skip the coach-relearned condition");

  auto* report = app.add_subcommand("report", "Print and re-emit the report of a grid run");
  std::string report_run;
  report->add_option("--run-id", report_run, "Grid run id (default: latest)");

  auto* serve = app.add_subcommand("serve", "HTTP+JSON service for human-coach sessions and artifacts");
  std::string host = "127.0.0.1";
  int port = 8080;
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port")->check(CLI::Range(1, 65535));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    tal::RunConfig cfg = resolve_config(g);
    if (gen->parsed()) {
      if (!ingest.empty()) cfg.corpus_path = fs::absolute(ingest);
      if (corpus_seed) cfg.corpus_seed = *corpus_seed;
    }
    if (split->parsed() && split_seed) cfg.split_seed = *split_seed;
    tal::Workspace ws(cfg);
    if (!g.quiet) ws.set_logger([](const std::string& line) { std::cout << line << std::endl; });

    if (gen->parsed()) {
      const auto t0 = std::chrono::steady_clock::now();
      ws.generate_corpora();
      ws.save_config_snapshot();
      const auto report = tal::validate_corpus(ws.corpus());
      std::cout << "corpus: " << ws.corpus().size() << " items, " << ws.corpus().kc_index().size()
                << " knowledge components, sha256 " << tal::corpus_hash(ws.corpus()) << "\n"
                << "pretraining corpus: " << ws.pretraining_corpus().size() << " items\n"
                << "validation: " << report.violations.size() << " violations, " << report.duplicate_groups.size()
                << " duplicate groups\n"
                << "wrote " << ws.corpus_path().string() << " in " << fixed(seconds_since(t0), 1) << " s\n";
    } else if (split->parsed()) {
      ws.make_split();
      ws.save_config_snapshot();
      const auto& m = ws.manifest();
      std::cout << "A-side KCs " << m.kc_ranking.size() << " ranked; |A|=" << m.set_a.size() << " |B|=" << m.set_b.size()
                << "\nA1 " << m.a1.size() << ", A2 " << m.a2.size() << ", A3 " << m.a3.size() << "\nretain "
                << m.retain.size() << ", forget " << m.forget.size() << ", test " << m.test.size() << "\n";
      for (const auto& [ratio, ids] : m.forget_subsets) std::cout << "forget subset " << ratio << ": " << ids.size() << "\n";
      std::cout << "wrote " << ws.manifest_path().string() << "\n";
    } else if (pretrain->parsed()) {
      for (auto seed : cfg.seeds) {
        const auto t0 = std::chrono::steady_clock::now();
        ws.pretrain(seed);
        const auto model = ws.base(seed);
        print_eval("base seed " + std::to_string(seed) + " (" + fixed(seconds_since(t0), 1) + " s)",
                   tal::ModelView<float>(model), ws, 0);
      }
    } else if (unlearn->parsed()) {
      for (auto seed : cfg.seeds) {
        const auto model = ws.base(seed);
        for (int ratio : cfg.split.ratios) {
          const auto t0 = std::chrono::steady_clock::now();
          ws.unlearn(seed, ratio);
          const auto adapter = ws.unlearned(seed, ratio, model);
          print_eval("unlearned seed " + std::to_string(seed) + " ratio " + std::to_string(ratio) + " (" +
                         fixed(seconds_since(t0), 1) + " s)",
                     tal::ModelView<float>(model, {&adapter}), ws, ratio);
        }
      }
    } else if (relearn->parsed()) {
      for (auto seed : cfg.seeds) {
        const auto model = ws.base(seed);
        for (int ratio : cfg.split.ratios) {
          const auto t0 = std::chrono::steady_clock::now();
          ws.relearn(seed, ratio);
          const auto adapters = ws.relearned(seed, ratio, model);
          std::vector<const tal::LowRankAdapter<float>*> stack;
          for (const auto& a : adapters) stack.push_back(&a);
          print_eval("sft-relearned seed " + std::to_string(seed) + " ratio " + std::to_string(ratio) + " (" +
                         fixed(seconds_since(t0), 1) + " s)",
                     tal::ModelView<float>(model, stack), ws, ratio);
        }
      }
    } else if (teach->parsed()) {
      const std::string base_id = teach_run.empty() ? tal::default_run_id() : teach_run;
      for (auto seed : cfg.seeds) {
        for (int ratio : cfg.split.ratios) {
          const bool single = cfg.seeds.size() == 1 && cfg.split.ratios.size() == 1;
          const std::string run_id =
              single ? base_id : base_id + "-seed" + std::to_string(seed) + "-ratio" + std::to_string(ratio);
          const auto t0 = std::chrono::steady_clock::now();
          const auto result = ws.teach(seed, ratio, run_id, teach_items < 0 ? cfg.curriculum_items : teach_items);
          int mastered = 0;
          for (const auto& s : result.sessions) mastered += s.outcome == tal::Outcome::mastered;
          std::cout << "teach " << run_id << ": " << result.sessions.size() << " items, " << mastered
                    << " mastered, rolling 0.6 after " << tal::items_to_threshold(result.first_attempt_scores)
                    << " items, cumulative " << fixed(result.cumulative.back()) << " ("
                    << fixed(seconds_since(t0), 1) << " s) -> " << ws.teach_dir(run_id).string() << "\n";
        }
      }
    } else if (grid->parsed()) {
      const std::string run_id = grid_run.empty() ? tal::default_run_id() : grid_run;
      const fs::path dir = ws.grid_dir(run_id);
      fs::create_directories(dir);
      std::ofstream(dir / "config.json") << tal::run_config_to_json(cfg).dump(2) << "\n";
      auto gc = ws.grid_config();
      gc.run_sft = !no_sft;
      gc.run_coach = !no_coach;
      const auto result = tal::run_experiment_grid(
          ws.corpus(), ws.pretraining_corpus(), ws.manifest(), gc, dir, [&](const tal::GridProgress& p) {
            if (g.quiet) return;
            std::cout << "[" << fixed(p.seconds, 0) << " s] seed " << p.seed;
            if (p.ratio > 0) std::cout << " ratio " << p.ratio;
            std::cout << ": " << p.stage << std::endl;
          });
      tal::emit_report(result, dir / "report");
      print_report(result);
      std::cout << "report: " << (dir / "report").string() << "\n";
    } else if (report->parsed()) {
      const std::string run_id = report_run.empty() ? latest_grid_run(ws) : report_run;
      const fs::path path = ws.grid_dir(run_id) / "report" / "report.json";
      std::ifstream in(path);
      if (!in) tal::fail(tal::errc::kNotFound, "missing " + path.string() + "; run `tal grid --run-id " + run_id + "` first");
      const auto result = tal::report_from_json(json::parse(in));
      tal::emit_report(result, ws.grid_dir(run_id) / "report");
      std::cout << "grid run " << run_id << "\n";
      print_report(result);
    } else if (serve->parsed()) {
      tal::SessionManager sessions(ws);
      for (const auto& [id, reason] : sessions.restore())
        std::cerr << "session " << id << " not restored: " << reason << "\n";
      httplib::Server server;
      tal::register_routes(server, sessions);
      g_server = &server;
      std::signal(SIGINT, stop_server);
      std::signal(SIGTERM, stop_server);
      std::cout << "serving " << ws.root().string() << " on http://" << host << ":" << port << std::endl;
      if (!server.listen(host, port)) tal::fail(tal::errc::kIo, "cannot listen on " + host + ":" + std::to_string(port));
    }
  } catch (const tal::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
