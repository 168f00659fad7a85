// SPDX-License-Identifier: Apache-2.0
#include "tal/eval.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <random>

#include "tal/checkpoint.hpp"
#include "tal/error.hpp"

namespace tal {

namespace fs = std::filesystem;

namespace {

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) fail(errc::kIo, "cannot write " + path.string());
  return out;
}

double metric_of(const CellResult& c, const std::string& metric) {
  if (metric == "accuracy") return c.accuracy;
  if (metric == "macro_f1") return c.macro_f1;
  if (metric == "retain_accuracy") return c.retain_accuracy;
  if (metric == "test_accuracy") return c.test_accuracy;
  fail(errc::kPrecondition, "unknown metric " + metric);
}

const std::vector<std::string> kMetrics = {"accuracy", "macro_f1", "retain_accuracy", "test_accuracy"};

}  // namespace

ModelEvaluation evaluate_model(const ModelView<float>& model, const Corpus& corpus,
                               const std::vector<std::string>& ids) {
  require(!ids.empty(), "evaluation item set is empty");
  ModelEvaluation out;
  std::vector<char> preds, golds;
  try {
    for (const auto& id : ids) {
      const McqItem& item = corpus.at(id);
      ItemRecord r{id, item.answer, 'A', option_distribution(model, item)};
      r.predicted = argmax_label(r.distribution);
      preds.push_back(r.predicted);
      golds.push_back(r.gold);
      out.records.push_back(std::move(r));
    }
  } catch (const std::exception& e) {
    out.complete = false;
    out.error = e.what();
  }
  if (!golds.empty()) {
    out.accuracy = accuracy(preds, golds);
    out.macro_f1 = macro_f1(preds, golds);
  }
  return out;
}

void save_item_records(const ModelEvaluation& evaluation, const fs::path& path) {
  auto out = open_out(path);
  out << "id,gold,predicted,p_A,p_B,p_C,p_D\n";
  for (const auto& r : evaluation.records) {
    out << r.id << "," << r.gold << "," << r.predicted;
    for (double p : r.distribution) out << "," << fixed(p);
    out << "\n";
  }
  if (!evaluation.complete) out << "# incomplete: " << evaluation.error << "\n";
}

std::vector<std::string> targeted_test_ids(const SplitManifest& manifest, const Corpus& corpus, int ratio) {
  std::set<std::string> kcs;
  for (const auto& id : forget_subset(manifest, ratio)) kcs.insert(corpus.at(id).kc);
  std::vector<std::string> out;
  for (const auto& id : manifest.test)
    if (kcs.contains(corpus.at(id).kc)) out.push_back(id);
  return out;
}

const CellResult* EvalReport::find(const std::string& condition, int ratio, std::uint64_t seed) const {
  for (const auto& c : cells)
    if (c.condition == condition && c.ratio == ratio && c.seed == seed) return &c;
  return nullptr;
}

CellSummary summarize(const EvalReport& report, const std::string& condition, int ratio, const std::string& metric) {
  CellSummary out;
  std::vector<double> present;
  for (auto seed : report.seeds) {
    const CellResult* c = report.find(condition, ratio, seed);
    if (c != nullptr && c->ok) {
      out.values.emplace_back(metric_of(*c, metric));
      present.push_back(*out.values.back());
    } else {
      out.values.emplace_back(std::nullopt);
    }
  }
  out.complete = !present.empty() && present.size() == report.seeds.size();
  if (!present.empty()) {
    out.mean = mean(present);
    out.std = sample_std(present);
  }
  return out;
}

EvalReport run_experiment_grid(const Corpus& corpus, const Corpus& pretraining_corpus, const SplitManifest& manifest,
                               const GridConfig& config, const fs::path& out_dir,
                               const std::function<void(const GridProgress&)>& progress) {
  require(!config.seeds.empty(), "seed list is empty");
  require(!config.ratios.empty(), "ratio list is empty");
  const auto t0 = std::chrono::steady_clock::now();
  auto report_stage = [&](std::uint64_t seed, int ratio, const std::string& stage) {
    if (progress)
      progress({seed, ratio, stage, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()});
  };
  const bool persist = !out_dir.empty();

  EvalReport report;
  report.seeds = config.seeds;
  report.ratios = config.ratios;
  const std::vector<std::string> retain_ids(manifest.retain.begin(), manifest.retain.end());
  const std::vector<std::string> test_ids(manifest.test.begin(), manifest.test.end());

  for (auto seed : config.seeds) {
    const fs::path seed_dir = persist ? out_dir / ("seed-" + std::to_string(seed)) : fs::path();
    auto gap_all = [&](const std::string& condition, const std::string& reason) {
      for (int ratio : config.ratios) report.cells.push_back({condition, ratio, seed, false, reason});
    };

    std::optional<Transformer<float>> base;
    try {
      ModelConfig mc = config.model;
      mc.seed = seed;
      PretrainConfig pc = config.pretrain;
      pc.seed = seed;
      report_stage(seed, 0, "pretrain");
      auto trained = pretrain_base(pretraining_corpus, mc, pc);
      if (persist) {
        save_model(trained.model, seed_dir / "base");
        save_training_log(trained.training_log, seed_dir / "base" / "training_log.json");
      }
      base = std::move(trained.model);
    } catch (const std::exception& e) {
      for (const auto& c : kConditions) gap_all(c, std::string("pretraining failed: ") + e.what());
      continue;
    }

    // Cell values from one model view; ok only when every pass completed.
    auto score = [&](const std::string& condition, int ratio, const ModelView<float>& view,
                     const std::vector<std::string>& targeted, const fs::path& dir) {
      CellResult cell{condition, ratio, seed, true, ""};
      const auto t = evaluate_model(view, corpus, targeted);
      const auto r = evaluate_model(view, corpus, retain_ids);
      const auto w = evaluate_model(view, corpus, test_ids);
      cell.accuracy = t.accuracy;
      cell.macro_f1 = t.macro_f1;
      cell.retain_accuracy = r.accuracy;
      cell.test_accuracy = w.accuracy;
      for (const auto* e : {&t, &r, &w}) {
        if (!e->complete) {
          cell.ok = false;
          cell.gap_reason = "evaluation failed: " + e->error;
        }
      }
      if (!dir.empty()) {
        save_item_records(t, dir / "targeted_records.csv");
        save_item_records(r, dir / "retain_records.csv");
      }
      return cell;
    };

    report_stage(seed, 0, "evaluate base");
    const ModelView<float> base_view(*base);
    std::map<int, CellResult> base_cells;
    for (int ratio : config.ratios) {
      const auto targeted = targeted_test_ids(manifest, corpus, ratio);
      report.cells.push_back(score("base", ratio, base_view, targeted,
                                   persist ? seed_dir / "base" / ("ratio-" + std::to_string(ratio)) : fs::path()));
    }

    for (int ratio : config.ratios) {
      const fs::path ratio_dir = persist ? seed_dir / ("ratio-" + std::to_string(ratio)) : fs::path();
      auto sub = [&](const char* name) { return persist ? ratio_dir / name : fs::path(); };
      const auto targeted = targeted_test_ids(manifest, corpus, ratio);

      std::optional<LowRankAdapter<float>> unlearned;
      try {
        report_stage(seed, ratio, "unlearn");
        UnlearnConfig uc = config.unlearn;
        uc.seed = seed * 1000 + static_cast<std::uint64_t>(ratio);
        unlearned = run_unlearning(*base, corpus, manifest, ratio, uc, sub("unlearn")).adapter;
        report.cells.push_back(score("unlearned", ratio, ModelView<float>(*base, {&*unlearned}), targeted,
                                     sub("unlearn")));
      } catch (const std::exception& e) {
        const std::string reason = std::string("unlearning failed: ") + e.what();
        for (const char* c : {"unlearned", "sft-relearned", "coach-relearned"})
          report.cells.push_back({c, ratio, seed, false, reason});
        continue;
      }

      if (config.run_sft) {
        try {
          report_stage(seed, ratio, "sft-relearn");
          RelearnConfig rc = config.relearn;
          rc.seed = seed * 1000 + static_cast<std::uint64_t>(ratio);
          const auto relearned =
              run_sft_relearn(*base, *unlearned, ratio, corpus, manifest, ratio, rc, sub("relearn"));
          report.cells.push_back(score("sft-relearned", ratio,
                                       ModelView<float>(*base, relearned_adapters(*unlearned, relearned)), targeted,
                                       sub("relearn")));
        } catch (const std::exception& e) {
          report.cells.push_back({"sft-relearned", ratio, seed, false, std::string("relearning failed: ") + e.what()});
        }
      } else {
        report.cells.push_back({"sft-relearned", ratio, seed, false, "condition disabled"});
      }

      if (config.run_coach) {
        try {
          report_stage(seed, ratio, "coach-relearn");
          AgentConfig ac = config.agent;
          ac.seed = seed * 1000 + static_cast<std::uint64_t>(ratio);
          std::vector<McqItem> items;
          for (const auto& id : targeted) items.push_back(corpus.at(id));
          std::mt19937_64 rng(ac.seed);
          std::shuffle(items.begin(), items.end(), rng);
          if (config.curriculum_items > 0 && items.size() > static_cast<size_t>(config.curriculum_items))
            items.resize(static_cast<size_t>(config.curriculum_items));

          Student student(*base, *unlearned, ac);
          std::unique_ptr<Coach> coach;
          if (config.coach_endpoint.empty())
            coach = std::make_unique<OracleCoach>();
          else
            coach = std::make_unique<ExternalCoach>(config.coach_endpoint);
          IdentityRewriter rewriter;
          std::ofstream log;
          std::optional<DialogueLog> dialogue;
          if (persist) {
            log = open_out(sub("coach") / "dialogue.jsonl");
            dialogue.emplace(log);
          }
          const std::string run_id = "s" + std::to_string(seed) + "-r" + std::to_string(ratio);
          const auto result = run_curriculum(student, items, *coach, rewriter, run_id,
                                             [&](const TeachingSession& s, const DialogueTurn& t) {
                                               if (dialogue) dialogue->append(s, t);
                                             });
          Trajectory traj{ratio, seed, result.first_attempt_scores, result.rolling, result.cumulative, 0,
                          static_cast<int>(result.sessions.size())};
          for (const auto& s : result.sessions) traj.mastered += s.outcome == Outcome::mastered;
          report.trajectories.push_back(traj);
          if (persist) {
            auto sessions = open_out(sub("coach") / "sessions.jsonl");
            auto consumed = open_out(sub("coach") / "consumed_ids.txt");
            for (size_t i = 0; i < result.sessions.size(); ++i) {
              sessions << session_summary(result.sessions[i], items[i]).dump() << "\n";
              for (const auto& id : result.sessions[i].consumed_ids) consumed << id << "\n";
            }
            std::ofstream(sub("coach") / "config.json") << agent_config_to_json(ac).dump(2) << "\n";
            save_adapter(student.adapter(), sub("coach") / "adapter");
          }
          report.cells.push_back(score("coach-relearned", ratio, student.view(), targeted, sub("coach")));
        } catch (const std::exception& e) {
          report.cells.push_back(
              {"coach-relearned", ratio, seed, false, std::string("coach relearning failed: ") + e.what()});
        }
      } else {
        report.cells.push_back({"coach-relearned", ratio, seed, false, "condition disabled"});
      }
    }
  }
  report_stage(0, 0, "done");
  return report;
}

nlohmann::json report_to_json(const EvalReport& report) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["f1"] = "macro-averaged over option labels A-D";
  j["seeds"] = report.seeds;
  j["ratios"] = report.ratios;
  j["cells"] = nlohmann::json::array();
  for (const auto& c : report.cells) {
    nlohmann::json cell = {{"condition", c.condition}, {"ratio", c.ratio}, {"seed", c.seed}, {"ok", c.ok}};
    if (c.ok) {
      cell["accuracy"] = c.accuracy;
      cell["macro_f1"] = c.macro_f1;
      cell["retain_accuracy"] = c.retain_accuracy;
      cell["test_accuracy"] = c.test_accuracy;
    } else {
      cell["gap_reason"] = c.gap_reason;
    }
    j["cells"].push_back(cell);
  }
  j["trajectories"] = nlohmann::json::array();
  for (const auto& t : report.trajectories)
    j["trajectories"].push_back({{"ratio", t.ratio},
                                 {"seed", t.seed},
                                 {"scores", t.scores},
                                 {"rolling", t.rolling},
                                 {"cumulative", t.cumulative},
                                 {"mastered", t.mastered},
                                 {"sessions", t.sessions}});
  return j;
}

EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  try {
    r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    r.ratios = j.at("ratios").get<std::vector<int>>();
    for (const auto& c : j.at("cells")) {
      CellResult cell{c.at("condition"), c.at("ratio"), c.at("seed"), c.at("ok"), c.value("gap_reason", "")};
      if (cell.ok) {
        cell.accuracy = c.at("accuracy");
        cell.macro_f1 = c.at("macro_f1");
        cell.retain_accuracy = c.at("retain_accuracy");
        cell.test_accuracy = c.at("test_accuracy");
      }
      r.cells.push_back(cell);
    }
    for (const auto& t : j.at("trajectories"))
      r.trajectories.push_back({t.at("ratio"), t.at("seed"), t.at("scores"), t.at("rolling"), t.at("cumulative"),
                                t.at("mastered"), t.at("sessions")});
  } catch (const nlohmann::json::exception& e) {
    fail(errc::kMalformed, std::string("report: ") + e.what());
  }
  return r;
}

void emit_report(const EvalReport& report, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) fail(errc::kIo, "cannot create " + out_dir.string() + ": " + ec.message());

  nlohmann::json gaps = nlohmann::json::array();
  for (const auto& c : report.cells)
    if (!c.ok) gaps.push_back({{"condition", c.condition}, {"ratio", c.ratio}, {"seed", c.seed}, {"reason", c.gap_reason}});

  {
    auto out = open_out(out_dir / "metrics.csv");
    out << "condition,ratio,metric";
    for (auto seed : report.seeds) out << ",seed_" << seed;
    out << ",mean,std\n";
    for (const auto& condition : kConditions) {
      for (int ratio : report.ratios) {
        for (const auto& metric : kMetrics) {
          const auto s = summarize(report, condition, ratio, metric);
          out << condition << "," << ratio << "," << metric;
          for (const auto& v : s.values) out << "," << (v ? fixed(*v) : "NA");
          const bool any = std::any_of(s.values.begin(), s.values.end(), [](const auto& v) { return v.has_value(); });
          out << "," << (any ? fixed(s.mean) : "NA") << "," << (any ? fixed(s.std) : "NA") << "\n";
        }
      }
    }
  }
  {
    auto out = open_out(out_dir / "trajectories.csv");
    out << "ratio,seed,index,score,rolling,cumulative\n";
    for (const auto& t : report.trajectories)
      for (size_t i = 0; i < t.scores.size(); ++i)
        out << t.ratio << "," << t.seed << "," << i + 1 << "," << fixed(t.scores[i]) << "," << fixed(t.rolling[i])
            << "," << fixed(t.cumulative[i]) << "\n";
  }
  {
    nlohmann::json plot;
    plot["f1"] = "macro-averaged over option labels A-D";
    for (const auto& [figure, metric] : {std::pair{"accuracy_by_ratio", "accuracy"}, {"f1_by_ratio", "macro_f1"}}) {
      nlohmann::json series = nlohmann::json::array();
      for (const auto& condition : kConditions) {
        nlohmann::json s = {{"name", condition}, {"x", report.ratios}, {"y", nlohmann::json::array()},
                            {"error", nlohmann::json::array()}};
        for (int ratio : report.ratios) {
          const auto c = summarize(report, condition, ratio, metric);
          const bool any = std::any_of(c.values.begin(), c.values.end(), [](const auto& v) { return v.has_value(); });
          s["y"].push_back(any ? nlohmann::json(c.mean) : nlohmann::json(nullptr));
          s["error"].push_back(any ? nlohmann::json(c.std) : nlohmann::json(nullptr));
        }
        series.push_back(s);
      }
      plot[figure] = series;
    }
    nlohmann::json traj = nlohmann::json::array();
    for (const auto& t : report.trajectories) {
      std::vector<int> x(t.scores.size());
      for (size_t i = 0; i < x.size(); ++i) x[i] = static_cast<int>(i) + 1;
      const std::string name = "ratio " + std::to_string(t.ratio) + " seed " + std::to_string(t.seed);
      traj.push_back({{"name", name + " rolling"}, {"x", x}, {"y", t.rolling}, {"error", nullptr}});
      traj.push_back({{"name", name + " cumulative"}, {"x", x}, {"y", t.cumulative}, {"error", nullptr}});
    }
    plot["trajectories"] = traj;
    open_out(out_dir / "plot_data.json") << plot.dump(2) << "\n";
  }
  open_out(out_dir / "report.json") << report_to_json(report).dump(2) << "\n";
  open_out(out_dir / "gaps.json") << gaps.dump(2) << "\n";
}

}  // namespace tal
