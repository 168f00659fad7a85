// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tal/agents.hpp"
#include "tal/metrics.hpp"
#include "tal/relearn.hpp"
#include "tal/unlearn.hpp"

namespace tal {

struct ItemRecord {
  std::string id;
  char gold = 'A';
  char predicted = 'A';
  OptionDistribution distribution{};
};

struct ModelEvaluation {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<ItemRecord> records;
  bool complete = true;  // false when a backend error cut the pass short
  std::string error;
};

/// Scores every id in order. A backend error stops the pass and is reported
/// in `error` with the records gathered so far.
ModelEvaluation evaluate_model(const ModelView<float>& model, const Corpus& corpus,
                               const std::vector<std::string>& ids);
void save_item_records(const ModelEvaluation& evaluation, const std::filesystem::path& path);

/// A3 items whose knowledge component occurs in forget_subset(ratio).
std::vector<std::string> targeted_test_ids(const SplitManifest& manifest, const Corpus& corpus, int ratio);

inline const std::vector<std::string> kConditions = {"base", "unlearned", "sft-relearned", "coach-relearned"};

struct CellResult {
  std::string condition;
  int ratio = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string gap_reason;
  double accuracy = 0.0;         // targeted test items
  double macro_f1 = 0.0;
  double retain_accuracy = 0.0;
  double test_accuracy = 0.0;    // whole A3
};

struct Trajectory {
  int ratio = 0;
  std::uint64_t seed = 0;
  std::vector<double> scores;  // first-attempt combined scores
  std::vector<double> rolling;
  std::vector<double> cumulative;
  int mastered = 0;
  int sessions = 0;
};

struct EvalReport {
  std::vector<std::uint64_t> seeds;
  std::vector<int> ratios;
  std::vector<CellResult> cells;
  std::vector<Trajectory> trajectories;

  const CellResult* find(const std::string& condition, int ratio, std::uint64_t seed) const;
};

struct CellSummary {
  std::vector<std::optional<double>> values;  // parallel to EvalReport::seeds
  double mean = 0.0;
  double std = 0.0;
  bool complete = false;
};

/// metric is one of accuracy, macro_f1, retain_accuracy, test_accuracy.
CellSummary summarize(const EvalReport& report, const std::string& condition, int ratio, const std::string& metric);

struct GridConfig {
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::vector<int> ratios = {10, 20, 30, 40, 50};
  ModelConfig model;  // vocabulary must be set
  PretrainConfig pretrain;
  UnlearnConfig unlearn;
  RelearnConfig relearn;
  AgentConfig agent;
  /// Items per coach curriculum; 0 takes every targeted test item.
  int curriculum_items = 0;
  bool run_sft = true;
  bool run_coach = true;
  std::string coach_endpoint;  // empty: oracle coach
};

struct GridProgress {
  std::uint64_t seed = 0;
  int ratio = 0;  // 0 for the base stage
  std::string stage;
  double seconds = 0.0;
};

/// For every seed: pretrain, then unlearn / SFT-relearn / coach-relearn at every
/// ratio. Artifacts go under `out_dir` when it is non-empty. A failing stage
/// marks its cells as gaps and the grid moves on.
EvalReport run_experiment_grid(const Corpus& corpus, const Corpus& pretraining_corpus, const SplitManifest& manifest,
                               const GridConfig& config, const std::filesystem::path& out_dir = {},
                               const std::function<void(const GridProgress&)>& progress = {});

/// metrics.csv, trajectories.csv, plot_data.json, report.json and gaps.json.
void emit_report(const EvalReport& report, const std::filesystem::path& out_dir);
nlohmann::json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);

}  // namespace tal
