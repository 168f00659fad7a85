// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tal/eval.hpp"

namespace tal {

/// Everything needed to reproduce a run. Serialized next to every artifact.
struct RunConfig {
  std::optional<std::filesystem::path> corpus_path;  // ingest instead of generating
  std::map<std::string, int> shape = reference_shape();
  std::uint64_t corpus_seed = 1;
  int pretraining_variants = 4;
  SplitConfig split;
  std::uint64_t split_seed = 1;
  ModelConfig model;  // vocabulary is derived, never configured
  PretrainConfig pretrain;
  UnlearnConfig unlearn;
  RelearnConfig relearn;
  AgentConfig agent;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  int curriculum_items = 0;  // 0: every targeted item
  std::filesystem::path output_root = "tal-runs";
  std::string coach_endpoint;  // empty: oracle coach

  RunConfig();
  void validate() const;
};

nlohmann::json run_config_to_json(const RunConfig& config);
/// Missing keys keep their defaults.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// TAL_OUTPUT_ROOT and TAL_COACH_ENDPOINT override the corresponding fields.
void apply_env_overrides(RunConfig& config);

/// Artifact layout under the output root:
///   config.json                       snapshot of the last configuring command
///   corpus/corpus.jsonl               experiment corpus
///   corpus/pretraining.jsonl          companion pretraining corpus
///   split/manifest.json
///   models/seed-S/                    base checkpoint + training_log.json
///   unlearn/seed-S/ratio-R/           unlearn run directory
///   relearn/seed-S/ratio-R/           relearn run directory
///   teach/RUN/                        curriculum logs
///   grid/RUN/                         grid artifacts and report
///   sessions/ID/                      service session journals
class Workspace {
 public:
  explicit Workspace(RunConfig config);

  const RunConfig& config() const { return config_; }
  /// Receives one line per training epoch.
  void set_logger(std::function<void(const std::string&)> logger) { logger_ = std::move(logger); }
  const std::filesystem::path& root() const { return config_.output_root; }

  std::filesystem::path corpus_path() const { return root() / "corpus" / "corpus.jsonl"; }
  std::filesystem::path pretraining_path() const { return root() / "corpus" / "pretraining.jsonl"; }
  std::filesystem::path manifest_path() const { return root() / "split" / "manifest.json"; }
  std::filesystem::path model_dir(std::uint64_t seed) const;
  std::filesystem::path unlearn_dir(std::uint64_t seed, int ratio) const;
  std::filesystem::path relearn_dir(std::uint64_t seed, int ratio) const;
  std::filesystem::path teach_dir(const std::string& run_id) const { return root() / "teach" / run_id; }
  std::filesystem::path grid_dir(const std::string& run_id) const { return root() / "grid" / run_id; }
  std::filesystem::path sessions_dir() const { return root() / "sessions"; }

  void save_config_snapshot() const;

  /// Builds (or ingests) both corpora and writes them.
  void generate_corpora() const;
  /// Loaders throw not-found naming the missing artifact and the command that makes it.
  const Corpus& corpus() const;
  const Corpus& pretraining_corpus() const;
  void make_split() const;
  const SplitManifest& manifest() const;

  ModelConfig model_config() const;  // with the vocabulary of both corpora
  void pretrain(std::uint64_t seed) const;
  Transformer<float> base(std::uint64_t seed) const;
  void unlearn(std::uint64_t seed, int ratio) const;
  LowRankAdapter<float> unlearned(std::uint64_t seed, int ratio, const Transformer<float>& base) const;
  void relearn(std::uint64_t seed, int ratio) const;
  /// Relearned adapter stack of a finished relearn run.
  std::vector<LowRankAdapter<float>> relearned(std::uint64_t seed, int ratio, const Transformer<float>& base) const;

  std::unique_ptr<Coach> make_coach() const;
  /// Coach curriculum over the targeted test items of `ratio`, starting from a
  /// copy of the stored unlearned adapter. Logs go to teach_dir(run_id).
  CurriculumResult teach(std::uint64_t seed, int ratio, const std::string& run_id, int items = 0) const;
  GridConfig grid_config() const;

  std::vector<std::string> grid_runs() const;
  std::vector<std::uint64_t> trained_seeds() const;
  std::vector<int> unlearned_ratios(std::uint64_t seed) const;

 private:
  RunConfig config_;
  std::function<void(const std::string&)> logger_;
  mutable std::optional<Corpus> corpus_, pretraining_;
  mutable std::optional<SplitManifest> manifest_;
};

/// Coach words added to the vocabulary so oracle feedback encodes without unknowns.
std::vector<std::string> coach_vocabulary();

std::string default_run_id();

}  // namespace tal
