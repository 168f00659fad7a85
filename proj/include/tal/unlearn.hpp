// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <span>
#include <string>
#include <vector>

#include "tal/corpus.hpp"
#include "tal/splitter.hpp"
#include "tal/training.hpp"

namespace tal {

using OptionDistribution = std::array<double, 4>;

/// Target distribution over the four labels for one forget item.
struct TeacherDistribution {
  std::string item_id;
  OptionDistribution probabilities{};
};

struct UnlearnConfig {
  double beta = 0.1;                // weight of the forget (KL) term
  double retention_strength = 1.0;  // weight of the retain cross-entropy
  int n_alternatives = 3;
  int epochs = 20;
  double learning_rate = 1e-4;
  int batch_size = 8;
  /// Retain cross-entropy over label and explanation tokens; false restricts
  /// it to the label over the four option scores.
  bool retain_explanation = true;
  int adapter_rank = 8;
  double adapter_alpha = 32.0;
  std::uint64_t seed = 0;

  void validate() const;
};

inline constexpr double kProbabilityFloor = 1e-12;

/// Zero mass on the correct label, 1/n on each of the first n incorrect labels.
TeacherDistribution build_teacher(const McqItem& item, int n);

/// KL(teacher || model) in nats, with model probabilities clamped at 1e-12.
double forget_loss(const OptionDistribution& model, const TeacherDistribution& teacher);

/// Option prompt plus the quantities needed by the objective.
struct UnlearnExample {
  std::string item_id;
  std::vector<int> prompt;
  int answer = 0;
  OptionDistribution teacher{};
  Example sequence;  // full answer-span sequence for the retain term
};

UnlearnExample make_unlearn_example(const Vocabulary& vocab, const McqItem& item, int n_alternatives,
                                    int context_length = 0);

struct ObjectiveTerms {
  double forget_loss = 0.0;  // mean KL over the forget batch
  double retain_loss = 0.0;  // mean retain cross-entropy over the retain batch
  double objective = 0.0;
};

/// beta * mean KL(forget) + retention_strength * mean CE(retain).
template <typename S>
ObjectiveTerms unlearn_objective(const ModelView<S>& model, std::span<const UnlearnExample> forget,
                                 std::span<const UnlearnExample> retain, const UnlearnConfig& config);

/// Same value; adds its gradient into `sink`.
template <typename S>
ObjectiveTerms accumulate_unlearn_gradient(const ModelView<S>& model, std::span<const UnlearnExample> forget,
                                           std::span<const UnlearnExample> retain, const UnlearnConfig& config,
                                           GradientSink<S>& sink);

ObjectiveTerms unlearn_objective(const ModelView<float>& model, std::span<const McqItem> forget,
                                 std::span<const McqItem> retain, const UnlearnConfig& config);

struct UnlearnEpoch {
  int epoch = 0;
  double forget_loss = 0.0;
  double retain_loss = 0.0;
  double objective = 0.0;
};

struct UnlearnResult {
  LowRankAdapter<float> adapter;
  std::vector<UnlearnEpoch> metrics;
};

/// Trains a fresh adapter on forget_subset(ratio) against the retain set,
/// interleaving one forget batch and one retain batch per step. Writes
/// config.json, metrics.csv and adapter/ into `run_dir` when it is non-empty.
UnlearnResult run_unlearning(const Transformer<float>& base, const Corpus& corpus, const SplitManifest& manifest,
                             int ratio, const UnlearnConfig& config, const std::filesystem::path& run_dir = {},
                             const std::function<void(const UnlearnEpoch&)>& on_epoch = {});

nlohmann::json unlearn_config_to_json(const UnlearnConfig& config);
UnlearnConfig unlearn_config_from_json(const nlohmann::json& j);

}  // namespace tal
