// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <span>
#include <string>
#include <vector>

#include "tal/splitter.hpp"
#include "tal/training.hpp"

namespace tal {

struct RelearnConfig {
  int epochs = 10;
  double learning_rate = 1e-4;
  int batch_size = 8;
  bool include_explanation_in_answer_span = true;
  /// Train a second adapter on top of the unlearn adapter instead of
  /// continuing the unlearn adapter itself.
  bool stack_adapter = false;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Marks the tokens after the answer marker; with `include_explanation` false
/// only the first of them (the label). Throws malformed-record without a marker.
std::vector<std::uint8_t> answer_span_mask(std::span<const int> sequence, bool include_explanation = true);

struct RelearnResult {
  LowRankAdapter<float> adapter;
  bool stacked = false;
  std::vector<std::string> consumed_ids;  // in consumption order
  std::vector<double> epoch_loss;
};

/// Supervised fine-tuning on exactly forget_subset(ratio). `unlearn_ratio` is
/// the ratio the unlearn adapter was trained at and must equal `ratio`.
RelearnResult run_sft_relearn(const Transformer<float>& base, const LowRankAdapter<float>& unlearned,
                              int unlearn_ratio, const Corpus& corpus, const SplitManifest& manifest, int ratio,
                              const RelearnConfig& config, const std::filesystem::path& run_dir = {},
                              const std::function<void(int epoch, double loss)>& on_epoch = {});

/// Adapter list to evaluate a relearned model with.
std::vector<const LowRankAdapter<float>*> relearned_adapters(const LowRankAdapter<float>& unlearned,
                                                             const RelearnResult& result);

nlohmann::json relearn_config_to_json(const RelearnConfig& config);
RelearnConfig relearn_config_from_json(const nlohmann::json& j);

}  // namespace tal
