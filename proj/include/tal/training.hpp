// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "tal/lm.hpp"

namespace tal {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 1.0;  // global gradient-norm clip; <= 0 disables
};

/// Adam over a fixed list of matrices.
class Adam {
 public:
  Adam(AdamConfig config, std::vector<Mat<float>*> params);
  /// `grads` is parallel to the parameter list.
  void step(const std::vector<Mat<float>*>& grads);
  long steps() const { return steps_; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::vector<Mat<float>*> params_;
  std::vector<Mat<float>> m_, v_;
  long steps_ = 0;
};

std::vector<Mat<float>*> tensor_refs(ParamStore<float>& store);
std::vector<Mat<float>*> tensor_refs(LowRankAdapter<float>& adapter);

struct SftStats {
  double loss = 0.0;        // batch mean
  int label_correct = 0;    // teacher-forced label argmax hits at the answer row
};

/// Adds the gradient of the batch-mean masked cross-entropy into `sink`; each
/// sequence is normalized by its own (label-weighted) masked-token count.
SftStats accumulate_sft_gradient(const ModelView<float>& model, std::span<const Example> batch,
                                 GradientSink<float>& sink);

/// Throws non-finite-loss when `value` is NaN or infinite.
void check_finite(double value, const std::string& what);

struct PretrainConfig {
  int epochs = 20;
  int batch_size = 16;
  AdamConfig adam{2e-3, 0.9, 0.98, 1e-8, 1.0};
  double final_lr_fraction = 0.1;  // linear decay target
  AnswerSpan span = AnswerSpan::label_and_explanation;
  double label_weight = 8.0;
  std::uint64_t seed = 7;
  std::function<void(int epoch, double loss, double accuracy)> on_epoch;
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;  // teacher-forced label accuracy over the epoch
  bool operator==(const EpochRecord&) const = default;
};

struct PretrainResult {
  Transformer<float> model;
  std::vector<EpochRecord> training_log;
};

void save_training_log(const std::vector<EpochRecord>& log, const std::filesystem::path& path);
std::vector<EpochRecord> load_training_log(const std::filesystem::path& path);

/// Trains all base weights from `config.seed`-initialized values.
PretrainResult pretrain_base(const Corpus& corpus, const ModelConfig& model_config, const PretrainConfig& config);

}  // namespace tal
