// SPDX-License-Identifier: Apache-2.0
#include "tal/relearn.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>

#include "tal/checkpoint.hpp"
#include "tal/error.hpp"

namespace tal {

void RelearnConfig::validate() const {
  require(epochs >= 1, "relearn epochs must be at least 1");
  require(learning_rate > 0.0, "learning rate must be positive");
  require(batch_size > 0, "batch size must be positive");
}

std::vector<std::uint8_t> answer_span_mask(std::span<const int> sequence, bool include_explanation) {
  const auto it = std::find(sequence.begin(), sequence.end(), Vocabulary::kAnswer);
  if (it == sequence.end()) fail(errc::kMalformed, "sequence has no answer marker");
  std::vector<std::uint8_t> mask(sequence.size(), 0);
  for (auto t = static_cast<size_t>(it - sequence.begin()) + 1; t < sequence.size(); ++t) {
    mask[t] = 1;
    if (!include_explanation) break;
  }
  return mask;
}

RelearnResult run_sft_relearn(const Transformer<float>& base, const LowRankAdapter<float>& unlearned,
                              int unlearn_ratio, const Corpus& corpus, const SplitManifest& manifest, int ratio,
                              const RelearnConfig& config, const std::filesystem::path& run_dir,
                              const std::function<void(int epoch, double loss)>& on_epoch) {
  config.validate();
  if (unlearn_ratio != ratio)
    fail(errc::kConflict, "unlearn run was trained at ratio " + std::to_string(unlearn_ratio) +
                              " but relearning was requested at ratio " + std::to_string(ratio));
  unlearned.check_compatible(base);
  const auto span =
      config.include_explanation_in_answer_span ? AnswerSpan::label_and_explanation : AnswerSpan::label_only;
  std::vector<Example> examples;
  std::vector<std::string> ids;
  for (const auto& id : forget_subset(manifest, ratio)) {
    if (!corpus.contains(id)) fail(errc::kNotFound, "manifest id " + id + " is not in the corpus");
    examples.push_back(make_example(base.config.vocabulary, corpus.at(id), span, base.config.context_length));
    ids.push_back(id);
  }
  require(!examples.empty(), "forget subset is empty");

  std::vector<std::string> targets;
  for (const auto& [name, _] : unlearned.factors) targets.push_back(name);
  RelearnResult out{config.stack_adapter
                        ? LowRankAdapter<float>::create(base, targets, unlearned.rank, unlearned.alpha, config.seed)
                        : unlearned,
                    config.stack_adapter, {}, {}};
  auto grads = out.adapter.zeros_like();
  GradientSink<float> sink{nullptr, &grads};
  Adam adam({config.learning_rate, 0.9, 0.999, 1e-8, 1.0}, tensor_refs(out.adapter));
  const auto grad_refs = tensor_refs(grads);
  ModelView<float> view(base, relearned_adapters(unlearned, out));

  std::mt19937_64 rng(config.seed);
  std::vector<size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  const size_t bs = static_cast<size_t>(config.batch_size);
  std::vector<Example> batch;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss = 0.0;
    for (size_t start = 0; start < examples.size(); start += bs) {
      batch.clear();
      for (size_t i = start; i < std::min(examples.size(), start + bs); ++i) {
        batch.push_back(examples[order[i]]);
        out.consumed_ids.push_back(ids[order[i]]);
      }
      view.refresh();
      grads.set_zero();
      loss += accumulate_sft_gradient(view, batch, sink).loss * static_cast<double>(batch.size());
      adam.step(grad_refs);
    }
    out.epoch_loss.push_back(loss / static_cast<double>(examples.size()));
    if (on_epoch) on_epoch(epoch, out.epoch_loss.back());
  }

  if (!run_dir.empty()) {
    std::filesystem::create_directories(run_dir);
    nlohmann::json cfg = relearn_config_to_json(config);
    cfg["ratio"] = ratio;
    cfg["corpus_hash"] = manifest.corpus_hash;
    cfg["split_seed"] = manifest.seed;
    std::ofstream(run_dir / "config.json") << cfg.dump(2) << "\n";
    std::ofstream csv(run_dir / "metrics.csv");
    if (!csv) fail(errc::kIo, "cannot write " + (run_dir / "metrics.csv").string());
    csv << "epoch,loss\n";
    csv.precision(10);
    for (size_t e = 0; e < out.epoch_loss.size(); ++e) csv << e << "," << out.epoch_loss[e] << "\n";
    std::ofstream log(run_dir / "consumed_ids.txt");
    for (const auto& id : out.consumed_ids) log << id << "\n";
    save_adapter(out.adapter, run_dir / "adapter");
  }
  return out;
}

std::vector<const LowRankAdapter<float>*> relearned_adapters(const LowRankAdapter<float>& unlearned,
                                                             const RelearnResult& result) {
  if (result.stacked) return {&unlearned, &result.adapter};
  return {&result.adapter};
}

nlohmann::json relearn_config_to_json(const RelearnConfig& c) {
  return {{"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"include_explanation_in_answer_span", c.include_explanation_in_answer_span},
          {"stack_adapter", c.stack_adapter},
          {"seed", c.seed}};
}

RelearnConfig relearn_config_from_json(const nlohmann::json& j) {
  RelearnConfig c;
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.include_explanation_in_answer_span =
        j.value("include_explanation_in_answer_span", c.include_explanation_in_answer_span);
    c.stack_adapter = j.value("stack_adapter", c.stack_adapter);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    fail(errc::kMalformed, std::string("relearn config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace tal
