// SPDX-License-Identifier: Apache-2.0
#include "tal/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <random>

#include "tal/error.hpp"

namespace tal {

Adam::Adam(AdamConfig config, std::vector<Mat<float>*> params) : config_(config), params_(std::move(params)) {
  for (auto* p : params_) {
    m_.push_back(Mat<float>::Zero(p->rows(), p->cols()));
    v_.push_back(Mat<float>::Zero(p->rows(), p->cols()));
  }
}

void Adam::step(const std::vector<Mat<float>*>& grads) {
  require(grads.size() == params_.size(), "gradient list does not match parameter list");
  double norm2 = 0.0;
  for (auto* g : grads) norm2 += static_cast<double>(g->squaredNorm());
  check_finite(norm2, "gradient norm");
  float clip = 1.0f;
  if (config_.clip_norm > 0 && norm2 > config_.clip_norm * config_.clip_norm)
    clip = static_cast<float>(config_.clip_norm / std::sqrt(norm2));
  ++steps_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  const float lr = static_cast<float>(config_.learning_rate * std::sqrt(bc2) / bc1);
  const float b1 = static_cast<float>(config_.beta1), b2 = static_cast<float>(config_.beta2);
  const float eps = static_cast<float>(config_.epsilon * std::sqrt(bc2));
  for (size_t i = 0; i < params_.size(); ++i) {
    auto g = (*grads[i] * clip).array();
    m_[i].array() = b1 * m_[i].array() + (1 - b1) * g;
    v_[i].array() = b2 * v_[i].array() + (1 - b2) * g.square();
    params_[i]->array() -= lr * m_[i].array() / (v_[i].array().sqrt() + eps);
  }
}

std::vector<Mat<float>*> tensor_refs(ParamStore<float>& store) {
  std::vector<Mat<float>*> out;
  for (size_t i = 0; i < store.size(); ++i) out.push_back(&store[i]);
  return out;
}

std::vector<Mat<float>*> tensor_refs(LowRankAdapter<float>& adapter) {
  std::vector<Mat<float>*> out;
  for (auto& [_, f] : adapter.factors) {
    out.push_back(&f.down);
    out.push_back(&f.up);
  }
  return out;
}

void check_finite(double value, const std::string& what) {
  if (!std::isfinite(value)) fail(errc::kNonFinite, what + " is not finite");
}

SftStats accumulate_sft_gradient(const ModelView<float>& model, std::span<const Example> batch,
                                 GradientSink<float>& sink) {
  require(!batch.empty(), "empty batch");
  const int width = model.config().model_width;
  SftStats stats;
  ForwardCache<float> cache;
  for (const auto& ex : batch) {
    std::vector<int> rows, targets;
    for (size_t t = 0; t < ex.mask.size(); ++t) {
      if (ex.mask[t] == 0) continue;
      rows.push_back(static_cast<int>(t));
      targets.push_back(ex.targets[t]);
    }
    require(!rows.empty(), "example without supervised tokens");
    forward(model, ex.inputs, cache);
    const Mat<float> logits = vocab_logits(model, cache, rows);
    const std::vector<std::uint8_t> all(rows.size(), 1);
    auto loss = masked_cross_entropy(logits, targets, all);
    check_finite(loss.loss, "training loss");

    const double n = static_cast<double>(rows.size());
    const double norm = n - 1.0 + ex.label_weight;
    double weighted = 0.0;
    for (size_t i = 0; i < rows.size(); ++i) {
      const double w = rows[i] == ex.answer_row ? ex.label_weight : 1.0;
      weighted += w * loss.row_loss[i];
      if (w != 1.0) loss.d_logits.row(static_cast<Eigen::Index>(i)) *= w;
      if (rows[i] == ex.answer_row && Vocabulary::is_label_token(targets[i])) {
        Eigen::Index best = 0;
        logits.row(static_cast<Eigen::Index>(i)).segment(Vocabulary::kLabelA, 4).maxCoeff(&best);
        stats.label_correct += Vocabulary::kLabelA + static_cast<int>(best) == targets[i];
      }
    }
    stats.loss += weighted / norm;
    // masked_cross_entropy already divided by n.
    Mat<float> d_logits = (loss.d_logits * (n / norm / static_cast<double>(batch.size()))).cast<float>();
    Mat<float> d_hidden = Mat<float>::Zero(static_cast<Eigen::Index>(ex.inputs.size()), width);
    accumulate_vocab_grad(model, cache, rows, d_logits, d_hidden, sink);
    backward(model, cache, d_hidden, sink);
  }
  stats.loss /= static_cast<double>(batch.size());
  return stats;
}

PretrainResult pretrain_base(const Corpus& corpus, const ModelConfig& model_config, const PretrainConfig& config) {
  if (corpus.empty()) fail(errc::kEmptyCorpus, "pretraining corpus is empty");
  require(config.epochs > 0 && config.batch_size > 0, "epochs and batch size must be positive");
  require(config.label_weight > 0.0, "label weight must be positive");
  model_config.validate();
  const auto report = validate_corpus(corpus);
  if (!report.violations.empty())
    fail(report.violations.front().rule, "pretraining corpus fails validation: " + report.violations.front().message);

  PretrainResult out{Transformer<float>::init(model_config), {}};
  std::vector<Example> examples;
  for (const auto& item : corpus.items()) {
    examples.push_back(make_example(model_config.vocabulary, item, config.span, model_config.context_length));
    examples.back().label_weight = config.label_weight;
  }

  auto grads = out.model.params.zeros_like();
  GradientSink<float> sink{&grads, nullptr};
  Adam adam(config.adam, tensor_refs(out.model.params));
  const auto grad_refs = tensor_refs(grads);

  std::mt19937_64 rng(config.seed);
  std::vector<size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  const size_t bs = static_cast<size_t>(config.batch_size);
  const size_t batches = (examples.size() + bs - 1) / bs;
  const double total_steps = static_cast<double>(batches) * config.epochs;
  std::vector<Example> batch;
  ModelView<float> view(out.model);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    int correct = 0;
    for (size_t b = 0; b < batches; ++b) {
      batch.clear();
      for (size_t i = b * bs; i < std::min(examples.size(), (b + 1) * bs); ++i) batch.push_back(examples[order[i]]);
      view.refresh();
      grads.set_zero();
      const auto stats = accumulate_sft_gradient(view, batch, sink);
      epoch_loss += stats.loss * static_cast<double>(batch.size());
      correct += stats.label_correct;
      const double progress = static_cast<double>(adam.steps()) / total_steps;
      adam.set_learning_rate(config.adam.learning_rate * (1.0 - (1.0 - config.final_lr_fraction) * progress));
      adam.step(grad_refs);
    }
    EpochRecord rec{epoch, epoch_loss / static_cast<double>(examples.size()),
                    static_cast<double>(correct) / static_cast<double>(examples.size())};
    out.training_log.push_back(rec);
    if (config.on_epoch) config.on_epoch(rec.epoch, rec.loss, rec.accuracy);
  }
  return out;
}

void save_training_log(const std::vector<EpochRecord>& log, const std::filesystem::path& path) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : log) j.push_back({{"epoch", r.epoch}, {"loss", r.loss}, {"accuracy", r.accuracy}});
  std::ofstream out(path);
  if (!out) fail(errc::kIo, "cannot write " + path.string());
  out << j.dump(2) << "\n";
}

std::vector<EpochRecord> load_training_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(errc::kNotFound, "missing " + path.string());
  std::vector<EpochRecord> out;
  try {
    for (const auto& r : nlohmann::json::parse(in)) out.push_back({r.at("epoch"), r.at("loss"), r.at("accuracy")});
  } catch (const nlohmann::json::exception& e) {
    fail(errc::kMalformed, path.string() + ": " + e.what());
  }
  return out;
}

}  // namespace tal
