// SPDX-License-Identifier: Apache-2.0
#include "tal/unlearn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "tal/checkpoint.hpp"
#include "tal/error.hpp"

namespace tal {

void UnlearnConfig::validate() const {
  require(beta > 0.0, "beta must be positive");
  require(retention_strength >= 0.0, "retention strength must be non-negative");
  require(n_alternatives >= 1 && n_alternatives <= 3, "n_alternatives must be in [1, 3]");
  require(epochs >= 0, "epochs must be non-negative");
  require(learning_rate > 0.0, "learning rate must be positive");
  require(batch_size > 0, "batch size must be positive");
  require(adapter_rank > 0 && adapter_alpha > 0.0, "adapter rank and alpha must be positive");
}

TeacherDistribution build_teacher(const McqItem& item, int n) {
  require(n >= 1 && n <= 3, "n_alternatives must be in [1, 3]");
  const int correct = label_index(item.answer);
  require(correct >= 0, "item " + item.id + " has no valid correct label");
  TeacherDistribution out{item.id, {}};
  int placed = 0;
  for (int i = 0; i < 4 && placed < n; ++i) {
    if (i == correct) continue;
    out.probabilities[static_cast<size_t>(i)] = 1.0 / n;
    ++placed;
  }
  return out;
}

double forget_loss(const OptionDistribution& model, const TeacherDistribution& teacher) {
  double kl = 0.0;
  for (size_t i = 0; i < 4; ++i) {
    const double q = teacher.probabilities[i];
    if (q <= 0.0) continue;
    kl += q * (std::log(q) - std::log(std::max(model[i], kProbabilityFloor)));
  }
  return kl;
}

UnlearnExample make_unlearn_example(const Vocabulary& vocab, const McqItem& item, int n_alternatives,
                                    int context_length) {
  UnlearnExample ex{item.id, encode_prompt(vocab, item), label_index(item.answer),
                    build_teacher(item, n_alternatives).probabilities, {}};
  if (context_length > 0)
    ex.sequence = make_example(vocab, item, AnswerSpan::label_and_explanation, context_length);
  return ex;
}

namespace {

template <typename S>
OptionDistribution softmax4(const std::array<S, 4>& scores) {
  OptionDistribution p{};
  const double mx = static_cast<double>(*std::max_element(scores.begin(), scores.end()));
  double z = 0.0;
  for (size_t i = 0; i < 4; ++i) z += p[i] = std::exp(static_cast<double>(scores[i]) - mx);
  for (auto& v : p) v /= z;
  return p;
}

// Label cross-entropy over the four option scores plus the mean token
// cross-entropy of the explanation, from one pass over the full sequence.
template <typename S>
double span_term(const ModelView<S>& model, const UnlearnExample& ex, double weight, ForwardCache<S>& cache,
                 GradientSink<S>* sink) {
  const Example& seq = ex.sequence;
  require(!seq.inputs.empty(), "retain example " + ex.item_id + " has no answer-span sequence");
  std::vector<int> rows, targets;
  for (size_t t = 0; t < seq.mask.size(); ++t) {
    if (seq.mask[t] == 0 || static_cast<int>(t) == seq.answer_row) continue;
    rows.push_back(static_cast<int>(t));
    targets.push_back(seq.targets[t]);
  }
  forward(model, seq.inputs, cache);
  const auto p = softmax4(label_scores(model, cache, seq.answer_row));
  double value = -std::log(std::max(p[static_cast<size_t>(ex.answer)], kProbabilityFloor));
  MaskedLoss expl;
  Mat<S> logits;
  if (!rows.empty()) {
    logits = vocab_logits(model, cache, rows);
    const std::vector<std::uint8_t> all(rows.size(), 1);
    expl = masked_cross_entropy(logits, targets, all);
    value += expl.loss;
  }
  if (sink != nullptr) {
    Mat<S> d_hidden = Mat<S>::Zero(static_cast<Eigen::Index>(seq.inputs.size()), model.config().model_width);
    std::array<S, 4> d{};
    for (size_t i = 0; i < 4; ++i)
      d[i] = static_cast<S>(weight * (p[i] - (static_cast<int>(i) == ex.answer ? 1.0 : 0.0)));
    accumulate_label_grad(model, cache, seq.answer_row, d, d_hidden, *sink);
    if (!rows.empty()) {
      const Mat<S> d_logits = (expl.d_logits * weight).template cast<S>();
      accumulate_vocab_grad(model, cache, rows, d_logits, d_hidden, *sink);
    }
    backward(model, cache, d_hidden, *sink);
  }
  return value;
}

// One example's contribution. The forget term is KL(q || p) with gradient
// p - q on the scores; the label-only retain term is label cross-entropy.
template <typename S>
double example_term(const ModelView<S>& model, const UnlearnExample& ex, bool forget, double weight,
                    ForwardCache<S>& cache, GradientSink<S>* sink, bool retain_span) {
  if (!forget && retain_span) return span_term(model, ex, weight, cache, sink);
  require(!ex.prompt.empty(), "empty prompt for " + ex.item_id);
  forward(model, ex.prompt, cache);
  const int row = static_cast<int>(ex.prompt.size()) - 1;
  const auto p = softmax4(label_scores(model, cache, row));
  double value = 0.0;
  std::array<S, 4> d{};
  if (forget) {
    value = forget_loss(p, TeacherDistribution{ex.item_id, ex.teacher});
    for (size_t i = 0; i < 4; ++i) d[i] = static_cast<S>(weight * (p[i] - ex.teacher[i]));
  } else {
    value = -std::log(std::max(p[static_cast<size_t>(ex.answer)], kProbabilityFloor));
    for (size_t i = 0; i < 4; ++i)
      d[i] = static_cast<S>(weight * (p[i] - (static_cast<int>(i) == ex.answer ? 1.0 : 0.0)));
  }
  if (sink != nullptr) {
    Mat<S> d_hidden = Mat<S>::Zero(static_cast<Eigen::Index>(ex.prompt.size()), model.config().model_width);
    accumulate_label_grad(model, cache, row, d, d_hidden, *sink);
    backward(model, cache, d_hidden, *sink);
  }
  return value;
}

template <typename S>
ObjectiveTerms objective_impl(const ModelView<S>& model, std::span<const UnlearnExample> forget,
                              std::span<const UnlearnExample> retain, const UnlearnConfig& config,
                              GradientSink<S>* sink) {
  if (forget.empty()) fail(errc::kPrecondition, "forget batch is empty");
  require(!retain.empty() || config.retention_strength == 0.0,
          "retain batch may be empty only when retention strength is 0");
  ObjectiveTerms out;
  ForwardCache<S> cache;
  const double wf = config.beta / static_cast<double>(forget.size());
  for (const auto& ex : forget) out.forget_loss += example_term(model, ex, true, wf, cache, sink, false);
  out.forget_loss /= static_cast<double>(forget.size());
  if (config.retention_strength > 0.0 && !retain.empty()) {
    const double wr = config.retention_strength / static_cast<double>(retain.size());
    for (const auto& ex : retain)
      out.retain_loss += example_term(model, ex, false, wr, cache, sink, config.retain_explanation);
    out.retain_loss /= static_cast<double>(retain.size());
  }
  out.objective = config.beta * out.forget_loss + config.retention_strength * out.retain_loss;
  return out;
}

std::vector<UnlearnExample> examples_for(const Corpus& corpus, const IdSet& ids, const Vocabulary& vocab, int n,
                                         int context_length) {
  std::vector<UnlearnExample> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    if (!corpus.contains(id)) fail(errc::kNotFound, "manifest id " + id + " is not in the corpus");
    out.push_back(make_unlearn_example(vocab, corpus.at(id), n, context_length));
  }
  return out;
}

}  // namespace

template <typename S>
ObjectiveTerms unlearn_objective(const ModelView<S>& model, std::span<const UnlearnExample> forget,
                                 std::span<const UnlearnExample> retain, const UnlearnConfig& config) {
  return objective_impl<S>(model, forget, retain, config, nullptr);
}

template <typename S>
ObjectiveTerms accumulate_unlearn_gradient(const ModelView<S>& model, std::span<const UnlearnExample> forget,
                                           std::span<const UnlearnExample> retain, const UnlearnConfig& config,
                                           GradientSink<S>& sink) {
  return objective_impl<S>(model, forget, retain, config, &sink);
}

template ObjectiveTerms unlearn_objective<float>(const ModelView<float>&, std::span<const UnlearnExample>,
                                                 std::span<const UnlearnExample>, const UnlearnConfig&);
template ObjectiveTerms unlearn_objective<double>(const ModelView<double>&, std::span<const UnlearnExample>,
                                                  std::span<const UnlearnExample>, const UnlearnConfig&);
template ObjectiveTerms accumulate_unlearn_gradient<float>(const ModelView<float>&, std::span<const UnlearnExample>,
                                                           std::span<const UnlearnExample>, const UnlearnConfig&,
                                                           GradientSink<float>&);
template ObjectiveTerms accumulate_unlearn_gradient<double>(const ModelView<double>&,
                                                            std::span<const UnlearnExample>,
                                                            std::span<const UnlearnExample>, const UnlearnConfig&,
                                                            GradientSink<double>&);

ObjectiveTerms unlearn_objective(const ModelView<float>& model, std::span<const McqItem> forget,
                                 std::span<const McqItem> retain, const UnlearnConfig& config) {
  const auto& vocab = model.config().vocabulary;
  std::vector<UnlearnExample> f, r;
  for (const auto& item : forget) f.push_back(make_unlearn_example(vocab, item, config.n_alternatives));
  for (const auto& item : retain)
    r.push_back(make_unlearn_example(vocab, item, config.n_alternatives,
                                     config.retain_explanation ? model.config().context_length : 0));
  return unlearn_objective<float>(model, f, r, config);
}

nlohmann::json unlearn_config_to_json(const UnlearnConfig& c) {
  return {{"beta", c.beta},
          {"retention_strength", c.retention_strength},
          {"n_alternatives", c.n_alternatives},
          {"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"retain_explanation", c.retain_explanation},
          {"adapter_rank", c.adapter_rank},
          {"adapter_alpha", c.adapter_alpha},
          {"seed", c.seed}};
}

UnlearnConfig unlearn_config_from_json(const nlohmann::json& j) {
  UnlearnConfig c;
  try {
    c.beta = j.value("beta", c.beta);
    c.retention_strength = j.value("retention_strength", c.retention_strength);
    c.n_alternatives = j.value("n_alternatives", c.n_alternatives);
    c.epochs = j.value("epochs", c.epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.retain_explanation = j.value("retain_explanation", c.retain_explanation);
    c.adapter_rank = j.value("adapter_rank", c.adapter_rank);
    c.adapter_alpha = j.value("adapter_alpha", c.adapter_alpha);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    fail(errc::kMalformed, std::string("unlearn config: ") + e.what());
  }
  c.validate();
  return c;
}

UnlearnResult run_unlearning(const Transformer<float>& base, const Corpus& corpus, const SplitManifest& manifest,
                             int ratio, const UnlearnConfig& config, const std::filesystem::path& run_dir,
                             const std::function<void(const UnlearnEpoch&)>& on_epoch) {
  config.validate();
  const auto& vocab = base.config.vocabulary;
  const auto forget = examples_for(corpus, forget_subset(manifest, ratio), vocab, config.n_alternatives, 0);
  const auto retain = examples_for(corpus, manifest.retain, vocab, config.n_alternatives,
                                   config.retain_explanation ? base.config.context_length : 0);
  if (forget.empty()) fail(errc::kPrecondition, "forget subset is empty");

  UnlearnResult out{LowRankAdapter<float>::create(base, default_adapter_targets(base.config), config.adapter_rank,
                                                  config.adapter_alpha, config.seed),
                    {}};
  auto grads = out.adapter.zeros_like();
  GradientSink<float> sink{nullptr, &grads};
  Adam adam({config.learning_rate, 0.9, 0.999, 1e-8, 1.0}, tensor_refs(out.adapter));
  const auto grad_refs = tensor_refs(grads);
  ModelView<float> view(base, {&out.adapter});

  std::mt19937_64 rng(config.seed);
  std::vector<size_t> forget_order(forget.size()), retain_order(retain.size());
  std::iota(forget_order.begin(), forget_order.end(), 0);
  std::iota(retain_order.begin(), retain_order.end(), 0);
  std::shuffle(retain_order.begin(), retain_order.end(), rng);
  size_t retain_cursor = 0;
  const bool use_retain = config.retention_strength > 0.0 && !retain.empty();
  const size_t bs = static_cast<size_t>(config.batch_size);

  std::vector<UnlearnExample> fb, rb;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(forget_order.begin(), forget_order.end(), rng);
    UnlearnEpoch rec{epoch, 0.0, 0.0, 0.0};
    size_t steps = 0;
    for (size_t start = 0; start < forget.size(); start += bs) {
      fb.clear();
      rb.clear();
      for (size_t i = start; i < std::min(forget.size(), start + bs); ++i) fb.push_back(forget[forget_order[i]]);
      while (use_retain && rb.size() < bs) {
        if (retain_cursor == retain_order.size()) {
          std::shuffle(retain_order.begin(), retain_order.end(), rng);
          retain_cursor = 0;
        }
        rb.push_back(retain[retain_order[retain_cursor++]]);
      }
      view.refresh();
      grads.set_zero();
      const auto terms = accumulate_unlearn_gradient<float>(view, fb, rb, config, sink);
      if (!std::isfinite(terms.objective)) {
        std::string ids;
        for (const auto& ex : fb) ids += " " + ex.item_id;
        for (const auto& ex : rb) ids += " " + ex.item_id;
        fail(errc::kNonFinite, "non-finite unlearning objective at epoch " + std::to_string(epoch) + "; batch:" + ids);
      }
      adam.step(grad_refs);
      rec.forget_loss += terms.forget_loss;
      rec.retain_loss += terms.retain_loss;
      rec.objective += terms.objective;
      ++steps;
    }
    rec.forget_loss /= static_cast<double>(steps);
    rec.retain_loss /= static_cast<double>(steps);
    rec.objective /= static_cast<double>(steps);
    out.metrics.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }

  if (!run_dir.empty()) {
    std::filesystem::create_directories(run_dir);
    nlohmann::json cfg = unlearn_config_to_json(config);
    cfg["ratio"] = ratio;
    cfg["corpus_hash"] = manifest.corpus_hash;
    cfg["split_seed"] = manifest.seed;
    std::ofstream(run_dir / "config.json") << cfg.dump(2) << "\n";
    std::ofstream csv(run_dir / "metrics.csv");
    if (!csv) fail(errc::kIo, "cannot write " + (run_dir / "metrics.csv").string());
    csv << "epoch,forget_loss,retain_loss,objective\n";
    csv.precision(10);
    for (const auto& r : out.metrics)
      csv << r.epoch << "," << r.forget_loss << "," << r.retain_loss << "," << r.objective << "\n";
    save_adapter(out.adapter, run_dir / "adapter");
  }
  return out;
}

}  // namespace tal
