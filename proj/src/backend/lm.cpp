// SPDX-License-Identifier: Apache-2.0
#include "tal/lm.hpp"

#include <algorithm>
#include <cmath>

#include "tal/error.hpp"

namespace tal {

std::vector<int> encode_prompt(const Vocabulary& vocab, const McqItem& item, std::string_view context) {
  std::vector<int> ids = vocab.encode(item.question);
  ids.push_back(Vocabulary::kNewline);
  ids.push_back(Vocabulary::kNewline);
  for (size_t i = 0; i < kLabels.size(); ++i) {
    ids.push_back(Vocabulary::label_token(static_cast<int>(i)));
    ids.push_back(Vocabulary::kParen);
    auto it = item.options.find(kLabels[i]);
    if (it != item.options.end()) {
      auto opt = vocab.encode(it->second);
      ids.insert(ids.end(), opt.begin(), opt.end());
    }
    ids.push_back(Vocabulary::kNewline);
  }
  if (!context.empty()) {
    ids.push_back(Vocabulary::kCoach);
    auto ctx = vocab.encode(context);
    ids.insert(ids.end(), ctx.begin(), ctx.end());
    ids.push_back(Vocabulary::kNewline);
  }
  ids.push_back(Vocabulary::kAnswer);
  return ids;
}

Example make_example(const Vocabulary& vocab, const McqItem& item, AnswerSpan span, int context_length,
                     std::string_view context, std::string_view explanation_override) {
  const int label = label_index(item.answer);
  require(label >= 0, "item " + item.id + " has no valid answer label");
  auto prompt = encode_prompt(vocab, item, context);
  // The prompt plus the label and eos must fit.
  if (static_cast<int>(prompt.size()) + 2 > context_length + 1)
    fail(errc::kShapeMismatch, "prompt of item " + item.id + " exceeds the context length");

  std::vector<int> seq = prompt;
  seq.push_back(Vocabulary::label_token(label));
  auto expl = vocab.encode(explanation_override.empty() ? std::string_view(item.explanation) : explanation_override);
  const size_t room = static_cast<size_t>(context_length + 1) - seq.size() - 1;
  if (expl.size() > room) expl.resize(room);
  seq.insert(seq.end(), expl.begin(), expl.end());
  seq.push_back(Vocabulary::kEos);

  Example ex;
  ex.inputs.assign(seq.begin(), seq.end() - 1);
  ex.targets.assign(seq.begin() + 1, seq.end());
  ex.answer_row = static_cast<int>(prompt.size()) - 1;
  ex.mask.assign(ex.inputs.size(), 0);
  if (span == AnswerSpan::label_only) {
    ex.mask[static_cast<size_t>(ex.answer_row)] = 1;
  } else {
    for (size_t t = static_cast<size_t>(ex.answer_row); t < ex.mask.size(); ++t) ex.mask[t] = 1;
  }
  return ex;
}

template <typename S>
MaskedLoss masked_cross_entropy(const Mat<S>& logits, std::span<const int> targets,
                                std::span<const std::uint8_t> mask) {
  if (static_cast<size_t>(logits.rows()) != targets.size() || targets.size() != mask.size())
    fail(errc::kShapeMismatch, "logits, targets and mask disagree in length");
  MaskedLoss out;
  out.d_logits = Mat<double>::Zero(logits.rows(), logits.cols());
  out.row_loss.assign(mask.size(), 0.0);
  for (size_t t = 0; t < mask.size(); ++t) out.count += mask[t] != 0;
  if (out.count == 0) return out;
  const double inv = 1.0 / static_cast<double>(out.count);
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    if (mask[static_cast<size_t>(r)] == 0) continue;
    const int target = targets[static_cast<size_t>(r)];
    if (target < 0 || target >= logits.cols()) fail(errc::kShapeMismatch, "target id out of range");
    Eigen::RowVectorXd row = logits.row(r).template cast<double>();
    const double mx = row.maxCoeff();
    Eigen::RowVectorXd e = (row.array() - mx).exp();
    const double z = e.sum();
    out.row_loss[static_cast<size_t>(r)] = std::log(z) + mx - row(target);
    out.loss += out.row_loss[static_cast<size_t>(r)] * inv;
    out.d_logits.row(r) = e / z * inv;
    out.d_logits(r, target) -= inv;
  }
  return out;
}

template MaskedLoss masked_cross_entropy<float>(const Mat<float>&, std::span<const int>, std::span<const std::uint8_t>);
template MaskedLoss masked_cross_entropy<double>(const Mat<double>&, std::span<const int>, std::span<const std::uint8_t>);

std::array<double, 4> option_distribution(const ModelView<float>& model, std::span<const int> prompt) {
  require(!prompt.empty() && prompt.back() == Vocabulary::kAnswer, "prompt must end with the answer marker");
  require(static_cast<int>(prompt.size()) <= model.config().context_length, "prompt exceeds the context length");
  ForwardCache<float> cache;
  forward(model, prompt, cache);
  const auto scores = label_scores(model, cache, static_cast<int>(prompt.size()) - 1);
  std::array<double, 4> p{};
  const double mx = *std::max_element(scores.begin(), scores.end());
  double z = 0.0;
  for (size_t i = 0; i < 4; ++i) z += p[i] = std::exp(static_cast<double>(scores[i]) - mx);
  for (auto& v : p) v /= z;
  return p;
}

std::array<double, 4> option_distribution(const ModelView<float>& model, const McqItem& item,
                                          std::string_view context) {
  return option_distribution(model, encode_prompt(model.config().vocabulary, item, context));
}

char argmax_label(const std::array<double, 4>& dist) {
  size_t best = 0;
  for (size_t i = 1; i < dist.size(); ++i)
    if (dist[i] > dist[best]) best = i;
  return kLabels[best];
}

char predict_label(const ModelView<float>& model, const McqItem& item, std::string_view context) {
  return argmax_label(option_distribution(model, item, context));
}

namespace {

std::string decode_after_label(const ModelView<float>& model, std::span<const int> prompt, char label, int budget) {
  require(budget >= 1, "explanation token budget must be at least 1");
  auto state = make_decode_state(model);
  RowVec<float> logits;
  for (int tok : prompt) logits = decode_step(model, state, tok);
  const int context_length = model.config().context_length;
  std::vector<int> generated;
  int next = Vocabulary::label_token(label_index(label));
  while (state.length < context_length && static_cast<int>(generated.size()) < budget) {
    logits = decode_step(model, state, next);
    // Structural tokens other than eos are never emitted inside an explanation.
    Eigen::Index best = -1;
    for (Eigen::Index v = 0; v < logits.cols(); ++v) {
      if (v < Vocabulary::kSpecialCount && v != Vocabulary::kEos) continue;
      if (best < 0 || logits(v) > logits(best)) best = v;
    }
    next = static_cast<int>(best);
    if (next == Vocabulary::kEos) break;
    generated.push_back(next);
  }
  return model.config().vocabulary.decode(generated);
}

}  // namespace

Response respond(const ModelView<float>& model, const McqItem& item, int budget, std::string_view context) {
  require(budget >= 1, "explanation token budget must be at least 1");
  const auto prompt = encode_prompt(model.config().vocabulary, item, context);
  Response out;
  out.distribution = option_distribution(model, prompt);
  out.label = argmax_label(out.distribution);
  out.explanation = decode_after_label(model, prompt, out.label, budget);
  return out;
}

std::string generate_explanation(const ModelView<float>& model, const McqItem& item, int budget,
                                 std::string_view context) {
  return respond(model, item, budget, context).explanation;
}

std::string generate_explanation(const ModelView<float>& model, const McqItem& item, char chosen, int budget,
                                 std::string_view context) {
  require(label_index(chosen) >= 0, "chosen label must be one of A-D");
  return decode_after_label(model, encode_prompt(model.config().vocabulary, item, context), chosen, budget);
}

Vocabulary build_vocabulary(std::span<const Corpus* const> corpora, std::span<const std::string> extra) {
  std::vector<std::string> texts(extra.begin(), extra.end());
  for (const Corpus* c : corpora) {
    for (const auto& item : c->items()) {
      texts.push_back(item.question);
      texts.push_back(item.explanation);
      for (const auto& [_, text] : item.options) texts.push_back(text);
    }
  }
  return Vocabulary::build(texts);
}

}  // namespace tal
