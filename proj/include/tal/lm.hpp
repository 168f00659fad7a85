// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tal/corpus.hpp"
#include "tal/engine.hpp"

namespace tal {

/// Which tokens after the prompt carry training signal.
enum class AnswerSpan { label_and_explanation, label_only };

/// Question, blank line, four "<L> ) option" lines, optional coach context,
/// then the answer marker. The label is predicted right after the marker.
std::vector<int> encode_prompt(const Vocabulary& vocab, const McqItem& item, std::string_view context = {});

/// Teacher-forced sequence: `inputs[t]` predicts `targets[t]`; `mask[t]` selects
/// the rows that enter the loss. `answer_row` is the row that predicts the label.
struct Example {
  std::vector<int> inputs;
  std::vector<int> targets;
  std::vector<std::uint8_t> mask;
  int answer_row = 0;
  /// Relative weight of the answer row inside the per-sequence mean.
  double label_weight = 1.0;
};

/// Prompt + label + explanation + eos. The explanation is truncated to fit
/// `context_length`; a prompt that does not fit throws.
Example make_example(const Vocabulary& vocab, const McqItem& item, AnswerSpan span, int context_length,
                     std::string_view context = {}, std::string_view explanation_override = {});

struct MaskedLoss {
  double loss = 0.0;
  size_t count = 0;
  std::vector<double> row_loss;  // per row, zero on unmasked rows
  Mat<double> d_logits;  // d(loss)/d(logits), zero on unmasked rows
};

/// Mean cross-entropy over rows with mask != 0. Logits are (rows x vocab).
template <typename S>
MaskedLoss masked_cross_entropy(const Mat<S>& logits, std::span<const int> targets,
                                std::span<const std::uint8_t> mask);

/// Softmax over the four label scores at the answer position.
std::array<double, 4> option_distribution(const ModelView<float>& model, const McqItem& item,
                                          std::string_view context = {});
std::array<double, 4> option_distribution(const ModelView<float>& model, std::span<const int> prompt);

/// Highest-probability label; ties resolve to the earlier label.
char argmax_label(const std::array<double, 4>& dist);
char predict_label(const ModelView<float>& model, const McqItem& item, std::string_view context = {});

struct Response {
  char label = 'A';
  std::string explanation;
  std::array<double, 4> distribution{};
};

/// Predicted label followed by a greedy explanation of at most `budget` tokens.
Response respond(const ModelView<float>& model, const McqItem& item, int budget, std::string_view context = {});
std::string generate_explanation(const ModelView<float>& model, const McqItem& item, int budget,
                                 std::string_view context = {});
/// Greedy explanation conditioned on `chosen` in place of the predicted label.
std::string generate_explanation(const ModelView<float>& model, const McqItem& item, char chosen, int budget,
                                 std::string_view context = {});

/// Vocabulary covering every text field of the given corpora plus `extra` texts.
Vocabulary build_vocabulary(std::span<const Corpus* const> corpora, std::span<const std::string> extra = {});

}  // namespace tal
