// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace tal {

/// Splits text into word-level pieces: identifier/number runs, multi-character
/// operators, and single punctuation characters. Whitespace is dropped.
std::vector<std::string> split_words(std::string_view text);

/// Word-level token inventory learned from a set of texts.
///
/// Structural tokens occupy fixed ids at the front of the inventory so that
/// label tokens used in option lines and after the answer marker never collide
/// with words that happen to spell "A" or "B" in question text.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kEos = 2;
  static constexpr int kNewline = 3;
  static constexpr int kAnswer = 4;
  static constexpr int kLabelA = 5;  // A..D occupy 5..8
  static constexpr int kParen = 9;
  static constexpr int kCoach = 10;
  static constexpr int kSpecialCount = 11;

  Vocabulary();

  /// Builds an inventory from the word pieces of `texts`, sorted for determinism.
  static Vocabulary build(std::span<const std::string> texts);
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  int size() const { return static_cast<int>(tokens_.size()); }
  int id(std::string_view word) const;
  const std::string& token(int id) const { return tokens_.at(static_cast<size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> encode(std::string_view text) const;
  /// Renders ids back to readable text; structural tokens are rendered by role.
  std::string decode(std::span<const int> ids) const;

  static int label_token(int label_index) { return kLabelA + label_index; }
  static bool is_label_token(int id) { return id >= kLabelA && id < kLabelA + 4; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace tal
