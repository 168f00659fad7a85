// SPDX-License-Identifier: Apache-2.0
#include "tal/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "tal/error.hpp"

namespace tal {
namespace {

constexpr std::array<std::string_view, 14> kOperators = {
    "//", "**", "==", "!=", "<=", ">=", "+=", "-=", "*=", "/=", "->", "...", "<<", ">>"};

const std::array<std::string, Vocabulary::kSpecialCount> kSpecials = {
    "<pad>", "<unk>", "<eos>", "<nl>", "<answer>", "<A>", "<B>", "<C>", "<D>", "<)>", "<coach>"};

bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_';
}

bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }

}  // namespace

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c)) != 0) {
      ++i;
      continue;
    }
    if (is_word_char(c)) {
      size_t j = i;
      while (j < text.size()) {
        if (is_word_char(text[j])) {
          ++j;
        } else if (text[j] == '.' && j > i && is_digit(text[j - 1]) && j + 1 < text.size() &&
                   is_digit(text[j + 1])) {
          ++j;  // decimal point inside a number
        } else {
          break;
        }
      }
      out.emplace_back(text.substr(i, j - i));
      i = j;
      continue;
    }
    bool matched = false;
    for (auto op : kOperators) {
      if (text.substr(i, op.size()) == op) {
        out.emplace_back(op);
        i += op.size();
        matched = true;
        break;
      }
    }
    if (!matched) {
      out.emplace_back(1, c);
      ++i;
    }
  }
  return out;
}

Vocabulary::Vocabulary() {
  for (const auto& s : kSpecials) {
    index_.emplace(s, static_cast<int>(tokens_.size()));
    tokens_.push_back(s);
  }
}

Vocabulary Vocabulary::build(std::span<const std::string> texts) {
  std::set<std::string> words;
  for (const auto& t : texts) {
    for (auto& w : split_words(t)) words.insert(std::move(w));
  }
  std::vector<std::string> tokens(kSpecials.begin(), kSpecials.end());
  for (const auto& w : words) {
    if (std::find(kSpecials.begin(), kSpecials.end(), w) == kSpecials.end()) tokens.push_back(w);
  }
  return from_tokens(std::move(tokens));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  require(tokens.size() >= kSpecialCount, "vocabulary is missing structural tokens");
  for (int i = 0; i < kSpecialCount; ++i) {
    require(tokens[static_cast<size_t>(i)] == kSpecials[static_cast<size_t>(i)],
            "vocabulary structural token mismatch at " + std::to_string(i));
  }
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  v.index_.clear();
  for (size_t i = 0; i < v.tokens_.size(); ++i) {
    auto [_, inserted] = v.index_.emplace(v.tokens_[i], static_cast<int>(i));
    require(inserted, "duplicate vocabulary token '" + v.tokens_[i] + "'");
  }
  return v;
}

int Vocabulary::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end() || it->second < kSpecialCount) return kUnk;
  return it->second;
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& w : split_words(text)) ids.push_back(id(w));
  return ids;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
  std::string out;
  auto append = [&](const std::string& piece) {
    if (!out.empty() && out.back() != '\n' && out.back() != '(' && piece != "." && piece != "," &&
        piece != ")" && piece != ":" && piece != ";" && piece != "?" && piece != "(")
      out += ' ';
    out += piece;
  };
  for (int id : ids) {
    switch (id) {
      case kPad:
        break;
      case kEos:
        return out;
      case kNewline:
        out += '\n';
        break;
      case kAnswer:
        append("Answer:");
        break;
      case kParen:
        out += ')';
        break;
      case kCoach:
        append("Coach:");
        break;
      default:
        if (is_label_token(id)) {
          append(std::string(1, static_cast<char>('A' + (id - kLabelA))));
        } else {
          append(tokens_.at(static_cast<size_t>(id)));
        }
    }
  }
  return out;
}

}  // namespace tal
