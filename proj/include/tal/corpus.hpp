// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace tal {

inline constexpr std::array<char, 4> kLabels = {'A', 'B', 'C', 'D'};

/// Index of label 'A'..'D', or -1.
inline int label_index(char label) { return (label >= 'A' && label <= 'D') ? label - 'A' : -1; }

enum class Source { web, generated, synthetic };

std::string to_string(Source source);
Source source_from_string(const std::string& text);

/// One multiple-choice question. Fields may hold invalid values (for example a
/// correct label of 'E'); validate_corpus reports them.
struct McqItem {
  std::string id;
  std::string question;
  std::map<char, std::string> options;
  char answer = 'A';
  std::string kc;
  std::string explanation;
  Source source = Source::synthetic;
  std::optional<std::string> source_url;

  const std::string& option(char label) const { return options.at(label); }
  bool operator==(const McqItem&) const = default;
};

class Corpus {
 public:
  Corpus() = default;
  explicit Corpus(std::vector<McqItem> items);

  const std::vector<McqItem>& items() const { return items_; }
  const std::map<std::string, std::vector<std::string>>& kc_index() const { return kc_index_; }
  size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }

  const McqItem& at(const std::string& id) const;
  bool contains(const std::string& id) const { return by_id_.contains(id); }
  std::vector<McqItem> select(const std::set<std::string>& ids) const;

  bool operator==(const Corpus& other) const { return items_ == other.items_; }

 private:
  std::vector<McqItem> items_;
  std::map<std::string, std::vector<std::string>> kc_index_;
  std::unordered_map<std::string, size_t> by_id_;
};

struct Violation {
  std::string item_id;
  std::string rule;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;
  std::vector<std::set<std::string>> duplicate_groups;

  bool ok() const { return violations.empty() && duplicate_groups.empty(); }
};

namespace rule {
inline constexpr const char* kOptionIncomplete = "option-incomplete";
inline constexpr const char* kAnswerConsistency = "answer-consistency";
inline constexpr const char* kExplanationMissing = "explanation-missing";
inline constexpr const char* kDuplicateId = "duplicate-id";
inline constexpr const char* kFieldMissing = "field-missing";
}  // namespace rule

/// Lowercase, punctuation stripped, whitespace collapsed.
std::string normalize_question(const std::string& text);

/// Item-level invariant violations (no cross-item checks).
std::vector<Violation> validate_item(const McqItem& item);
ValidationReport validate_corpus(const Corpus& corpus);
/// Keeps the lexicographically smallest id of every duplicate group.
Corpus dedup_corpus(const Corpus& corpus);

/// One canonical JSON line (no trailing newline).
std::string item_to_json_line(const McqItem& item);
McqItem item_from_json_line(const std::string& line, size_t line_number);

/// Throws on missing file, malformed or invalid record (with line number) and
/// on an empty file.
Corpus load_corpus(const std::filesystem::path& path);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
std::string canonical_bytes(const Corpus& corpus);
/// Hex SHA-256 of canonical_bytes.
std::string corpus_hash(const Corpus& corpus);
std::string sha256_hex(std::string_view bytes);

/// Deterministic template-based corpus generation.
///
/// `shape` maps each knowledge component to an item count. Knowledge
/// components with a built-in fact bank get Python-flavoured items; any other
/// name falls back to a generic symbolic bank.
Corpus generate_synthetic_corpus(const std::map<std::string, int>& shape, std::uint64_t seed);

/// Background training corpus for the base model: paraphrased items over the
/// same facts as generate_synthetic_corpus(shape, seed), covering only the facts
/// that recur in that corpus. Ids are prefixed with "pre-".
Corpus generate_pretraining_corpus(const std::map<std::string, int>& shape, std::uint64_t seed,
                                   int variants_per_fact);

/// 22 knowledge components: 16 totalling 1,823 items and 6 totalling 251.
std::map<std::string, int> reference_shape();

}  // namespace tal
