// SPDX-License-Identifier: Apache-2.0
#include "tal/corpus.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tal/error.hpp"

namespace tal {

using ojson = nlohmann::ordered_json;

std::string to_string(Source source) {
  switch (source) {
    case Source::web:
      return "web";
    case Source::generated:
      return "generated";
    case Source::synthetic:
      return "synthetic";
  }
  return "synthetic";
}

Source source_from_string(const std::string& text) {
  if (text == "web") return Source::web;
  if (text == "generated") return Source::generated;
  if (text == "synthetic") return Source::synthetic;
  fail(errc::kMalformed, "unknown source '" + text + "'");
}

Corpus::Corpus(std::vector<McqItem> items) : items_(std::move(items)) {
  for (size_t i = 0; i < items_.size(); ++i) {
    by_id_.emplace(items_[i].id, i);
    kc_index_[items_[i].kc].push_back(items_[i].id);
  }
}

const McqItem& Corpus::at(const std::string& id) const {
  auto it = by_id_.find(id);
  if (it == by_id_.end()) fail(errc::kNotFound, "no item with id " + id);
  return items_[it->second];
}

std::vector<McqItem> Corpus::select(const std::set<std::string>& ids) const {
  std::vector<McqItem> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(at(id));
  return out;
}

std::string normalize_question(const std::string& text) {
  std::string out;
  bool pending_space = false;
  for (char raw : text) {
    const auto c = static_cast<unsigned char>(raw);
    if (std::isspace(c) != 0) {
      pending_space = true;
    } else if (std::ispunct(c) != 0) {
      continue;
    } else {
      if (pending_space && !out.empty()) out += ' ';
      pending_space = false;
      out += static_cast<char>(std::tolower(c));
    }
  }
  return out;
}

std::vector<Violation> validate_item(const McqItem& item) {
  std::vector<Violation> out;
  auto add = [&](const char* rule, std::string msg) { out.push_back({item.id, rule, std::move(msg)}); };
  if (item.id.empty()) add(rule::kFieldMissing, "id is empty");
  if (item.question.empty()) add(rule::kFieldMissing, "question is empty");
  if (item.kc.empty()) add(rule::kFieldMissing, "concept is empty");
  for (char label : kLabels) {
    auto it = item.options.find(label);
    if (it == item.options.end()) {
      add(rule::kOptionIncomplete, std::string("option ") + label + " is missing");
    } else if (it->second.empty()) {
      add(rule::kOptionIncomplete, std::string("option ") + label + " is empty");
    }
  }
  for (const auto& [label, _] : item.options) {
    if (label_index(label) < 0) add(rule::kOptionIncomplete, std::string("unexpected option label ") + label);
  }
  if (label_index(item.answer) < 0) {
    add(rule::kAnswerConsistency, std::string("answer '") + item.answer + "' is not one of A-D");
  } else if (!item.options.contains(item.answer)) {
    add(rule::kAnswerConsistency, std::string("answer '") + item.answer + "' has no option text");
  }
  if (item.explanation.empty()) add(rule::kExplanationMissing, "explanation is empty");
  return out;
}

namespace {

std::map<std::string, std::set<std::string>> group_by_normalized(const Corpus& corpus) {
  std::map<std::string, std::set<std::string>> groups;
  for (const auto& item : corpus.items()) groups[normalize_question(item.question)].insert(item.id);
  return groups;
}

}  // namespace

ValidationReport validate_corpus(const Corpus& corpus) {
  ValidationReport report;
  std::map<std::string, int> id_counts;
  for (const auto& item : corpus.items()) {
    auto v = validate_item(item);
    report.violations.insert(report.violations.end(), v.begin(), v.end());
    if (++id_counts[item.id] == 2)
      report.violations.push_back({item.id, rule::kDuplicateId, "id appears more than once"});
  }
  for (auto& [_, ids] : group_by_normalized(corpus)) {
    if (ids.size() > 1) report.duplicate_groups.push_back(std::move(ids));
  }
  return report;
}

Corpus dedup_corpus(const Corpus& corpus) {
  std::set<std::string> keep;
  for (const auto& [_, ids] : group_by_normalized(corpus)) keep.insert(*ids.begin());
  std::vector<McqItem> items;
  std::set<std::string> taken;
  for (const auto& item : corpus.items()) {
    if (keep.contains(item.id) && taken.insert(item.id).second) items.push_back(item);
  }
  return Corpus(std::move(items));
}

std::string item_to_json_line(const McqItem& item) {
  ojson j;
  j["id"] = item.id;
  j["question"] = item.question;
  ojson opts = ojson::object();
  for (const auto& [label, text] : item.options) opts[std::string(1, label)] = text;
  j["options"] = opts;
  j["answer"] = std::string(1, item.answer);
  j["concept"] = item.kc;
  j["explanation"] = item.explanation;
  j["source"] = to_string(item.source);
  if (item.source_url) j["source_url"] = *item.source_url;
  return j.dump();
}

McqItem item_from_json_line(const std::string& line, size_t line_number) {
  const std::string where = "line " + std::to_string(line_number) + ": ";
  ojson j;
  try {
    j = ojson::parse(line);
  } catch (const nlohmann::json::exception& e) {
    fail(errc::kMalformed, where + "invalid JSON (" + e.what() + ")");
  }
  if (!j.is_object()) fail(errc::kMalformed, where + "record is not an object");
  auto str = [&](const char* key) -> std::string {
    if (!j.contains(key) || !j[key].is_string()) fail(errc::kMalformed, where + "missing string field '" + key + "'");
    return j[key].get<std::string>();
  };
  McqItem item;
  item.id = str("id");
  item.question = str("question");
  if (!j.contains("options") || !j["options"].is_object())
    fail(errc::kMalformed, where + "missing object field 'options'");
  for (const auto& [key, value] : j["options"].items()) {
    if (key.size() != 1 || !value.is_string())
      fail(errc::kMalformed, where + "option keys must be single letters with string text");
    item.options[key[0]] = value.get<std::string>();
  }
  const std::string answer = str("answer");
  if (answer.size() != 1) fail(rule::kAnswerConsistency, where + "answer must be a single letter");
  item.answer = answer[0];
  item.kc = str("concept");
  item.explanation = str("explanation");
  item.source = j.contains("source") ? source_from_string(str("source")) : Source::web;
  if (j.contains("source_url") && !j["source_url"].is_null()) item.source_url = str("source_url");
  return item;
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(errc::kNotFound, "cannot open corpus file " + path.string());
  std::vector<McqItem> items;
  std::set<std::string> ids;
  std::string line;
  size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    McqItem item = item_from_json_line(line, line_number);
    auto violations = validate_item(item);
    if (!violations.empty()) {
      const auto& v = violations.front();
      fail(v.rule, "line " + std::to_string(line_number) + " (" + item.id + "): " + v.message);
    }
    if (!ids.insert(item.id).second)
      fail(rule::kDuplicateId, "line " + std::to_string(line_number) + ": id " + item.id + " repeated");
    items.push_back(std::move(item));
  }
  if (items.empty()) fail(errc::kEmptyCorpus, "empty corpus: " + path.string());
  return Corpus(std::move(items));
}

std::string canonical_bytes(const Corpus& corpus) {
  std::string out;
  for (const auto& item : corpus.items()) {
    out += item_to_json_line(item);
    out += '\n';
  }
  return out;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(errc::kIo, "cannot write " + path.string());
  out << canonical_bytes(corpus);
}

std::string corpus_hash(const Corpus& corpus) { return sha256_hex(canonical_bytes(corpus)); }

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  for (unsigned int i = 0; i < length; ++i) {
    hex += kHex[digest[i] >> 4];
    hex += kHex[digest[i] & 0xF];
  }
  return hex;
}

}  // namespace tal
