// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "facts.hpp"
#include "tal/corpus.hpp"
#include "tal/error.hpp"

namespace tal {
namespace {

using synth::Fact;
using synth::Rng;

constexpr double kRareShare = 0.10;
constexpr int kMinRepeat = 2;
constexpr int kMaxRepeat = 5;
constexpr int kMaxDraws = 20000;

struct PlannedFact {
  Fact fact;
  int repeats = 1;
  bool rare = false;
};

struct KcPlan {
  std::string kc;
  std::vector<PlannedFact> facts;
};

std::vector<int> repeat_counts(Rng& rng, int total) {
  std::vector<int> counts;
  int sum = 0;
  while (sum < total) {
    int c = synth::uniform(rng, kMinRepeat, kMaxRepeat);
    c = std::min(c, total - sum);
    counts.push_back(c);
    sum += c;
  }
  // A trailing singleton is folded into the smallest earlier group.
  if (counts.size() > 1 && counts.back() < kMinRepeat) {
    const int extra = counts.back();
    counts.pop_back();
    *std::min_element(counts.begin(), counts.end()) += extra;
  }
  return counts;
}

bool admit(const Fact& f, size_t min_stems, std::set<std::string>& keys, std::set<std::string>& stems) {
  if (f.distractors.size() < 3 || f.stems.size() < min_stems || keys.count(f.key)) return false;
  std::set<std::string> local;
  for (const auto& s : f.stems) {
    const auto n = normalize_question(s);
    if (stems.count(n) || !local.insert(n).second) return false;
  }
  for (const auto& d : f.distractors)
    if (d == f.answer) return false;
  keys.insert(f.key);
  stems.insert(local.begin(), local.end());
  return true;
}

std::vector<KcPlan> plan_corpus(const std::map<std::string, int>& shape, std::uint64_t seed) {
  require(!shape.empty(), "corpus shape is empty");
  Rng rng(seed);
  std::set<std::string> keys, stems;
  std::vector<KcPlan> plans;
  for (const auto& [kc, n] : shape) {
    require(n > 0, "knowledge component '" + kc + "' needs a positive item count");
    require(!kc.empty(), "knowledge component name is empty");
    KcPlan plan{kc, {}};
    auto bank = synth::bank_for(kc);
    const int rare = n >= 4 ? static_cast<int>(std::lround(kRareShare * n)) : 0;
    const auto counts = repeat_counts(rng, n - rare);

    std::shuffle(bank.fixed.begin(), bank.fixed.end(), rng);
    size_t next_fixed = 0;
    int draws = 0;
    auto draw = [&](size_t min_stems) {
      while (next_fixed < bank.fixed.size()) {
        Fact f = bank.fixed[next_fixed++];
        if (admit(f, min_stems, keys, stems)) return f;
      }
      while (draws++ < kMaxDraws) {
        Fact f = synth::pick(rng, bank.families)(rng);
        if (admit(f, min_stems, keys, stems)) return f;
      }
      fail(errc::kPrecondition, "fact bank for '" + kc + "' cannot supply " + std::to_string(n) + " items");
    };
    for (int c : counts) plan.facts.push_back({draw(static_cast<size_t>(c)), c, false});
    for (int i = 0; i < rare; ++i) plan.facts.push_back({draw(1), 1, true});
    plans.push_back(std::move(plan));
  }
  return plans;
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Options and their order are a property of the fact, shared by every stem.
McqItem make_item(std::uint64_t seed, const Fact& fact, const std::string& stem, const std::string& kc) {
  Rng rng(seed ^ fnv1a(fact.key));
  McqItem item;
  item.question = stem;
  item.kc = kc;
  item.explanation = fact.rationale;
  item.source = Source::synthetic;
  auto wrong = fact.distractors;
  std::shuffle(wrong.begin(), wrong.end(), rng);
  wrong.resize(3);
  const int answer_slot = synth::uniform(rng, 0, 3);
  item.answer = kLabels[static_cast<size_t>(answer_slot)];
  for (int slot = 0, w = 0; slot < 4; ++slot)
    item.options[kLabels[static_cast<size_t>(slot)]] = slot == answer_slot ? fact.answer : wrong[static_cast<size_t>(w++)];
  return item;
}

std::string padded_id(const std::string& prefix, size_t n, size_t width) {
  std::string digits = std::to_string(n);
  if (digits.size() < width) digits.insert(0, width - digits.size(), '0');
  return prefix + digits;
}

}  // namespace

Corpus generate_synthetic_corpus(const std::map<std::string, int>& shape, std::uint64_t seed) {
  const auto plans = plan_corpus(shape, seed);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  size_t total = 0;
  for (const auto& [_, n] : shape) total += static_cast<size_t>(n);
  const size_t width = std::max<size_t>(4, std::to_string(total).size());

  std::vector<McqItem> items;
  for (const auto& plan : plans) {
    std::vector<McqItem> kc_items;
    for (const auto& pf : plan.facts) {
      auto stems = pf.fact.stems;
      std::shuffle(stems.begin(), stems.end(), rng);
      for (int r = 0; r < pf.repeats; ++r) kc_items.push_back(make_item(seed, pf.fact, stems[static_cast<size_t>(r)], plan.kc));
    }
    std::shuffle(kc_items.begin(), kc_items.end(), rng);
    for (auto& item : kc_items) {
      item.id = padded_id("q", items.size() + 1, width);
      items.push_back(std::move(item));
    }
  }
  return Corpus(std::move(items));
}

Corpus generate_pretraining_corpus(const std::map<std::string, int>& shape, std::uint64_t seed,
                                   int variants_per_fact) {
  require(variants_per_fact > 0, "variants_per_fact must be positive");
  const auto plans = plan_corpus(shape, seed);
  Rng rng(seed ^ 0xc2b2ae3d27d4eb4fULL);
  std::vector<McqItem> items;
  for (const auto& plan : plans) {
    for (const auto& pf : plan.facts) {
      if (pf.rare) continue;
      auto stems = pf.fact.stems;
      std::shuffle(stems.begin(), stems.end(), rng);
      for (int v = 0; v < variants_per_fact; ++v) {
        auto item = make_item(seed, pf.fact, stems[static_cast<size_t>(v) % stems.size()], plan.kc);
        item.id = padded_id("pre-", items.size() + 1, 5);
        items.push_back(std::move(item));
      }
    }
  }
  require(!items.empty(), "shape yields no recurring facts");
  return Corpus(std::move(items));
}

std::map<std::string, int> reference_shape() {
  return {
      {"Functions", 189},        {"Operators", 167},        {"Data Types", 149},
      {"Lists", 139},            {"Strings", 129},          {"Exception Handling", 119},
      {"Dictionaries", 117},     {"Loops", 109},            {"Conditionals", 105},
      {"Classes and Objects", 99}, {"Tuples", 95},          {"Sets", 89},
      {"File Handling", 85},     {"Modules", 79},           {"Variables", 77},
      {"Built-in Functions", 76}, {"Recursion", 58},        {"Lambda Functions", 50},
      {"List Comprehension", 44}, {"Generators", 38},       {"Decorators", 33},
      {"Regular Expressions", 28},
  };
}

}  // namespace tal
