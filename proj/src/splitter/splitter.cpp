// SPDX-License-Identifier: Apache-2.0
#include "tal/splitter.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <random>
#include <sstream>
#include <tuple>

#include "tal/error.hpp"

namespace tal {
namespace {

using nlohmann::json;

bool is_subset(const IdSet& a, const IdSet& b) { return std::includes(b.begin(), b.end(), a.begin(), a.end()); }

bool disjoint(const IdSet& a, const IdSet& b) {
  for (const auto& id : a)
    if (b.contains(id)) return false;
  return true;
}

IdSet united(const IdSet& a, const IdSet& b) {
  IdSet out = a;
  out.insert(b.begin(), b.end());
  return out;
}

}  // namespace

void SplitConfig::validate() const {
  require(kc_fraction > 0.0 && kc_fraction <= 1.0, "kc_fraction must be in (0, 1]");
  for (double f : a_fractions) require(f >= 0.0, "a_fractions must be non-negative");
  require(std::abs(a_fractions[0] + a_fractions[1] + a_fractions[2] - 1.0) < 1e-9, "a_fractions must sum to 1");
  require(!ratios.empty(), "at least one unlearning ratio is required");
  for (int r : ratios) require(r > 0 && r <= 50, "unlearning ratios must lie in (0, 50]");
}

void SplitManifest::check_invariants() const {
  require(set_a.size() == a1.size() + a2.size() + a3.size(), "A is not the disjoint union of A1, A2, A3");
  require(united(united(a1, a2), a3) == set_a, "A1 + A2 + A3 differs from A");
  require(disjoint(set_a, set_b), "A and B overlap");
  require(retain == united(a1, set_b), "retain differs from A1 + B");
  require(forget == a2 && test == a3, "forget/test differ from A2/A3");
  require(disjoint(retain, forget) && disjoint(retain, test) && disjoint(forget, test), "retain/forget/test overlap");
  const IdSet* prev = nullptr;
  for (const auto& [ratio, ids] : forget_subsets) {
    require(is_subset(ids, a2), "forget subset " + std::to_string(ratio) + " leaves A2");
    if (prev) require(is_subset(*prev, ids) && prev->size() < ids.size(), "forget subsets are not strictly nested");
    prev = &ids;
  }
  if (forget_subsets.contains(50)) require(forget_subsets.at(50) == a2, "ratio 50 must equal A2");
}

std::vector<std::pair<std::string, int>> rank_kcs(const Corpus& corpus) {
  if (corpus.empty()) fail(errc::kEmptyCorpus, "cannot rank an empty corpus");
  std::vector<std::pair<std::string, int>> out;
  for (const auto& [kc, ids] : corpus.kc_index()) out.emplace_back(kc, static_cast<int>(ids.size()));
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  return out;
}

std::vector<int> largest_remainder(int n, std::span<const double> fractions) {
  std::vector<int> out(fractions.size());
  std::vector<double> rem(fractions.size());
  int used = 0;
  for (size_t i = 0; i < fractions.size(); ++i) {
    const double q = fractions[i] * n;
    out[i] = static_cast<int>(std::floor(q + 1e-9));
    rem[i] = q - out[i];
    used += out[i];
  }
  std::vector<size_t> order(fractions.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return rem[a] > rem[b] + 1e-9; });
  for (size_t k = 0; used < n; ++k, ++used) ++out[order[k % order.size()]];
  return out;
}

std::string split_rule_description() {
  return "KCs ranked by descending count (ties by label); A = first ceil(kc_fraction*K). Within each A-side KC, "
         "items in ascending id order are cut into A1/A2/A3 by largest-remainder apportionment of a_fractions "
         "(remainder ties to the earlier stratum; an empty stratum borrows one item from the largest). "
         "Forget subset for ratio r holds the first round(r/50*|A2|) A2 items ordered by "
         "((position within KC + 0.5) / KC size, KC, id), so every subset is a per-KC prefix.";
}

SplitManifest split_corpus(const Corpus& corpus, const SplitConfig& config, std::uint64_t seed) {
  config.validate();
  const auto report = validate_corpus(corpus);
  if (!report.violations.empty())
    fail(report.violations.front().rule, "corpus fails validation: " + report.violations.front().message);
  SplitManifest m;
  m.config = config;
  m.seed = seed;
  m.corpus_hash = corpus_hash(corpus);
  m.kc_ranking = rank_kcs(corpus);
  for (const auto& [kc, count] : m.kc_ranking)
    require(count >= 3, "knowledge component '" + kc + "' has fewer than 3 items");

  const size_t kc_count = m.kc_ranking.size();
  const size_t a_count = std::min(kc_count, static_cast<size_t>(std::ceil(config.kc_fraction * kc_count - 1e-9)));
  std::mt19937_64 rng(seed);

  struct Ranked {
    double key;
    std::string kc, id;
  };
  std::vector<Ranked> a2_order;
  for (size_t k = 0; k < kc_count; ++k) {
    const auto& kc = m.kc_ranking[k].first;
    auto ids = corpus.kc_index().at(kc);
    std::sort(ids.begin(), ids.end());
    if (k >= a_count) {
      m.set_b.insert(ids.begin(), ids.end());
      continue;
    }
    m.set_a.insert(ids.begin(), ids.end());
    auto sizes = largest_remainder(static_cast<int>(ids.size()), config.a_fractions);
    for (auto& s : sizes) {
      if (s > 0) continue;
      auto biggest = std::max_element(sizes.begin(), sizes.end());
      --*biggest;
      s = 1;
    }
    const auto first = ids.begin();
    const auto second = first + sizes[0];
    const auto third = second + sizes[1];
    m.a1.insert(first, second);
    m.a3.insert(third, ids.end());
    std::vector<std::string> part(second, third);
    m.a2.insert(part.begin(), part.end());
    if (config.shuffle_forget_order) std::shuffle(part.begin(), part.end(), rng);
    for (size_t i = 0; i < part.size(); ++i)
      a2_order.push_back({(static_cast<double>(i) + 0.5) / static_cast<double>(part.size()), kc, part[i]});
  }
  std::sort(a2_order.begin(), a2_order.end(), [](const Ranked& a, const Ranked& b) {
    return std::tie(a.key, a.kc, a.id) < std::tie(b.key, b.kc, b.id);
  });
  m.retain = united(m.a1, m.set_b);
  m.forget = m.a2;
  m.test = m.a3;
  const long n2 = static_cast<long>(m.a2.size());
  for (int r : config.ratios) {
    const long take = (2L * r * n2 + 50) / 100;  // round(r / 50 * |A2|), halves up
    IdSet subset;
    for (long i = 0; i < take; ++i) subset.insert(a2_order[static_cast<size_t>(i)].id);
    m.forget_subsets[r] = std::move(subset);
  }
  m.check_invariants();
  return m;
}

const IdSet& forget_subset(const SplitManifest& manifest, int ratio) {
  auto it = manifest.forget_subsets.find(ratio);
  if (it == manifest.forget_subsets.end()) fail(errc::kPrecondition, "unsupported unlearning ratio " + std::to_string(ratio));
  return it->second;
}

std::string manifest_to_json(const SplitManifest& m) {
  json ranking = json::array();
  for (const auto& [kc, n] : m.kc_ranking) ranking.push_back({{"kc", kc}, {"count", n}});
  json subsets = json::object();
  for (const auto& [r, ids] : m.forget_subsets) subsets[std::to_string(r)] = ids;
  json j = {{"format_version", 1},
            {"corpus_hash", m.corpus_hash},
            {"seed", m.seed},
            {"created_with",
             {{"kc_fraction", m.config.kc_fraction},
              {"a_fractions", m.config.a_fractions},
              {"ratios", m.config.ratios},
              {"shuffle_forget_order", m.config.shuffle_forget_order},
              {"rule", split_rule_description()}}},
            {"kc_ranking", ranking},
            {"counts",
             {{"A", m.set_a.size()}, {"B", m.set_b.size()}, {"A1", m.a1.size()}, {"A2", m.a2.size()},
              {"A3", m.a3.size()}, {"retain", m.retain.size()}, {"forget", m.forget.size()}, {"test", m.test.size()}}},
            {"set_A_ids", m.set_a},
            {"set_B_ids", m.set_b},
            {"A1_ids", m.a1},
            {"A2_ids", m.a2},
            {"A3_ids", m.a3},
            {"retain_ids", m.retain},
            {"forget_ids", m.forget},
            {"test_ids", m.test},
            {"forget_subsets", subsets}};
  return j.dump(1);
}

SplitManifest manifest_from_json(const std::string& text) {
  SplitManifest m;
  try {
    const json j = json::parse(text);
    m.corpus_hash = j.at("corpus_hash");
    m.seed = j.at("seed");
    const auto& cw = j.at("created_with");
    m.config.kc_fraction = cw.at("kc_fraction");
    m.config.a_fractions = cw.at("a_fractions");
    m.config.ratios = cw.at("ratios").get<std::vector<int>>();
    m.config.shuffle_forget_order = cw.at("shuffle_forget_order");
    for (const auto& e : j.at("kc_ranking")) m.kc_ranking.emplace_back(e.at("kc"), e.at("count"));
    m.set_a = j.at("set_A_ids");
    m.set_b = j.at("set_B_ids");
    m.a1 = j.at("A1_ids");
    m.a2 = j.at("A2_ids");
    m.a3 = j.at("A3_ids");
    m.retain = j.at("retain_ids");
    m.forget = j.at("forget_ids");
    m.test = j.at("test_ids");
    for (const auto& [r, ids] : j.at("forget_subsets").items()) m.forget_subsets[std::stoi(r)] = ids.get<IdSet>();
  } catch (const json::exception& e) {
    fail(errc::kMalformed, std::string("split manifest: ") + e.what());
  }
  m.check_invariants();
  return m;
}

void save_manifest(const SplitManifest& manifest, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) fail(errc::kIo, "cannot write " + path.string());
  out << manifest_to_json(manifest) << "\n";
}

SplitManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(errc::kNotFound, "missing manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return manifest_from_json(ss.str());
}

}  // namespace tal
