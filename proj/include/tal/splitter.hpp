// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tal/corpus.hpp"

namespace tal {

using IdSet = std::set<std::string>;

struct SplitConfig {
  double kc_fraction = 0.70;
  std::array<double, 3> a_fractions = {0.10, 0.50, 0.40};
  std::vector<int> ratios = {10, 20, 30, 40, 50};
  /// Shuffle A2 (seeded) before taking forget-subset prefixes; off means id order.
  bool shuffle_forget_order = false;

  void validate() const;
  bool operator==(const SplitConfig&) const = default;
};

struct SplitManifest {
  std::vector<std::pair<std::string, int>> kc_ranking;
  IdSet set_a, set_b, a1, a2, a3;
  IdSet retain, forget, test;
  std::map<int, IdSet> forget_subsets;
  std::string corpus_hash;
  SplitConfig config;
  std::uint64_t seed = 0;

  /// Throws precondition with the first broken invariant.
  void check_invariants() const;
  bool operator==(const SplitManifest&) const = default;
};

/// Descending count, ties by ascending label.
std::vector<std::pair<std::string, int>> rank_kcs(const Corpus& corpus);

/// Largest-remainder apportionment of n; ties go to the earlier stratum.
std::vector<int> largest_remainder(int n, std::span<const double> fractions);

SplitManifest split_corpus(const Corpus& corpus, const SplitConfig& config, std::uint64_t seed);

/// Stored nested subset for a ratio in {10,...,50}.
const IdSet& forget_subset(const SplitManifest& manifest, int ratio);

/// Text description of the allotment rules, recorded in the manifest.
std::string split_rule_description();

std::string manifest_to_json(const SplitManifest& manifest);
SplitManifest manifest_from_json(const std::string& text);
void save_manifest(const SplitManifest& manifest, const std::filesystem::path& path);
SplitManifest load_manifest(const std::filesystem::path& path);

}  // namespace tal
