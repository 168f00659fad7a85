// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

namespace tal::synth {

using Rng = std::mt19937_64;

/// One micro-fact: several paraphrased stems share the same answer.
struct Fact {
  std::string key;
  std::vector<std::string> stems;
  std::string answer;
  std::vector<std::string> distractors;
  std::string rationale;
};

using Family = std::function<Fact(Rng&)>;

struct KcBank {
  std::vector<Fact> fixed;
  std::vector<Family> families;
};

/// Bank for a known knowledge-component name, or the generic symbolic bank.
KcBank bank_for(const std::string& kc);

// Helpers shared by the banks.
int uniform(Rng& rng, int lo, int hi);
template <typename T>
const T& pick(Rng& rng, const std::vector<T>& values) {
  return values[static_cast<size_t>(uniform(rng, 0, static_cast<int>(values.size()) - 1))];
}
std::vector<std::string> expression_stems(const std::string& expr);
std::vector<std::string> context_stems(const std::string& context, const std::string& expr);
std::vector<std::string> subject_stems(const std::string& subject);
std::vector<std::string> exception_stems(const std::string& expr);
std::vector<std::string> module_stems(const std::string& name);
std::string py_str(const std::string& s);
std::string py_list(const std::vector<int>& v);
std::string py_tuple(const std::vector<int>& v);
std::string py_set(std::vector<int> v);
std::string py_float(double v);
/// Removes the answer and duplicates; pads with `fallback` values.
std::vector<std::string> clean_distractors(const std::string& answer, std::vector<std::string> candidates,
                                           const std::vector<std::string>& fallback);
std::vector<std::string> numeric_distractors(long long answer, std::vector<long long> extra);

}  // namespace tal::synth
