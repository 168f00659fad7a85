// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cstdio>
#include <set>

#include "facts.hpp"

namespace tal::synth {

int uniform(Rng& rng, int lo, int hi) {
  std::uniform_int_distribution<int> dist(lo, hi);
  return dist(rng);
}

std::vector<std::string> expression_stems(const std::string& x) {
  return {
      "What is the result of " + x + " in Python?",
      "What does " + x + " evaluate to?",
      "Which value is produced by " + x + "?",
      "In Python, what is the value of " + x + "?",
      "What would print(" + x + ") display?",
      "Evaluate " + x + ". Which option is correct?",
      "Which option shows the value of " + x + "?",
      "A student types " + x + " into the Python shell. What is shown?",
  };
}

std::vector<std::string> context_stems(const std::string& c, const std::string& e) {
  return {
      "Given " + c + ", what does " + e + " evaluate to?",
      "After running " + c + ", what is the value of " + e + "?",
      "Consider the code " + c + ". What is " + e + "?",
      "With " + c + ", which value does " + e + " produce?",
      "Suppose " + c + ". What is the result of " + e + "?",
      "If " + c + " has been executed, what is " + e + "?",
      "Code: " + c + ". Which option gives the value of " + e + "?",
      "What is " + e + " once " + c + " has run?",
  };
}

std::vector<std::string> subject_stems(const std::string& s) {
  return {
      "What is " + s + "?",
      "Which statement best describes " + s + "?",
      "Pick the correct description of " + s + ".",
      "Which option correctly explains " + s + "?",
      "In Python, what is " + s + "?",
      "Choose the statement that accurately describes " + s + ".",
      "A student asks about " + s + ". Which answer is right?",
      "Which of the following is true about " + s + "?",
  };
}

std::vector<std::string> exception_stems(const std::string& x) {
  return {
      "Which exception does " + x + " raise?",
      "What error is raised when Python evaluates " + x + "?",
      "Running " + x + " fails with which exception?",
      "Which exception type results from " + x + "?",
      "What is raised by " + x + "?",
      "Evaluating " + x + " produces which error?",
      "Which built-in exception is triggered by " + x + "?",
      "What exception will " + x + " cause?",
  };
}

std::vector<std::string> module_stems(const std::string& n) {
  return {
      "Which module provides " + n + "?",
      n + " is imported from which standard module?",
      "To call " + n + ", which module must be imported?",
      "Which standard library module defines " + n + "?",
      "Where does " + n + " live in the standard library?",
      "Which import makes " + n + " available?",
      n + " belongs to which module?",
      "Select the module that contains " + n + ".",
  };
}

std::string py_str(const std::string& s) { return "'" + s + "'"; }

namespace {
std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(v[i]);
  }
  return out;
}
}  // namespace

std::string py_list(const std::vector<int>& v) { return "[" + join_ints(v) + "]"; }

std::string py_tuple(const std::vector<int>& v) {
  if (v.size() == 1) return "(" + std::to_string(v[0]) + ",)";
  return "(" + join_ints(v) + ")";
}

std::string py_set(std::vector<int> v) {
  if (v.empty()) return "set()";
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return "{" + join_ints(v) + "}";
}

std::string py_float(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  std::string s(buf);
  while (!s.empty() && s.back() == '0') s.pop_back();
  if (!s.empty() && s.back() == '.') s += '0';
  return s;
}

std::vector<std::string> clean_distractors(const std::string& answer, std::vector<std::string> candidates,
                                           const std::vector<std::string>& fallback) {
  std::vector<std::string> out;
  std::set<std::string> seen{answer};
  for (auto& c : candidates) {
    if (!c.empty() && seen.insert(c).second) out.push_back(std::move(c));
  }
  for (const auto& c : fallback) {
    if (out.size() >= 5) break;
    if (seen.insert(c).second) out.push_back(c);
  }
  return out;
}

std::vector<std::string> numeric_distractors(long long answer, std::vector<long long> extra) {
  std::vector<std::string> cands;
  for (auto e : extra) cands.push_back(std::to_string(e));
  for (long long d : {1LL, -1LL, 2LL, 10LL, -2LL}) cands.push_back(std::to_string(answer + d));
  return clean_distractors(std::to_string(answer), std::move(cands), {});
}

}  // namespace tal::synth
