// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "facts.hpp"

namespace tal::synth {
namespace {

using Strings = std::vector<std::string>;

const Strings kWords = {"python", "spam", "eggs", "code", "data", "loop", "apple", "banana", "cherry",
                        "river", "stone", "cloud", "tiger", "lemon", "paper", "piano", "rocket", "garden",
                        "silver", "window", "pencil", "orange", "planet", "summer", "winter", "bridge",
                        "castle", "dragon", "forest", "marble", "button", "candle", "meadow", "harbor"};

const Strings kExceptions = {"ValueError", "TypeError", "KeyError", "IndexError", "AttributeError",
                             "NameError", "ZeroDivisionError", "FileNotFoundError", "StopIteration",
                             "ModuleNotFoundError", "RuntimeError", "SyntaxError"};

const Strings kTypes = {"int", "float", "str", "list", "tuple", "dict", "set", "bool", "NoneType", "complex", "bytes"};

Strings shuffled_sample(Rng& rng, const Strings& pool, size_t n, const std::string& exclude) {
  Strings c;
  for (const auto& p : pool)
    if (p != exclude) c.push_back(p);
  std::shuffle(c.begin(), c.end(), rng);
  if (c.size() > n) c.resize(n);
  return c;
}

std::vector<int> distinct_ints(Rng& rng, int n, int lo, int hi) {
  std::vector<int> out;
  while (static_cast<int>(out.size()) < n) {
    int v = uniform(rng, lo, hi);
    if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
  }
  return out;
}

Fact semantic(std::string key, std::string subject, std::string answer, Strings wrong, std::string rationale) {
  Fact f;
  f.key = std::move(key);
  f.stems = subject_stems(subject);
  f.answer = std::move(answer);
  f.distractors = std::move(wrong);
  f.rationale = std::move(rationale);
  return f;
}

Fact expr_fact(const std::string& key_prefix, const std::string& expr, const std::string& answer,
               Strings distractors, std::string rationale) {
  return Fact{key_prefix + ":" + expr, expression_stems(expr), answer, std::move(distractors), std::move(rationale)};
}

Fact ctx_fact(const std::string& key_prefix, const std::string& ctx, const std::string& expr,
              const std::string& answer, Strings distractors, std::string rationale) {
  return Fact{key_prefix + ":" + ctx + "|" + expr, context_stems(ctx, expr), answer, std::move(distractors),
              std::move(rationale)};
}

// ---------------------------------------------------------------- Operators
Fact operator_fact(Rng& rng) {
  struct Op {
    const char* sym;
    const char* name;
    const char* why;
  };
  static const std::vector<Op> ops = {
      {"+", "addition", "+ adds the two operands"},
      {"-", "subtraction", "- subtracts the right operand from the left"},
      {"*", "multiplication", "* multiplies the operands"},
      {"//", "floor division", "// divides and rounds the quotient down to an integer"},
      {"%", "modulo", "% returns the remainder of the division"},
      {"**", "exponent", "** raises the left operand to the power of the right"},
      {"/", "true division", "/ always performs true division and returns a float"},
  };
  const Op& op = pick(rng, ops);
  const std::string sym = op.sym;
  int a = uniform(rng, 2, 30);
  int b = uniform(rng, 2, 9);
  if (sym == "**") {
    a = uniform(rng, 2, 7);
    b = uniform(rng, 2, 3);
  }
  if (sym == "/") b = pick(rng, std::vector<int>{2, 4, 5, 8});
  auto eval = [&](const std::string& s) -> std::string {
    if (s == "+") return std::to_string(a + b);
    if (s == "-") return std::to_string(a - b);
    if (s == "*") return std::to_string(a * b);
    if (s == "//") return std::to_string(a / b);
    if (s == "%") return std::to_string(a % b);
    if (s == "**") return std::to_string(static_cast<long long>(std::llround(std::pow(a, b))));
    return py_float(static_cast<double>(a) / b);
  };
  const std::string answer = eval(sym);
  Strings cands;
  for (const auto& other : ops)
    if (other.sym != sym) cands.push_back(eval(other.sym));
  if (sym == "/") cands.push_back(std::to_string(a / b));
  std::shuffle(cands.begin(), cands.end(), rng);
  const std::string expr = "the " + std::string(op.name) + " expression " + std::to_string(a) + " " + sym + " " +
                           std::to_string(b);
  return expr_fact("op", expr, answer, clean_distractors(answer, cands, {"0", "1", "None"}),
                   std::to_string(a) + " " + sym + " " + std::to_string(b) + " evaluates to " + answer +
                       " because " + op.why + ".");
}

Fact comparison_fact(Rng& rng) {
  int a = uniform(rng, 1, 20), b = uniform(rng, 1, 20), c = uniform(rng, 1, 20);
  const bool value = a < b && b < c;
  const std::string expr = "the chained comparison " + std::to_string(a) + " < " + std::to_string(b) + " < " +
                           std::to_string(c);
  const std::string answer = value ? "True" : "False";
  return expr_fact("cmp", expr, answer, {value ? "False" : "True", "None", "TypeError"},
                   "a chained comparison " + std::to_string(a) + " < " + std::to_string(b) + " < " +
                       std::to_string(c) + " is " + answer + " because it means " + std::to_string(a) + " < " +
                       std::to_string(b) + " and " + std::to_string(b) + " < " + std::to_string(c) + ".");
}

KcBank operators_bank() { return {{}, {operator_fact, operator_fact, operator_fact, comparison_fact}}; }

// ---------------------------------------------------------------- Data Types
Fact type_fact(Rng& rng) {
  const std::string type = pick(rng, Strings{"int", "float", "str", "list", "tuple", "dict", "set", "bool", "complex", "bytes"});
  std::string lit;
  if (type == "int") lit = std::to_string(uniform(rng, 10, 999));
  if (type == "float") lit = std::to_string(uniform(rng, 1, 99)) + "." + std::to_string(uniform(rng, 1, 9)) + std::to_string(uniform(rng, 1, 9));
  if (type == "str") lit = py_str(pick(rng, kWords) + std::to_string(uniform(rng, 1, 99)));
  if (type == "list") lit = py_list(distinct_ints(rng, uniform(rng, 2, 4), 1, 60));
  if (type == "tuple") lit = py_tuple(distinct_ints(rng, uniform(rng, 2, 4), 1, 60));
  if (type == "set") lit = py_set(distinct_ints(rng, uniform(rng, 2, 4), 1, 60));
  if (type == "dict") lit = "{" + py_str(pick(rng, kWords)) + ": " + std::to_string(uniform(rng, 1, 99)) + "}";
  if (type == "bool") lit = "not " + std::to_string(uniform(rng, 0, 99));
  if (type == "complex") lit = std::to_string(uniform(rng, 1, 60)) + "j";
  if (type == "bytes") lit = "b" + py_str(pick(rng, kWords));
  const std::string expr = "type(" + lit + ").__name__";
  std::map<std::string, std::string> why = {
      {"int", "a number without a decimal point is an int"},
      {"float", "a number with a decimal point is a float"},
      {"str", "text in quotes is a str"},
      {"list", "square brackets create a list"},
      {"tuple", "comma separated values in parentheses create a tuple"},
      {"set", "braces with bare values create a set"},
      {"dict", "braces with key value pairs create a dict"},
      {"bool", "the not operator always returns a bool"},
      {"complex", "a number with a j suffix is complex"},
      {"bytes", "a b prefix on a string literal creates bytes"},
  };
  return expr_fact("type", expr, py_str(type), [&] {
    Strings d;
    for (const auto& t : shuffled_sample(rng, kTypes, 5, type)) d.push_back(py_str(t));
    return d;
  }(), "the literal " + lit + " has type " + type + " because " + why[type] + ".");
}

Fact conversion_fact(Rng& rng) {
  const int n = uniform(rng, 2, 99);
  const int kind = uniform(rng, 0, 3);
  std::string expr, answer, why;
  Strings cands;
  if (kind == 0) {
    expr = "int(" + py_str(std::to_string(n)) + ") + " + std::to_string(n % 7 + 1);
    answer = std::to_string(n + n % 7 + 1);
    cands = {py_str(std::to_string(n) + std::to_string(n % 7 + 1)), std::to_string(n), "TypeError"};
    why = "int converts the string to a number before the addition";
  } else if (kind == 1) {
    expr = "str(" + std::to_string(n) + ") + " + py_str(std::to_string(n % 7 + 1));
    answer = py_str(std::to_string(n) + std::to_string(n % 7 + 1));
    cands = {std::to_string(n + n % 7 + 1), py_str(std::to_string(n)), "TypeError"};
    why = "str turns the number into text so + concatenates";
  } else if (kind == 2) {
    expr = "float(" + std::to_string(n) + ")";
    answer = std::to_string(n) + ".0";
    cands = {std::to_string(n), py_str(std::to_string(n)), std::to_string(n) + ".00"};
    why = "float converts the integer into a floating point value";
  } else {
    const double v = n + 0.5 + uniform(rng, 0, 3) * 0.1;
    expr = "int(" + py_float(v) + ")";
    answer = std::to_string(n);
    cands = {std::to_string(n + 1), py_float(v), "ValueError"};
    why = "int truncates the float toward zero";
  }
  return expr_fact("conv", expr, answer, clean_distractors(answer, cands, {"None", "0"}),
                   expr + " gives " + answer + " because " + why + ".");
}

KcBank data_types_bank() { return {{}, {type_fact, type_fact, conversion_fact}}; }

// ---------------------------------------------------------------- Strings
Fact string_fact(Rng& rng) {
  const std::string w = pick(rng, kWords);
  std::string up = w, cap = w;
  std::transform(up.begin(), up.end(), up.begin(), ::toupper);
  cap[0] = static_cast<char>(::toupper(cap[0]));
  const int kind = uniform(rng, 0, 7);
  const std::string lit = py_str(w);
  const int n = static_cast<int>(w.size());
  std::string expr, answer, why;
  Strings cands;
  switch (kind) {
    case 0:
      expr = lit + ".upper()";
      answer = py_str(up);
      cands = {py_str(cap), lit, py_str(up.substr(0, 1) + w.substr(1))};
      why = "upper converts every character to uppercase";
      break;
    case 1:
      expr = lit + ".capitalize()";
      answer = py_str(cap);
      cands = {py_str(up), lit, py_str(w.substr(0, n - 1) + static_cast<char>(::toupper(w.back())))};
      why = "capitalize uppercases only the first character";
      break;
    case 2:
      expr = "len(" + lit + ")";
      answer = std::to_string(n);
      cands = {std::to_string(n - 1), std::to_string(n + 1), std::to_string(n + 2)};
      why = "len counts the " + std::to_string(n) + " characters";
      break;
    case 3:
      expr = lit + "[0]";
      answer = py_str(w.substr(0, 1));
      cands = {py_str(w.substr(1, 1)), py_str(w.substr(n - 1, 1)), py_str(w.substr(2, 1))};
      why = "index 0 selects the first character";
      break;
    case 4:
      expr = lit + "[-1]";
      answer = py_str(w.substr(n - 1, 1));
      cands = {py_str(w.substr(0, 1)), py_str(w.substr(n - 2, 1)), py_str(w.substr(1, 1))};
      why = "index -1 selects the last character";
      break;
    case 5:
      expr = lit + "[1:3]";
      answer = py_str(w.substr(1, 2));
      cands = {py_str(w.substr(0, 2)), py_str(w.substr(1, 3)), py_str(w.substr(0, 3))};
      why = "the slice 1:3 takes characters at positions 1 and 2";
      break;
    case 6:
      expr = lit + " * 2";
      answer = py_str(w + w);
      cands = {lit, py_str(w + " " + w), "TypeError"};
      why = "multiplying a string by 2 repeats it";
      break;
    default: {
      const char c = w[static_cast<size_t>(uniform(rng, 0, n - 1))];
      expr = lit + ".find(" + py_str(std::string(1, c)) + ")";
      answer = std::to_string(w.find(c));
      cands = {std::to_string(w.find(c) + 1), std::to_string(w.rfind(c) + 2), "-1"};
      why = "find returns the index of the first occurrence";
    }
  }
  return expr_fact("str", expr, answer, clean_distractors(answer, cands, {"None", "''", "-1", "0"}),
                   expr + " returns " + answer + " because " + why + ".");
}

KcBank strings_bank() { return {{}, {string_fact}}; }

// ---------------------------------------------------------------- Lists
Fact list_fact(Rng& rng) {
  auto v = distinct_ints(rng, uniform(rng, 3, 5), 1, 40);
  const std::string lit = py_list(v);
  const int kind = uniform(rng, 0, 7);
  auto sorted = v;
  std::sort(sorted.begin(), sorted.end());
  auto rev = v;
  std::reverse(rev.begin(), rev.end());
  const int sum = std::accumulate(v.begin(), v.end(), 0);
  std::string expr, answer, why;
  Strings cands;
  switch (kind) {
    case 0:
      expr = "len(" + lit + ")";
      answer = std::to_string(v.size());
      cands = numeric_distractors(static_cast<long long>(v.size()), {sum});
      why = "len counts the elements";
      break;
    case 1:
      expr = "sum(" + lit + ")";
      answer = std::to_string(sum);
      cands = numeric_distractors(sum, {sorted.back(), static_cast<long long>(v.size())});
      why = "sum adds all the elements";
      break;
    case 2:
      expr = "max(" + lit + ")";
      answer = std::to_string(sorted.back());
      cands = {std::to_string(sorted.front()), std::to_string(v.back()), std::to_string(sorted[1])};
      why = "max returns the largest element";
      break;
    case 3:
      expr = "min(" + lit + ")";
      answer = std::to_string(sorted.front());
      cands = {std::to_string(sorted.back()), std::to_string(v.front()), std::to_string(sorted[1])};
      why = "min returns the smallest element";
      break;
    case 4:
      expr = lit + "[-1]";
      answer = std::to_string(v.back());
      cands = {std::to_string(v.front()), std::to_string(v[v.size() - 2]), "IndexError"};
      why = "index -1 refers to the last element";
      break;
    case 5:
      expr = "sorted(" + lit + ")";
      answer = py_list(sorted);
      cands = {lit, py_list(rev), py_list({sorted.rbegin(), sorted.rend()})};
      why = "sorted returns a new list in ascending order";
      break;
    case 6:
      expr = lit + "[::-1]";
      answer = py_list(rev);
      cands = {lit, py_list(sorted), py_list({v.begin() + 1, v.end()})};
      why = "a step of -1 reverses the list";
      break;
    default: {
      const size_t i = static_cast<size_t>(uniform(rng, 0, static_cast<int>(v.size()) - 1));
      expr = lit + ".index(" + std::to_string(v[i]) + ")";
      answer = std::to_string(i);
      cands = numeric_distractors(static_cast<long long>(i), {static_cast<long long>(i) + 1, v[i]});
      why = "index returns the position of the first match";
    }
  }
  return expr_fact("list", expr, answer, clean_distractors(answer, cands, {"None", "[]", "0"}),
                   expr + " gives " + answer + " because " + why + ".");
}

Fact list_mutation_fact(Rng& rng) {
  auto v = distinct_ints(rng, 3, 1, 30);
  const int x = uniform(rng, 31, 60);
  const std::string ctx = "nums = " + py_list(v) + "; nums.append(" + std::to_string(x) + ")";
  const bool want_len = uniform(rng, 0, 1) == 0;
  const std::string expr = want_len ? "len(nums)" : "nums[-1]";
  const std::string answer = want_len ? "4" : std::to_string(x);
  Strings cands = want_len ? Strings{"3", "5", "1"} : Strings{std::to_string(v.back()), std::to_string(v.front()), "None"};
  return ctx_fact("listmut", ctx, expr, answer, clean_distractors(answer, cands, {"0"}),
                  "append adds " + std::to_string(x) + " to the end of nums so " + expr + " is " + answer + ".");
}

KcBank lists_bank() { return {{}, {list_fact, list_fact, list_mutation_fact}}; }

// ---------------------------------------------------------------- Dictionaries
Fact dict_fact(Rng& rng) {
  Strings keys;
  while (keys.size() < 3) {
    const auto& w = pick(rng, kWords);
    if (std::find(keys.begin(), keys.end(), w) == keys.end()) keys.push_back(w);
  }
  auto vals = distinct_ints(rng, 3, 1, 50);
  std::string lit = "{";
  for (size_t i = 0; i < 3; ++i) lit += (i ? ", " : "") + py_str(keys[i]) + ": " + std::to_string(vals[i]);
  lit += "}";
  const std::string ctx = "d = " + lit;
  const int kind = uniform(rng, 0, 4);
  std::string expr, answer, why;
  Strings cands;
  const size_t i = static_cast<size_t>(uniform(rng, 0, 2));
  std::string missing = pick(rng, kWords);
  while (std::find(keys.begin(), keys.end(), missing) != keys.end()) missing = pick(rng, kWords);
  switch (kind) {
    case 0:
      expr = "d[" + py_str(keys[i]) + "]";
      answer = std::to_string(vals[i]);
      cands = {std::to_string(vals[(i + 1) % 3]), std::to_string(vals[(i + 2) % 3]), "KeyError"};
      why = "indexing a dict by a key returns its value";
      break;
    case 1: {
      const int def = uniform(rng, 51, 99);
      expr = "d.get(" + py_str(missing) + ", " + std::to_string(def) + ")";
      answer = std::to_string(def);
      cands = {"None", "KeyError", std::to_string(vals[0])};
      why = "get returns the default when the key is absent";
      break;
    }
    case 2:
      expr = "sum(d.values())";
      answer = std::to_string(vals[0] + vals[1] + vals[2]);
      cands = numeric_distractors(vals[0] + vals[1] + vals[2], {3, vals[0]});
      why = "values yields every stored value and sum adds them";
      break;
    case 3:
      expr = "list(d)[" + std::to_string(i) + "]";
      answer = py_str(keys[i]);
      cands = {std::to_string(vals[i]), py_str(keys[(i + 1) % 3]), py_str(keys[(i + 2) % 3])};
      why = "iterating a dict yields its keys in insertion order";
      break;
    default:
      expr = py_str(missing) + " in d";
      answer = "False";
      cands = {"True", "None", "KeyError"};
      why = "the in operator checks keys and that key is absent";
  }
  return ctx_fact("dict", ctx, expr, answer, clean_distractors(answer, cands, {"0"}),
                  expr + " is " + answer + " because " + why + ".");
}

KcBank dictionaries_bank() {
  return {{semantic("dict-keys", "what a dictionary key must be", "a hashable value such as a string, number or tuple",
                    {"any value including lists", "only strings", "only integers starting at zero"},
                    "dictionary keys must be hashable such as strings, numbers or tuples, so lists cannot be keys."),
           semantic("dict-order", "the iteration order of a dict in modern Python", "the insertion order of the keys",
                    {"sorted order of the keys", "random order on every loop", "reverse insertion order"},
                    "since Python 3.7 dicts preserve insertion order when iterated.")},
          {dict_fact}};
}

// ---------------------------------------------------------------- Loops
Fact loop_fact(Rng& rng) {
  const int a = uniform(rng, 0, 6), b = a + uniform(rng, 3, 8);
  const int kind = uniform(rng, 0, 2);
  if (kind == 0) {
    int sum = 0;
    for (int i = a; i < b; ++i) sum += i;
    const std::string ctx = "total = 0; for i in range(" + std::to_string(a) + ", " + std::to_string(b) + "): total += i";
    return ctx_fact("loopsum", ctx, "total", std::to_string(sum), numeric_distractors(sum, {sum + b, sum - a, b - a}),
                    "the loop adds " + std::to_string(a) + " up to " + std::to_string(b - 1) +
                        " because range stops before " + std::to_string(b) + ", giving " + std::to_string(sum) + ".");
  }
  if (kind == 1) {
    const int step = uniform(rng, 2, 4);
    int count = 0;
    for (int i = a; i < b + 6; i += step) ++count;
    const std::string ctx = "count = 0; for i in range(" + std::to_string(a) + ", " + std::to_string(b + 6) + ", " +
                            std::to_string(step) + "): count += 1";
    return ctx_fact("loopcount", ctx, "count", std::to_string(count), numeric_distractors(count, {count + 1, b + 6 - a}),
                    "range with step " + std::to_string(step) + " produces " + std::to_string(count) +
                        " values before reaching " + std::to_string(b + 6) + ".");
  }
  const int n = uniform(rng, 10, 60), s = uniform(rng, 3, 9);
  int steps = 0;
  for (int m = n; m > 0; m -= s) ++steps;
  const std::string ctx = "n = " + std::to_string(n) + "; steps = 0; while n > 0: n -= " + std::to_string(s) + "; steps += 1";
  return ctx_fact("while", ctx, "steps", std::to_string(steps), numeric_distractors(steps, {n / s, steps + 2}),
                  "the while loop subtracts " + std::to_string(s) + " from " + std::to_string(n) + " and runs " +
                      std::to_string(steps) + " times until n is no longer positive.");
}

KcBank loops_bank() {
  return {{semantic("loop-break", "the effect of break inside a for loop", "it exits the innermost loop immediately",
                    {"it skips to the next iteration", "it restarts the loop from the beginning", "it exits the whole program"},
                    "break exits the innermost loop immediately while continue skips to the next iteration."),
           semantic("loop-continue", "the effect of continue inside a loop", "it skips the rest of the body and starts the next iteration",
                    {"it exits the loop", "it repeats the current iteration", "it pauses the loop until input arrives"},
                    "continue skips the remaining statements and starts the next iteration."),
           semantic("loop-else", "when the else block of a for loop runs", "when the loop finishes without hitting break",
                    {"only when the loop body raises an error", "before the first iteration", "on every iteration"},
                    "a loop else block runs when the loop finishes normally without break.")},
          {loop_fact}};
}

// ---------------------------------------------------------------- Conditionals
Fact conditional_fact(Rng& rng) {
  const int lo = uniform(rng, 5, 20), hi = lo + uniform(rng, 5, 20), x = uniform(rng, 0, hi + 10);
  const std::string ctx = "x = " + std::to_string(x) + "; label = 'high' if x > " + std::to_string(hi) +
                          " else 'mid' if x > " + std::to_string(lo) + " else 'low'";
  const std::string answer = x > hi ? "'high'" : (x > lo ? "'mid'" : "'low'");
  const std::string why = x > hi ? std::to_string(x) + " is greater than " + std::to_string(hi)
                                 : (x > lo ? std::to_string(x) + " is greater than " + std::to_string(lo) + " but not " + std::to_string(hi)
                                           : std::to_string(x) + " is not greater than " + std::to_string(lo));
  return ctx_fact("cond", ctx, "label", answer, clean_distractors(answer, {"'high'", "'mid'", "'low'", "None"}, {}),
                  "label is " + answer + " because " + why + ".");
}

Fact boolean_fact(Rng& rng) {
  const int a = uniform(rng, 0, 9), b = uniform(rng, 0, 9), c = uniform(rng, 0, 9);
  const bool value = (a > b) or (b == c);
  const std::string expr = "the condition " + std::to_string(a) + " > " + std::to_string(b) + " or " +
                           std::to_string(b) + " == " + std::to_string(c);
  const std::string answer = value ? "True" : "False";
  return expr_fact("bool", expr, answer, {value ? "False" : "True", "None", "1"},
                   "or is " + answer + " here since " + std::to_string(a) + " > " + std::to_string(b) + " is " +
                       ((a > b) ? "True" : "False") + " and " + std::to_string(b) + " == " + std::to_string(c) + " is " +
                       ((b == c) ? "True" : "False") + ".");
}

KcBank conditionals_bank() {
  return {{semantic("cond-elif", "how Python chooses among if, elif and else branches", "it runs only the first branch whose condition is true",
                    {"it runs every branch whose condition is true", "it runs the last true branch", "it runs else and then the true branch"},
                    "Python checks conditions in order and runs only the first true branch."),
           semantic("cond-truthy", "the truth value of an empty list in an if statement", "it is treated as False",
                    {"it is treated as True", "it raises a TypeError", "it is treated as None"},
                    "empty containers are falsy so an empty list is treated as False.")},
          {conditional_fact, conditional_fact, boolean_fact}};
}

// ---------------------------------------------------------------- Exception Handling
Fact raising_fact(Rng& rng) {
  const int kind = uniform(rng, 0, 11);
  const std::string w = pick(rng, kWords);
  const int n = uniform(rng, 1, 99);
  std::string expr, answer, why;
  switch (kind) {
    case 0: expr = "int(" + py_str(w) + ")"; answer = "ValueError"; why = "the string is not a valid integer literal"; break;
    case 1: expr = std::to_string(n) + " / 0"; answer = "ZeroDivisionError"; why = "dividing by zero is undefined"; break;
    case 2: expr = std::to_string(n) + " % 0"; answer = "ZeroDivisionError"; why = "modulo by zero is undefined"; break;
    case 3: {
      auto v = distinct_ints(rng, 3, 1, 9);
      expr = py_list(v) + "[" + std::to_string(uniform(rng, 3, 9)) + "]";
      answer = "IndexError";
      why = "the index is past the end of the list";
      break;
    }
    case 4: expr = "{" + py_str(w) + ": " + std::to_string(n) + "}[" + py_str(w + "s") + "]"; answer = "KeyError"; why = "the key is not in the dict"; break;
    case 5: expr = "None." + w + "()"; answer = "AttributeError"; why = "None has no such attribute"; break;
    case 6: expr = py_str(w) + " + " + std::to_string(n); answer = "TypeError"; why = "a str cannot be added to an int"; break;
    case 7: expr = "len(" + std::to_string(n) + ")"; answer = "TypeError"; why = "an int has no length"; break;
    case 8: expr = "undefined_" + w + " + " + std::to_string(n); answer = "NameError"; why = "the name was never defined"; break;
    case 9: expr = "open(" + py_str(w + "_missing.txt") + ")"; answer = "FileNotFoundError"; why = "the file does not exist"; break;
    case 10: expr = "float(" + py_str(w) + ")"; answer = "ValueError"; why = "the text cannot be parsed as a float"; break;
    default: expr = "import no_such_" + w; answer = "ModuleNotFoundError"; why = "no module with that name is installed"; break;
  }
  Strings wrong = shuffled_sample(rng, kExceptions, 5, answer);
  return Fact{"raise:" + expr, exception_stems(expr), answer, wrong, expr + " raises " + answer + " because " + why + "."};
}

KcBank exceptions_bank() {
  Strings chain_wrong = {
      "To completely hide original_error from the traceback so only NewError is visible, improving security",
      "To make the interpreter retry the failing operation using NewError as a recovery mechanism",
      "To turn original_error into a warning so logging treats the failure as non-fatal"};
  Fact chaining;
  chaining.key = "exc-chaining";
  chaining.stems = {
      "What is the main purpose of writing raise NewError('msg') from original_error in a Python except block?",
      "Why would code use raise NewError('msg') from original_error inside an except block?",
      "What does the from clause in raise NewError('msg') from original_error achieve?",
      "Inside an except block, what is the effect of raise NewError('msg') from original_error?",
      "What is exception chaining with raise NewError('msg') from original_error used for?",
      "Which statement explains raise NewError('msg') from original_error in an except handler?",
      "A handler ends with raise NewError('msg') from original_error. What is the purpose of the from part?",
      "Pick the correct purpose of the statement raise NewError('msg') from original_error in an except block."};
  chaining.answer = "To explicitly link NewError to original_error so the traceback shows both the higher-level context and the underlying cause";
  chaining.distractors = chain_wrong;
  chaining.rationale =
      "Using raise ... from ... preserves and links the original error, showing both the higher-level error and the underlying cause, which aids debugging.";
  return {{chaining,
           semantic("exc-finally", "the behaviour of a finally clause", "it always runs whether or not an exception occurred",
                    {"it runs only when an exception occurred", "it runs only when no exception occurred", "it replaces the except clause"},
                    "a finally clause always runs, whether the try block succeeded or raised, so it is used for cleanup."),
           semantic("exc-else", "when the else clause of a try statement runs", "only when the try block raised no exception",
                    {"only when an exception was caught", "always before finally", "only when the program exits"},
                    "the else clause of a try runs only if the try block raised no exception."),
           semantic("exc-bare-raise", "the effect of a bare raise inside an except block", "it re-raises the exception currently being handled",
                    {"it raises a new RuntimeError", "it silences the current exception", "it restarts the try block"},
                    "a bare raise re-raises the exception that is currently being handled."),
           semantic("exc-custom", "the recommended base class for a custom exception", "Exception",
                    {"BaseException", "object", "Error"},
                    "custom exceptions should inherit from Exception so generic handlers can catch them."),
           semantic("exc-assert", "what a failing assert statement raises", "AssertionError",
                    {"ValueError", "RuntimeError", "SystemExit"},
                    "a failing assert raises AssertionError with the optional message."),
           semantic("exc-tuple", "the meaning of except (KeyError, IndexError):", "it catches either a KeyError or an IndexError",
                    {"it catches only errors raised by both at once", "it is a syntax error", "it catches every exception"},
                    "an except clause with a tuple catches any of the listed exception types.")},
          {raising_fact}};
}

// ---------------------------------------------------------------- Classes and Objects
Fact class_fact(Rng& rng) {
  const int kind = uniform(rng, 0, 2);
  const int a = uniform(rng, 2, 12), k = uniform(rng, 2, 9);
  if (kind == 0) {
    const std::string ctx = "class Box: def __init__(self, v): self.v = v * " + std::to_string(k);
    const std::string expr = "Box(" + std::to_string(a) + ").v";
    return ctx_fact("cls-init", ctx, expr, std::to_string(a * k), numeric_distractors(a * k, {a, k, a + k}),
                    "__init__ stores v * " + std::to_string(k) + " on the instance, so " + expr + " is " +
                        std::to_string(a * k) + ".");
  }
  if (kind == 1) {
    const int w = uniform(rng, 13, 40);
    const std::string ctx = "class Counter: n = " + std::to_string(a) + "; c = Counter(); c.n = " + std::to_string(w);
    return ctx_fact("cls-attr", ctx, "Counter.n", std::to_string(a), numeric_distractors(a, {w, a + w}),
                    "assigning c.n creates an instance attribute, so the class attribute Counter.n stays " +
                        std::to_string(a) + ".");
  }
  const std::string ctx = "class Shape: def area(self): return " + std::to_string(a) + "; class Square(Shape): def area(self): return " + std::to_string(a + k);
  return ctx_fact("cls-override", ctx, "Square().area()", std::to_string(a + k), numeric_distractors(a + k, {a, k}),
                  "Square overrides area, so the subclass method returning " + std::to_string(a + k) + " is used.");
}

KcBank classes_bank() {
  return {{semantic("cls-self", "the role of self in a method", "it refers to the instance the method was called on",
                    {"it refers to the class itself", "it is a reserved keyword", "it refers to the parent class"},
                    "self refers to the instance the method was called on and gives access to its attributes."),
           semantic("cls-init", "the purpose of __init__", "it initializes a newly created instance",
                    {"it deletes an instance", "it creates the class object", "it converts an instance to a string"},
                    "__init__ initializes a newly created instance, usually by setting attributes."),
           semantic("cls-str", "what __str__ controls", "the readable text returned by str() and print",
                    {"how instances are compared", "how instances are hashed", "how attributes are deleted"},
                    "__str__ returns the readable text that str() and print show for an instance."),
           semantic("cls-super", "what super().__init__() does in a subclass", "it calls the parent class initializer",
                    {"it creates a second instance", "it calls the subclass initializer again", "it deletes the parent class"},
                    "super().__init__() calls the parent class initializer so inherited setup still happens."),
           semantic("cls-classmethod", "what a classmethod receives as its first argument", "the class itself, usually named cls",
                    {"the instance, usually named self", "no argument at all", "the parent module"},
                    "a classmethod receives the class itself as its first argument, conventionally named cls.")},
          {class_fact}};
}

// ---------------------------------------------------------------- Tuples
Fact tuple_fact(Rng& rng) {
  auto v = distinct_ints(rng, uniform(rng, 3, 5), 1, 40);
  const std::string lit = py_tuple(v);
  const int kind = uniform(rng, 0, 4);
  std::string expr, answer, why;
  Strings cands;
  switch (kind) {
    case 0:
      expr = lit + "[1]";
      answer = std::to_string(v[1]);
      cands = {std::to_string(v[0]), std::to_string(v[2]), "TypeError"};
      why = "index 1 selects the second element";
      break;
    case 1:
      expr = "len(" + lit + " + (0,))";
      answer = std::to_string(v.size() + 1);
      cands = numeric_distractors(static_cast<long long>(v.size() + 1), {static_cast<long long>(v.size())});
      why = "concatenating adds one element to the " + std::to_string(v.size());
      break;
    case 2: {
      expr = lit + "[1:]";
      answer = py_tuple({v.begin() + 1, v.end()});
      cands = {lit, py_tuple({v.begin(), v.end() - 1}), py_list({v.begin() + 1, v.end()})};
      why = "slicing a tuple returns a tuple without the first element";
      break;
    }
    case 3:
      expr = lit + ".count(" + std::to_string(v[0]) + ")";
      answer = "1";
      cands = {"0", std::to_string(v[0]), std::to_string(v.size())};
      why = "the value appears exactly once";
      break;
    default:
      expr = "max(" + lit + ")";
      answer = std::to_string(*std::max_element(v.begin(), v.end()));
      cands = {std::to_string(*std::min_element(v.begin(), v.end())), std::to_string(v.back()), std::to_string(v.front())};
      why = "max returns the largest element";
  }
  return expr_fact("tuple", expr, answer, clean_distractors(answer, cands, {"None", "0", "TypeError"}),
                   expr + " gives " + answer + " because " + why + ".");
}

KcBank tuples_bank() {
  return {{semantic("tuple-immutable", "what happens when you assign to t[0] for a tuple t", "a TypeError is raised because tuples are immutable",
                    {"the first element is replaced", "a new tuple is created silently", "an IndexError is raised"},
                    "tuples are immutable so item assignment raises a TypeError."),
           semantic("tuple-single", "how to write a tuple containing only the number 5", "(5,)",
                    {"(5)", "[5]", "tuple 5"},
                    "a single element tuple needs a trailing comma, as in (5,), because (5) is just 5.")},
          {tuple_fact}};
}

// ---------------------------------------------------------------- Sets
Fact set_fact(Rng& rng) {
  auto a = distinct_ints(rng, 4, 1, 12);
  auto b = distinct_ints(rng, 4, 1, 12);
  const int kind = uniform(rng, 0, 3);
  std::vector<int> inter, uni, diff;
  for (int x : a) {
    if (std::find(b.begin(), b.end(), x) != b.end()) inter.push_back(x); else diff.push_back(x);
  }
  uni = a;
  for (int x : b) if (std::find(a.begin(), a.end(), x) == a.end()) uni.push_back(x);
  const std::string sa = py_set(a), sb = py_set(b);
  std::string expr, answer, why;
  Strings cands;
  switch (kind) {
    case 0: expr = sa + " & " + sb; answer = py_set(inter); cands = {py_set(uni), py_set(diff), sa}; why = "& keeps elements present in both sets"; break;
    case 1: expr = sa + " | " + sb; answer = py_set(uni); cands = {py_set(inter), py_set(diff), sb}; why = "| combines all elements from both sets"; break;
    case 2: expr = sa + " - " + sb; answer = py_set(diff); cands = {py_set(inter), py_set(uni), sb}; why = "- keeps elements of the first set missing from the second"; break;
    default: {
      std::vector<int> dup = a;
      dup.push_back(a[0]);
      dup.push_back(a[1]);
      expr = "len(set(" + py_list(dup) + "))";
      answer = "4";
      cands = {"6", "5", "2"};
      why = "set drops the duplicated values";
    }
  }
  return expr_fact("set", expr, answer, clean_distractors(answer, cands, {"set()", "0", "TypeError"}),
                   expr + " gives " + answer + " because " + why + ".");
}

KcBank sets_bank() {
  return {{semantic("set-order", "the ordering guarantee of a set", "sets are unordered so element order is not guaranteed",
                    {"elements keep insertion order", "elements are always sorted", "elements are stored in reverse order"},
                    "sets are unordered collections so element order is not guaranteed."),
           semantic("set-empty", "how to create an empty set", "set()", {"{}", "[]", "set[]"},
                    "set() creates an empty set because {} creates an empty dict.")},
          {set_fact}};
}

// ---------------------------------------------------------------- Functions
Fact function_fact(Rng& rng) {
  const std::vector<std::pair<std::string, std::string>> ops = {{"*", "multiplies"}, {"+", "adds"}, {"-", "subtracts"}};
  const auto& [op, verb] = pick(rng, ops);
  const int k = uniform(rng, 2, 9), a = uniform(rng, 2, 20), b = uniform(rng, 2, 9);
  auto apply = [&](int x, int y) { return op == "*" ? x * y : (op == "+" ? x + y : x - y); };
  const std::string ctx = "def f(x, y=" + std::to_string(k) + "): return x " + op + " y";
  const int kind = uniform(rng, 0, 2);
  if (kind == 0) {
    const int r = apply(a, k);
    return ctx_fact("fn-default", ctx, "f(" + std::to_string(a) + ")", std::to_string(r),
                    numeric_distractors(r, {apply(a, 0), a, apply(a, 1)}),
                    "f(" + std::to_string(a) + ") uses the default y = " + std::to_string(k) + " and " + verb +
                        ", giving " + std::to_string(r) + ".");
  }
  if (kind == 1) {
    const int r = apply(a, b);
    return ctx_fact("fn-pos", ctx, "f(" + std::to_string(a) + ", " + std::to_string(b) + ")", std::to_string(r),
                    numeric_distractors(r, {apply(a, k), apply(b, a)}),
                    "passing y = " + std::to_string(b) + " overrides the default " + std::to_string(k) + ", so the result is " +
                        std::to_string(r) + ".");
  }
  const int r = apply(b, a);
  return ctx_fact("fn-kw", ctx, "f(y=" + std::to_string(a) + ", x=" + std::to_string(b) + ")", std::to_string(r),
                  numeric_distractors(r, {apply(a, b), apply(b, k)}),
                  "keyword arguments bind by name so x = " + std::to_string(b) + " and y = " + std::to_string(a) +
                      ", giving " + std::to_string(r) + ".");
}

KcBank functions_bank() {
  return {{semantic("fn-none", "what a function returns when it has no return statement", "None",
                    {"0", "an empty string", "the last evaluated expression"},
                    "a function without a return statement returns None."),
           semantic("fn-args", "what *args collects in a function definition", "extra positional arguments as a tuple",
                    {"extra keyword arguments as a dict", "all arguments as a list", "only the first argument"},
                    "*args collects extra positional arguments into a tuple."),
           semantic("fn-kwargs", "what **kwargs collects in a function definition", "extra keyword arguments as a dict",
                    {"extra positional arguments as a tuple", "all arguments as a set", "the return value"},
                    "**kwargs collects extra keyword arguments into a dict."),
           semantic("fn-mutable-default", "the problem with a default argument like items=[]", "the same list is shared across calls",
                    {"it raises a SyntaxError", "a fresh list is created each call", "the list is frozen"},
                    "a mutable default is created once, so the same list is shared across calls.")},
          {function_fact}};
}

// ---------------------------------------------------------------- File Handling
KcBank files_bank() {
  std::vector<Fact> fixed = {
      semantic("mode-r", "the file mode 'r'", "open for reading text, failing if the file is missing",
               {"open for writing and truncate", "open for appending", "create a new file only"},
               "mode 'r' opens a file for reading text and fails if it does not exist."),
      semantic("mode-w", "the file mode 'w'", "open for writing, truncating any existing content",
               {"open for reading only", "open for appending at the end", "open read only in binary"},
               "mode 'w' opens for writing and truncates existing content."),
      semantic("mode-a", "the file mode 'a'", "open for writing at the end without truncating",
               {"open for reading only", "open and truncate the file", "open in binary read mode"},
               "mode 'a' appends to the end of the file without truncating it."),
      semantic("mode-x", "the file mode 'x'", "create a new file, failing if it already exists",
               {"open for reading", "open for appending", "delete the file"},
               "mode 'x' creates a new file and fails if it already exists."),
      semantic("mode-rb", "the file mode 'rb'", "open for reading bytes in binary mode",
               {"open for writing bytes", "open for reading text", "open for appending text"},
               "mode 'rb' reads the file as bytes in binary mode."),
      semantic("read-lines", "what readlines returns", "a list of the remaining lines including newline characters",
               {"a single string with all text", "only the first line", "the number of lines"},
               "readlines returns a list of remaining lines, each keeping its newline."),
      semantic("readline", "what readline returns at the end of a file", "an empty string",
               {"None", "an EOFError", "a newline character"},
               "readline returns an empty string once the end of file is reached."),
      semantic("with-close", "why files are opened with a with statement", "the file is closed automatically when the block ends",
               {"the file is read faster", "the file becomes read only", "the file is locked for other programs"},
               "a with statement closes the file automatically when the block ends, even after errors."),
      semantic("seek", "what f.seek(0) does", "moves the file position back to the start",
               {"deletes the file content", "closes the file", "reads the first byte"},
               "seek(0) moves the file position back to the start of the file."),
      semantic("tell", "what f.tell() returns", "the current position in the file",
               {"the file size", "the file name", "the number of lines read"},
               "tell returns the current position of the file pointer."),
  };
  Family write_fact = [](Rng& rng) {
    const std::string w = pick(rng, kWords) + std::string(static_cast<size_t>(uniform(rng, 0, 3)), '!');
    const std::string ctx = "f = open('out.txt', 'w')";
    const std::string expr = "f.write(" + py_str(w) + ")";
    const long long n = static_cast<long long>(w.size());
    return ctx_fact("write", ctx, expr, std::to_string(n), numeric_distractors(n, {0, n + 1}),
                    "write returns the number of characters written, which is " + std::to_string(n) + ".");
  };
  return {fixed, {write_fact}};
}

// ---------------------------------------------------------------- Modules
KcBank modules_bank() {
  const std::vector<std::pair<std::string, std::string>> table = {
      {"sqrt", "math"}, {"floor", "math"}, {"gcd", "math"}, {"pi", "math"}, {"randint", "random"},
      {"choice", "random"}, {"shuffle", "random"}, {"sleep", "time"}, {"perf_counter", "time"},
      {"getcwd", "os"}, {"listdir", "os"}, {"argv", "sys"}, {"exit", "sys"}, {"dumps", "json"},
      {"loads", "json"}, {"Counter", "collections"}, {"defaultdict", "collections"}, {"deque", "collections"},
      {"namedtuple", "collections"}, {"reduce", "functools"}, {"lru_cache", "functools"}, {"partial", "functools"},
      {"chain", "itertools"}, {"permutations", "itertools"}, {"product", "itertools"}, {"deepcopy", "copy"},
      {"Path", "pathlib"}, {"heappush", "heapq"}, {"bisect_left", "bisect"}, {"mean", "statistics"},
      {"median", "statistics"}, {"Fraction", "fractions"}, {"Decimal", "decimal"}, {"sha256", "hashlib"},
      {"b64encode", "base64"}, {"writer", "csv"}, {"timedelta", "datetime"}, {"pprint", "pprint"},
      {"dataclass", "dataclasses"}, {"ABC", "abc"}, {"Enum", "enum"}, {"urlopen", "urllib.request"},
      {"which", "shutil"}, {"run", "subprocess"}, {"Thread", "threading"}, {"getLogger", "logging"}};
  Strings modules;
  for (const auto& [_, m] : table)
    if (std::find(modules.begin(), modules.end(), m) == modules.end()) modules.push_back(m);
  std::vector<Fact> fixed;
  size_t i = 0;
  for (const auto& [name, module] : table) {
    Strings wrong;
    for (size_t j = 1; wrong.size() < 5; ++j) {
      const auto& m = modules[(i * 7 + j * 3) % modules.size()];
      if (m != module && std::find(wrong.begin(), wrong.end(), m) == wrong.end()) wrong.push_back(m);
    }
    fixed.push_back(Fact{"mod:" + name, module_stems(name), module, wrong,
                         name + " is provided by the " + module + " module, so it is imported from " + module + "."});
    ++i;
  }
  Family math_fact = [](Rng& rng) {
    const int kind = uniform(rng, 0, 2);
    if (kind == 0) {
      const int r = uniform(rng, 2, 30);
      const std::string expr = "math.sqrt(" + std::to_string(r * r) + ")";
      return expr_fact("math", expr, std::to_string(r) + ".0",
                       clean_distractors(std::to_string(r) + ".0", {std::to_string(r), std::to_string(r + 1) + ".0", std::to_string(r * 2) + ".0"}, {}),
                       "math.sqrt returns a float, and the square root of " + std::to_string(r * r) + " is " + std::to_string(r) + ".0.");
    }
    const int whole = uniform(rng, 1, 40), frac = uniform(rng, 1, 9);
    const std::string x = std::to_string(whole) + "." + std::to_string(frac);
    const bool is_floor = kind == 1;
    const std::string fn = is_floor ? "floor" : "ceil";
    const int r = is_floor ? whole : whole + 1;
    return expr_fact("math", "math." + fn + "(" + x + ")", std::to_string(r),
                     numeric_distractors(r, {is_floor ? whole + 1 : whole}),
                     "math." + fn + " rounds " + x + (is_floor ? " down" : " up") + " to the integer " + std::to_string(r) + ".");
  };
  return {fixed, {math_fact}};
}

// ---------------------------------------------------------------- Variables
Fact variable_fact(Rng& rng) {
  const int kind = uniform(rng, 0, 3);
  const int a = uniform(rng, 1, 30), b = uniform(rng, 1, 30), k = uniform(rng, 2, 6);
  if (kind == 0) {
    const std::string ctx = "a, b = " + std::to_string(a) + ", " + std::to_string(b) + "; a, b = b, a";
    return ctx_fact("swap", ctx, "a", std::to_string(b), numeric_distractors(b, {a, a + b}),
                    "the tuple assignment swaps the values so a becomes " + std::to_string(b) + ".");
  }
  if (kind == 1) {
    const std::string ctx = "x = " + std::to_string(a) + "; x += " + std::to_string(b) + "; x *= " + std::to_string(k);
    const int r = (a + b) * k;
    return ctx_fact("augassign", ctx, "x", std::to_string(r), numeric_distractors(r, {a + b * k, a * k + b}),
                    "x becomes " + std::to_string(a + b) + " after += and then " + std::to_string(r) + " after *=.");
  }
  if (kind == 2) {
    const std::string ctx = "x = y = " + std::to_string(a) + "; y += " + std::to_string(b);
    return ctx_fact("chain", ctx, "x", std::to_string(a), numeric_distractors(a, {a + b, b}),
                    "y += " + std::to_string(b) + " rebinds y only, so x stays " + std::to_string(a) + ".");
  }
  auto v = distinct_ints(rng, 4, 1, 30);
  const std::string ctx = "first, *rest = " + py_list(v);
  return ctx_fact("unpack", ctx, "rest", py_list({v.begin() + 1, v.end()}),
                  clean_distractors(py_list({v.begin() + 1, v.end()}), {py_list(v), py_tuple({v.begin() + 1, v.end()}), std::to_string(v[1])}, {}),
                  "starred assignment puts the remaining elements into a list, so rest is " + py_list({v.begin() + 1, v.end()}) + ".");
}

KcBank variables_bank() {
  return {{semantic("var-names", "a valid Python variable name", "total_2", {"2total", "total-2", "class"},
                    "names may contain letters, digits and underscores but cannot start with a digit or be a keyword, so total_2 is valid."),
           semantic("var-dynamic", "what happens when you assign a string to a variable that held an int", "the name is rebound to the string",
                    {"a TypeError is raised", "the string is converted to an int", "both values are stored"},
                    "Python is dynamically typed, so the name is simply rebound to the new object.")},
          {variable_fact}};
}

// ---------------------------------------------------------------- Built-in Functions
Fact builtin_fact(Rng& rng) {
  const int kind = uniform(rng, 0, 5);
  const int a = uniform(rng, 2, 60), b = uniform(rng, 2, 9);
  switch (kind) {
    case 0:
      return expr_fact("abs", "abs(-" + std::to_string(a) + ")", std::to_string(a), numeric_distractors(a, {-a, 0}),
                       "abs returns the magnitude, so abs(-" + std::to_string(a) + ") is " + std::to_string(a) + ".");
    case 1: {
      const std::string ans = "(" + std::to_string(a / b) + ", " + std::to_string(a % b) + ")";
      return expr_fact("divmod", "divmod(" + std::to_string(a) + ", " + std::to_string(b) + ")", ans,
                       clean_distractors(ans, {"(" + std::to_string(a % b) + ", " + std::to_string(a / b) + ")",
                                               "(" + std::to_string(a / b + 1) + ", " + std::to_string(a % b) + ")",
                                               py_float(static_cast<double>(a) / b)}, {}),
                       "divmod returns the quotient and remainder, " + ans + ".");
    }
    case 2: {
      const int m = uniform(rng, 3, 11);
      const int r = static_cast<int>(static_cast<long long>(std::llround(std::pow(b, 3))) % m);
      return expr_fact("pow", "pow(" + std::to_string(b) + ", 3, " + std::to_string(m) + ")", std::to_string(r),
                       numeric_distractors(r, {b * b * b}),
                       "pow with three arguments computes " + std::to_string(b) + " ** 3 modulo " + std::to_string(m) + ", which is " + std::to_string(r) + ".");
    }
    case 3: {
      const char c = static_cast<char>('A' + uniform(rng, 0, 25));
      return expr_fact("ord", "ord('" + std::string(1, c) + "')", std::to_string(static_cast<int>(c)),
                       numeric_distractors(c, {c - 'A'}),
                       "ord returns the Unicode code point, which is " + std::to_string(static_cast<int>(c)) + " for " + std::string(1, c) + ".");
    }
    case 4: {
      const int c = uniform(rng, 0, 25);
      const std::string ans = py_str(std::string(1, static_cast<char>('a' + c)));
      return expr_fact("chr", "chr(" + std::to_string(97 + c) + ")", ans,
                       clean_distractors(ans, {py_str(std::string(1, static_cast<char>('A' + c))), py_str(std::string(1, static_cast<char>('a' + (c + 1) % 26))), std::to_string(97 + c)}, {}),
                       "chr converts the code point " + std::to_string(97 + c) + " to the character " + ans + ".");
    }
    default: {
      const std::string w = pick(rng, kWords);
      const int n = static_cast<int>(w.size()) + b;
      return expr_fact("lenstr", "len(" + py_str(w) + " + 'x' * " + std::to_string(b) + ")", std::to_string(n),
                       numeric_distractors(n, {static_cast<long long>(w.size()), b}),
                       "the repeated x adds " + std::to_string(b) + " characters to " + std::to_string(w.size()) + ", giving " + std::to_string(n) + ".");
    }
  }
}

KcBank builtins_bank() {
  return {{semantic("bi-enumerate", "what enumerate yields", "pairs of index and value", {"only the values", "only the indices", "a sorted list"},
                    "enumerate yields pairs of index and value."),
           semantic("bi-zip", "what zip does with two lists", "pairs up elements by position", {"concatenates the lists", "sorts both lists", "compresses the lists into bytes"},
                    "zip pairs up elements from each list by position.")},
          {builtin_fact}};
}

// ---------------------------------------------------------------- B-side banks
Fact recursion_fact(Rng& rng) {
  const int kind = uniform(rng, 0, 2);
  if (kind == 0) {
    const int n = uniform(rng, 2, 8);
    long long r = 1;
    for (int i = 2; i <= n; ++i) r *= i;
    return ctx_fact("fact", "def fact(n): return 1 if n <= 1 else n * fact(n - 1)", "fact(" + std::to_string(n) + ")",
                    std::to_string(r), numeric_distractors(r, {r / n, r * (n + 1)}),
                    "fact multiplies n by fact(n - 1) until the base case, so fact(" + std::to_string(n) + ") is " + std::to_string(r) + ".");
  }
  if (kind == 1) {
    const int n = uniform(rng, 3, 15);
    std::vector<long long> fib = {0, 1};
    for (int i = 2; i <= n + 1; ++i) fib.push_back(fib[static_cast<size_t>(i - 1)] + fib[static_cast<size_t>(i - 2)]);
    const long long r = fib[static_cast<size_t>(n)];
    return ctx_fact("fib", "def fib(n): return n if n < 2 else fib(n - 1) + fib(n - 2)", "fib(" + std::to_string(n) + ")",
                    std::to_string(r), numeric_distractors(r, {fib[static_cast<size_t>(n - 1)], fib[static_cast<size_t>(n + 1)]}),
                    "fib adds the two previous values, so fib(" + std::to_string(n) + ") is " + std::to_string(r) + ".");
  }
  const int n = uniform(rng, 10, 9999);
  int s = 0;
  for (int m = n; m > 0; m /= 10) s += m % 10;
  return ctx_fact("digits", "def ds(n): return 0 if n == 0 else n % 10 + ds(n // 10)", "ds(" + std::to_string(n) + ")",
                  std::to_string(s), numeric_distractors(s, {n % 10, n / 10}),
                  "ds adds the last digit and recurses on the rest, so the digit sum of " + std::to_string(n) + " is " + std::to_string(s) + ".");
}

KcBank recursion_bank() {
  return {{semantic("rec-base", "the purpose of a base case in recursion", "it stops the recursion",
                    {"it speeds up every call", "it doubles the recursion depth", "it is only needed for strings"},
                    "the base case stops the recursion; without it calls continue until RecursionError.")},
          {recursion_fact}};
}

Fact lambda_fact(Rng& rng) {
  const int k = uniform(rng, 2, 9), a = uniform(rng, 2, 20);
  const int kind = uniform(rng, 0, 2);
  if (kind == 0) {
    const std::string expr = "(lambda x: x * " + std::to_string(k) + " + 1)(" + std::to_string(a) + ")";
    const int r = a * k + 1;
    return expr_fact("lam", expr, std::to_string(r), numeric_distractors(r, {a * k, a * (k + 1)}),
                     "the lambda multiplies " + std::to_string(a) + " by " + std::to_string(k) + " and adds 1, giving " + std::to_string(r) + ".");
  }
  auto v = distinct_ints(rng, 4, 1, 20);
  if (kind == 1) {
    std::vector<int> out;
    for (int x : v) out.push_back(x * k);
    const std::string expr = "list(map(lambda x: x * " + std::to_string(k) + ", " + py_list(v) + "))";
    return expr_fact("map", expr, py_list(out), clean_distractors(py_list(out), {py_list(v), py_tuple(out), std::to_string(k)}, {}),
                     "map applies the lambda to every element, giving " + py_list(out) + ".");
  }
  std::vector<int> out;
  const int t = uniform(rng, 5, 15);
  for (int x : v) if (x > t) out.push_back(x);
  const std::string expr = "list(filter(lambda x: x > " + std::to_string(t) + ", " + py_list(v) + "))";
  std::vector<int> other;
  for (int x : v) if (x <= t) other.push_back(x);
  return expr_fact("filter", expr, py_list(out), clean_distractors(py_list(out), {py_list(v), py_list(other), "[]"}, {"None"}),
                   "filter keeps elements greater than " + std::to_string(t) + ", giving " + py_list(out) + ".");
}

KcBank lambda_bank() { return {{}, {lambda_fact}}; }

Fact comprehension_fact(Rng& rng) {
  const int n = uniform(rng, 3, 7), k = uniform(rng, 2, 5);
  const int kind = uniform(rng, 0, 2);
  if (kind == 0) {
    std::vector<int> out;
    for (int x = 0; x < n; ++x) out.push_back(x * k);
    std::vector<int> off;
    for (int x = 1; x <= n; ++x) off.push_back(x * k);
    const std::string expr = "[x * " + std::to_string(k) + " for x in range(" + std::to_string(n) + ")]";
    return expr_fact("lc", expr, py_list(out), clean_distractors(py_list(out), {py_list(off), py_list({out.begin(), out.end() - 1}), std::to_string(n * k)}, {}),
                     "the comprehension multiplies each x from 0 to " + std::to_string(n - 1) + " by " + std::to_string(k) + ".");
  }
  const int m = uniform(rng, 2, 4), top = uniform(rng, 8, 20);
  std::vector<int> out;
  for (int x = 0; x < top; ++x) if (x % m == 0) out.push_back(x);
  if (kind == 1) {
    const std::string expr = "len([x for x in range(" + std::to_string(top) + ") if x % " + std::to_string(m) + " == 0])";
    const long long r = static_cast<long long>(out.size());
    return expr_fact("lclen", expr, std::to_string(r), numeric_distractors(r, {top / m}),
                     "the filter keeps multiples of " + std::to_string(m) + " below " + std::to_string(top) + ", and there are " + std::to_string(r) + ".");
  }
  const int s = std::accumulate(out.begin(), out.end(), 0);
  const std::string expr = "sum([x for x in range(" + std::to_string(top) + ") if x % " + std::to_string(m) + " == 0])";
  return expr_fact("lcsum", expr, std::to_string(s), numeric_distractors(s, {s + top, static_cast<long long>(out.size())}),
                   "the multiples of " + std::to_string(m) + " below " + std::to_string(top) + " add up to " + std::to_string(s) + ".");
}

KcBank comprehension_bank() { return {{}, {comprehension_fact}}; }

Fact generator_fact(Rng& rng) {
  const int k = uniform(rng, 2, 9), n = uniform(rng, 4, 9);
  const int kind = uniform(rng, 0, 1);
  if (kind == 0) {
    const int skip = uniform(rng, 1, 3);
    std::string ctx = "g = (x * " + std::to_string(k) + " for x in range(" + std::to_string(n) + "))";
    for (int i = 0; i < skip; ++i) ctx += "; next(g)";
    const int r = skip * k;
    return ctx_fact("gen-next", ctx, "next(g)", std::to_string(r), numeric_distractors(r, {(skip - 1) * k, (skip + 1) * k}),
                    "each next advances the generator, so after " + std::to_string(skip) + " calls the next value is " + std::to_string(r) + ".");
  }
  int s = 0;
  for (int x = 0; x < n; ++x) s += x * k;
  const std::string expr = "sum(x * " + std::to_string(k) + " for x in range(" + std::to_string(n) + "))";
  return expr_fact("gen-sum", expr, std::to_string(s), numeric_distractors(s, {s + n * k, n * k}),
                   "the generator yields multiples of " + std::to_string(k) + " below " + std::to_string(n * k) + " which sum to " + std::to_string(s) + ".");
}

KcBank generators_bank() {
  return {{semantic("gen-yield", "what yield does in a function", "it produces a value and pauses the function until the next request",
                    {"it ends the function like return", "it raises StopIteration immediately", "it prints the value"},
                    "yield produces a value and pauses the function, resuming on the next request."),
           semantic("gen-exhausted", "what next raises on an exhausted generator", "StopIteration", {"IndexError", "ValueError", "None"},
                    "an exhausted generator raises StopIteration when next is called.")},
          {generator_fact}};
}

Fact decorator_fact(Rng& rng) {
  const int k = uniform(rng, 1, 9), a = uniform(rng, 1, 20);
  const bool twice = uniform(rng, 0, 1) == 0;
  const std::string ctx = twice ? "def twice(f): return lambda x: f(f(x)); @twice def inc(x): return x + " + std::to_string(k)
                                : "def double(f): return lambda x: 2 * f(x); @double def inc(x): return x + " + std::to_string(k);
  const int r = twice ? a + 2 * k : 2 * (a + k);
  return ctx_fact("deco", ctx, "inc(" + std::to_string(a) + ")", std::to_string(r), numeric_distractors(r, {a + k, 2 * a + k}),
                  std::string(twice ? "the decorator applies inc twice" : "the decorator doubles the result of inc") +
                      ", so inc(" + std::to_string(a) + ") is " + std::to_string(r) + ".");
}

KcBank decorators_bank() {
  return {{semantic("deco-what", "what a decorator is", "a callable that takes a function and returns a replacement function",
                    {"a comment that documents a function", "a keyword that makes a function private", "a type annotation"},
                    "a decorator takes a function and returns a replacement, usually a wrapper."),
           semantic("deco-wraps", "why functools.wraps is used in a decorator", "it copies the name and docstring of the wrapped function",
                    {"it makes the wrapper faster", "it caches results", "it prevents the function from being called"},
                    "functools.wraps copies metadata like the name and docstring onto the wrapper.")},
          {decorator_fact}};
}

Fact regex_fact(Rng& rng) {
  std::string s;
  int digits = 0;
  const int len = uniform(rng, 5, 9);
  for (int i = 0; i < len; ++i) {
    if (uniform(rng, 0, 2) == 0) {
      s += static_cast<char>('0' + uniform(rng, 0, 9));
      ++digits;
    } else {
      s += static_cast<char>('a' + uniform(rng, 0, 25));
    }
  }
  if (uniform(rng, 0, 1) == 0) {
    const std::string expr = "len(re.findall(r'\\d', " + py_str(s) + "))";
    return expr_fact("re-count", expr, std::to_string(digits), numeric_distractors(digits, {len - digits, len}),
                     "\\d matches each digit and " + py_str(s) + " has " + std::to_string(digits) + " digits.");
  }
  std::string letters;
  for (char c : s) if (!(c >= '0' && c <= '9')) letters += c;
  const std::string expr = "re.sub(r'\\d', '', " + py_str(s) + ")";
  std::string dig;
  for (char c : s) if (c >= '0' && c <= '9') dig += c;
  return expr_fact("re-sub", expr, py_str(letters), clean_distractors(py_str(letters), {py_str(s), py_str(dig), py_str(letters + "0")}, {"''"}),
                   "re.sub removes every digit matched by \\d, leaving " + py_str(letters) + ".");
}

KcBank regex_bank() {
  std::vector<Fact> fixed;
  const std::vector<std::tuple<std::string, std::string, Strings>> meta = {
      {"\\d", "any decimal digit", {"any letter", "any whitespace", "a literal d"}},
      {"\\w", "any word character: letter, digit or underscore", {"only whitespace", "only digits", "a literal w"}},
      {"\\s", "any whitespace character", {"any letter", "any digit", "a literal s"}},
      {"^", "the start of the string", {"the end of the string", "any character", "a literal caret only"}},
      {"$", "the end of the string", {"the start of the string", "a dollar sign only", "any digit"}},
      {"+", "one or more repetitions of the previous item", {"zero or more repetitions", "exactly one repetition", "an optional item"}},
      {"*", "zero or more repetitions of the previous item", {"one or more repetitions", "exactly two repetitions", "any single character"}},
      {"?", "zero or one occurrence of the previous item", {"one or more occurrences", "any character", "the end of the string"}},
  };
  for (const auto& [sym, meaning, wrong] : meta) {
    fixed.push_back(semantic("re-meta" + sym, "the regular expression token " + sym, meaning, wrong,
                             "in a regular expression " + sym + " matches " + meaning + "."));
  }
  return {fixed, {regex_fact}};
}

// ---------------------------------------------------------------- fallback
KcBank generic_bank(const std::string& kc) {
  Family f = [kc](Rng& rng) {
    static const Strings syllables = {"ka", "lo", "mi", "ne", "ru", "ta", "vo", "zi", "pe", "sa"};
    std::string sym, word;
    for (int i = 0; i < 3; ++i) sym += pick(rng, syllables);
    Strings cands;
    for (int j = 0; j < 6; ++j) {
      std::string c;
      for (int i = 0; i < 2; ++i) c += pick(rng, syllables);
      cands.push_back(c + std::to_string(uniform(rng, 10, 99)));
    }
    const std::string answer = cands.front();
    cands.erase(cands.begin());
    return Fact{"sym:" + sym, subject_stems("the " + kc + " code for " + sym), answer,
                clean_distractors(answer, cands, {}), "in " + kc + " the code for " + sym + " is " + answer + "."};
  };
  return {{}, {f}};
}

}  // namespace

KcBank bank_for(const std::string& kc) {
  static const std::map<std::string, KcBank (*)()> banks = {
      {"Operators", operators_bank},      {"Data Types", data_types_bank},
      {"Strings", strings_bank},          {"Lists", lists_bank},
      {"Dictionaries", dictionaries_bank}, {"Loops", loops_bank},
      {"Conditionals", conditionals_bank}, {"Exception Handling", exceptions_bank},
      {"Classes and Objects", classes_bank}, {"Tuples", tuples_bank},
      {"Sets", sets_bank},                {"Functions", functions_bank},
      {"File Handling", files_bank},      {"Modules", modules_bank},
      {"Variables", variables_bank},      {"Built-in Functions", builtins_bank},
      {"Recursion", recursion_bank},      {"Lambda Functions", lambda_bank},
      {"List Comprehension", comprehension_bank}, {"Generators", generators_bank},
      {"Decorators", decorators_bank},    {"Regular Expressions", regex_bank},
  };
  auto it = banks.find(kc);
  if (it != banks.end()) return it->second();
  return generic_bank(kc);
}

}  // namespace tal::synth
