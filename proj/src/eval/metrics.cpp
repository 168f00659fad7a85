// SPDX-License-Identifier: Apache-2.0
#include "tal/metrics.hpp"

#include <cmath>
#include <map>

#include "tal/error.hpp"

namespace tal {

namespace {

void check_pairs(std::span<const char> predictions, std::span<const char> golds) {
  require(!golds.empty(), "metric over an empty input");
  require(predictions.size() == golds.size(), "predictions and golds differ in length");
}

}  // namespace

double accuracy(std::span<const char> predictions, std::span<const char> golds) {
  check_pairs(predictions, golds);
  size_t hits = 0;
  for (size_t i = 0; i < golds.size(); ++i) hits += predictions[i] == golds[i];
  return static_cast<double>(hits) / static_cast<double>(golds.size());
}

double macro_f1(std::span<const char> predictions, std::span<const char> golds) {
  check_pairs(predictions, golds);
  struct Counts {
    int tp = 0, fp = 0, fn = 0;
  };
  std::map<char, Counts> classes;
  for (size_t i = 0; i < golds.size(); ++i) {
    if (predictions[i] == golds[i]) {
      ++classes[golds[i]].tp;
    } else {
      ++classes[predictions[i]].fp;
      ++classes[golds[i]].fn;
    }
  }
  double sum = 0.0;
  for (const auto& [_, c] : classes) {
    const int denom = 2 * c.tp + c.fp + c.fn;
    sum += denom == 0 ? 0.0 : 2.0 * c.tp / denom;
  }
  return sum / static_cast<double>(classes.size());
}

std::vector<double> rolling_accuracy(std::span<const double> scores, int window) {
  require(window >= 1, "rolling window must be at least 1");
  require(!scores.empty(), "rolling accuracy over an empty series");
  std::vector<double> out;
  double sum = 0.0;
  for (size_t i = 0; i < scores.size(); ++i) {
    sum += scores[i];
    if (i >= static_cast<size_t>(window)) sum -= scores[i - static_cast<size_t>(window)];
    out.push_back(sum / static_cast<double>(std::min(i + 1, static_cast<size_t>(window))));
  }
  return out;
}

std::vector<double> cumulative_accuracy(std::span<const double> scores) {
  require(!scores.empty(), "cumulative accuracy over an empty series");
  std::vector<double> out;
  double sum = 0.0;
  for (size_t i = 0; i < scores.size(); ++i) {
    sum += scores[i];
    out.push_back(sum / static_cast<double>(i + 1));
  }
  return out;
}

int items_to_threshold(std::span<const double> scores, double threshold, int window) {
  if (scores.empty()) return 1;
  const auto rolling = rolling_accuracy(scores, window);
  for (size_t i = static_cast<size_t>(window) - 1; i < rolling.size(); ++i)
    if (rolling[i] >= threshold) return static_cast<int>(i) + 1;
  return static_cast<int>(scores.size()) + 1;
}

double mean(std::span<const double> values) {
  require(!values.empty(), "mean of an empty series");
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

double sample_std(std::span<const double> values) {
  if (values.size() < 2) return 0.0;
  const double m = mean(values);
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

}  // namespace tal
