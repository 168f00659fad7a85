// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

namespace tal {

/// Fraction of exact label matches. Throws on empty or unequal inputs.
double accuracy(std::span<const char> predictions, std::span<const char> golds);

/// Unweighted mean of per-class F1 over the classes present in either input.
double macro_f1(std::span<const char> predictions, std::span<const char> golds);

/// Mean over the trailing `window` points; a shorter prefix averages what is available.
std::vector<double> rolling_accuracy(std::span<const double> scores, int window = 10);
std::vector<double> cumulative_accuracy(std::span<const double> scores);

/// First 1-based index whose full trailing window averages at least
/// `threshold`; `scores.size() + 1` when no such index exists.
int items_to_threshold(std::span<const double> scores, double threshold = 0.6, int window = 10);

double mean(std::span<const double> values);
/// Sample standard deviation (n - 1); 0 for fewer than two values.
double sample_std(std::span<const double> values);

}  // namespace tal
