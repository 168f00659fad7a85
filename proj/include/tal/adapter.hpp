// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "tal/model.hpp"

namespace tal {

/// Factor pair for one target matrix W (d x k): delta = scale * down (d x r) * up (r x k).
template <typename S>
struct AdapterFactors {
  Mat<S> down;
  Mat<S> up;
};

/// Additive low-rank deltas on designated weight matrices.
template <typename S>
class LowRankAdapter {
 public:
  int rank = 8;
  double alpha = 32.0;
  std::map<std::string, AdapterFactors<S>> factors;

  S scale() const { return static_cast<S>(alpha / rank); }
  Mat<S> delta(const std::string& target) const;

  /// Random `down`, zero `up`, so the initial delta is exactly zero.
  static LowRankAdapter create(const Transformer<S>& base, const std::vector<std::string>& targets,
                               int rank, double alpha, std::uint64_t seed);
  /// Same targets and shapes with zero factors (gradient accumulator).
  LowRankAdapter zeros_like() const;
  void set_zero();
  /// Throws unknown-target / shape-mismatch when incompatible with `base`.
  void check_compatible(const Transformer<S>& base) const;

  template <typename T>
  LowRankAdapter<T> cast() const {
    LowRankAdapter<T> out;
    out.rank = rank;
    out.alpha = alpha;
    for (const auto& [name, f] : factors)
      out.factors[name] = {f.down.template cast<T>(), f.up.template cast<T>()};
    return out;
  }
};

/// Query and value projections of every attention block.
std::vector<std::string> default_adapter_targets(const ModelConfig& config);

/// Read-only model view: base weights plus any number of stacked adapters.
///
/// Effective weights for adapted targets are materialized; base weights are
/// never modified. Call refresh() after the base or any adapter changes.
template <typename S>
class ModelView {
 public:
  explicit ModelView(const Transformer<S>& base, std::vector<const LowRankAdapter<S>*> adapters = {});

  void refresh();
  const Transformer<S>& base() const { return *base_; }
  const ModelConfig& config() const { return base_->config; }
  const Layout& layout() const { return base_->layout; }
  const Mat<S>& weight(size_t slot) const { return *effective_[slot]; }
  const std::vector<const LowRankAdapter<S>*>& adapters() const { return adapters_; }

 private:
  const Transformer<S>* base_;
  std::vector<const LowRankAdapter<S>*> adapters_;
  std::vector<const Mat<S>*> effective_;
  std::map<size_t, Mat<S>> owned_;
};

/// Folds every adapter delta into a copy of the base weights.
template <typename S>
Transformer<S> merge_adapters(const Transformer<S>& base, const std::vector<const LowRankAdapter<S>*>& adapters);

}  // namespace tal
