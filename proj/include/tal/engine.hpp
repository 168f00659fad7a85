// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <span>
#include <vector>

#include "tal/adapter.hpp"

namespace tal {

template <typename S>
struct BlockCache {
  Mat<S> input, norm1, attn_in, query, key, value, mixed, mid, norm2, ff_in, ff_pre, ff_act;
  RowVec<S> inv_std1, inv_std2;
  std::vector<Mat<S>> probs;  // one T x T matrix per head
};

/// Activations kept from a forward pass for backpropagation.
template <typename S>
struct ForwardCache {
  std::vector<int> tokens;
  std::vector<BlockCache<S>> blocks;
  Mat<S> final_in, final_norm, hidden;
  RowVec<S> final_inv_std;
};

/// Gradient sinks. A null member means that group is frozen.
template <typename S>
struct GradientSink {
  ParamStore<S>* base = nullptr;
  LowRankAdapter<S>* adapter = nullptr;  // accumulates for the last adapter in the view
};

template <typename S>
void forward(const ModelView<S>& model, std::span<const int> tokens, ForwardCache<S>& cache);

/// Backpropagates d(loss)/d(hidden) (T x d) into the requested sinks.
template <typename S>
void backward(const ModelView<S>& model, const ForwardCache<S>& cache, const Mat<S>& d_hidden,
              GradientSink<S>& sink);

/// Full-vocabulary logits (tied embedding) for the given hidden-state rows.
template <typename S>
Mat<S> vocab_logits(const ModelView<S>& model, const ForwardCache<S>& cache, std::span<const int> rows);

/// Adds the effect of d(loss)/d(logits) for `rows` into d_hidden and the sink.
template <typename S>
void accumulate_vocab_grad(const ModelView<S>& model, const ForwardCache<S>& cache,
                           std::span<const int> rows, const Mat<S>& d_logits, Mat<S>& d_hidden,
                           GradientSink<S>& sink);

/// Scores of the four label tokens at hidden-state row `row`.
template <typename S>
std::array<S, 4> label_scores(const ModelView<S>& model, const ForwardCache<S>& cache, int row);

template <typename S>
void accumulate_label_grad(const ModelView<S>& model, const ForwardCache<S>& cache, int row,
                           const std::array<S, 4>& d_scores, Mat<S>& d_hidden, GradientSink<S>& sink);

/// Incremental decoding state (per-layer key/value caches).
template <typename S>
struct DecodeState {
  std::vector<Mat<S>> keys, values;
  int length = 0;
};

template <typename S>
DecodeState<S> make_decode_state(const ModelView<S>& model);

/// Feeds one token and returns the vocabulary logits for the next position.
template <typename S>
RowVec<S> decode_step(const ModelView<S>& model, DecodeState<S>& state, int token);

}  // namespace tal
