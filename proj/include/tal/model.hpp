// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "tal/tokenizer.hpp"

namespace tal {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;

struct ModelConfig {
  int layer_count = 2;
  int model_width = 64;
  int head_count = 4;
  int context_length = 192;
  int ff_width = 256;
  Vocabulary vocabulary;
  std::uint64_t seed = 0;

  int head_width() const { return model_width / head_count; }
  /// Throws on non-positive sizes or width not divisible by head count.
  void validate() const;
};

/// Ordered collection of named matrices. Vectors are stored as 1xN matrices.
template <typename S>
class ParamStore {
 public:
  size_t add(std::string name, Eigen::Index rows, Eigen::Index cols);

  size_t size() const { return values_.size(); }
  Mat<S>& operator[](size_t i) { return values_[i]; }
  const Mat<S>& operator[](size_t i) const { return values_[i]; }
  const std::string& name(size_t i) const { return names_[i]; }
  std::optional<size_t> find(const std::string& name) const;
  size_t index(const std::string& name) const;  // throws unknown-target

  void set_zero();
  /// Same names and shapes, all zeros.
  ParamStore zeros_like() const;
  template <typename T>
  ParamStore<T> cast() const {
    ParamStore<T> out;
    for (size_t i = 0; i < size(); ++i) {
      out.add(names_[i], values_[i].rows(), values_[i].cols());
      out[i] = values_[i].template cast<T>();
    }
    return out;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Mat<S>> values_;
  std::unordered_map<std::string, size_t> index_;
};

struct BlockSlots {
  size_t ln1_gain, ln1_bias, query, key, value, output;
  size_t ln2_gain, ln2_bias, mlp_in, mlp_in_bias, mlp_out, mlp_out_bias;
};

/// Fixed positions of every tensor inside a transformer's ParamStore.
struct Layout {
  size_t token_embedding = 0;
  size_t position_embedding = 0;
  std::vector<BlockSlots> blocks;
  size_t final_gain = 0;
  size_t final_bias = 0;
};

/// Decoder-only transformer weights: pre-norm blocks, learned positions,
/// tied input/output embedding.
template <typename S>
struct Transformer {
  ModelConfig config;
  ParamStore<S> params;
  Layout layout;

  /// Allocates tensors in canonical order and draws initial values from config.seed.
  static Transformer init(const ModelConfig& config);
  /// Allocates tensors with all-zero values.
  static Transformer allocate(const ModelConfig& config);

  template <typename T>
  Transformer<T> cast() const {
    Transformer<T> out;
    out.config = config;
    out.params = params.template cast<T>();
    out.layout = layout;
    return out;
  }
};

std::string block_tensor_name(int block, const char* suffix);

}  // namespace tal
