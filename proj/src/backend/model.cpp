// SPDX-License-Identifier: Apache-2.0
#include "tal/model.hpp"

#include <cmath>
#include <random>

#include "tal/adapter.hpp"
#include "tal/error.hpp"

namespace tal {

void ModelConfig::validate() const {
  require(layer_count >= 1, "layer_count must be positive");
  require(model_width >= 1, "model_width must be positive");
  require(head_count >= 1, "head_count must be positive");
  require(context_length >= 1, "context_length must be positive");
  require(ff_width >= 1, "ff_width must be positive");
  require(model_width % head_count == 0, "model_width must be divisible by head_count");
  require(vocabulary.size() > Vocabulary::kSpecialCount, "vocabulary has no text tokens");
}

template <typename S>
size_t ParamStore<S>::add(std::string name, Eigen::Index rows, Eigen::Index cols) {
  require(!index_.contains(name), "duplicate tensor name " + name);
  index_.emplace(name, values_.size());
  names_.push_back(std::move(name));
  values_.push_back(Mat<S>::Zero(rows, cols));
  return values_.size() - 1;
}

template <typename S>
std::optional<size_t> ParamStore<S>::find(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

template <typename S>
size_t ParamStore<S>::index(const std::string& name) const {
  auto found = find(name);
  if (!found) fail(errc::kUnknownTarget, "no tensor named " + name);
  return *found;
}

template <typename S>
void ParamStore<S>::set_zero() {
  for (auto& v : values_) v.setZero();
}

template <typename S>
ParamStore<S> ParamStore<S>::zeros_like() const {
  ParamStore out;
  for (size_t i = 0; i < size(); ++i) out.add(names_[i], values_[i].rows(), values_[i].cols());
  return out;
}

std::string block_tensor_name(int block, const char* suffix) {
  return "blocks." + std::to_string(block) + "." + suffix;
}

template <typename S>
Transformer<S> Transformer<S>::allocate(const ModelConfig& config) {
  config.validate();
  Transformer t;
  t.config = config;
  const int d = config.model_width;
  const int f = config.ff_width;
  auto& p = t.params;
  t.layout.token_embedding = p.add("token_embedding", config.vocabulary.size(), d);
  t.layout.position_embedding = p.add("position_embedding", config.context_length, d);
  for (int b = 0; b < config.layer_count; ++b) {
    BlockSlots s{};
    s.ln1_gain = p.add(block_tensor_name(b, "ln1.gain"), 1, d);
    s.ln1_bias = p.add(block_tensor_name(b, "ln1.bias"), 1, d);
    s.query = p.add(block_tensor_name(b, "attn.query"), d, d);
    s.key = p.add(block_tensor_name(b, "attn.key"), d, d);
    s.value = p.add(block_tensor_name(b, "attn.value"), d, d);
    s.output = p.add(block_tensor_name(b, "attn.output"), d, d);
    s.ln2_gain = p.add(block_tensor_name(b, "ln2.gain"), 1, d);
    s.ln2_bias = p.add(block_tensor_name(b, "ln2.bias"), 1, d);
    s.mlp_in = p.add(block_tensor_name(b, "mlp.in"), d, f);
    s.mlp_in_bias = p.add(block_tensor_name(b, "mlp.in_bias"), 1, f);
    s.mlp_out = p.add(block_tensor_name(b, "mlp.out"), f, d);
    s.mlp_out_bias = p.add(block_tensor_name(b, "mlp.out_bias"), 1, d);
    t.layout.blocks.push_back(s);
  }
  t.layout.final_gain = p.add("final_ln.gain", 1, d);
  t.layout.final_bias = p.add("final_ln.bias", 1, d);
  return t;
}

template <typename S>
Transformer<S> Transformer<S>::init(const ModelConfig& config) {
  Transformer t = allocate(config);
  std::mt19937_64 rng(config.seed);
  const double base_std = 0.02;
  const double residual_std = base_std / std::sqrt(2.0 * config.layer_count);
  auto fill = [&](size_t slot, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    auto& m = t.params[slot];
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(dist(rng));
  };
  fill(t.layout.token_embedding, base_std);
  fill(t.layout.position_embedding, base_std);
  for (const auto& s : t.layout.blocks) {
    t.params[s.ln1_gain].setOnes();
    t.params[s.ln2_gain].setOnes();
    fill(s.query, base_std);
    fill(s.key, base_std);
    fill(s.value, base_std);
    fill(s.output, residual_std);
    fill(s.mlp_in, base_std);
    fill(s.mlp_out, residual_std);
  }
  t.params[t.layout.final_gain].setOnes();
  return t;
}

std::vector<std::string> default_adapter_targets(const ModelConfig& config) {
  std::vector<std::string> out;
  for (int b = 0; b < config.layer_count; ++b) {
    out.push_back(block_tensor_name(b, "attn.query"));
    out.push_back(block_tensor_name(b, "attn.value"));
  }
  return out;
}

template <typename S>
Mat<S> LowRankAdapter<S>::delta(const std::string& target) const {
  auto it = factors.find(target);
  if (it == factors.end()) fail(errc::kUnknownTarget, "adapter has no target " + target);
  Mat<S> d = it->second.down * it->second.up;
  d *= scale();
  return d;
}

template <typename S>
LowRankAdapter<S> LowRankAdapter<S>::create(const Transformer<S>& base,
                                            const std::vector<std::string>& targets, int rank,
                                            double alpha, std::uint64_t seed) {
  require(rank >= 1, "adapter rank must be >= 1");
  require(!targets.empty(), "adapter needs at least one target");
  LowRankAdapter a;
  a.rank = rank;
  a.alpha = alpha;
  std::mt19937_64 rng(seed);
  for (const auto& name : targets) {
    const auto& w = base.params[base.params.index(name)];
    AdapterFactors<S> f{Mat<S>(w.rows(), rank), Mat<S>::Zero(rank, w.cols())};
    // Kaiming-uniform style bound on the input projection.
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.rows()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index i = 0; i < f.down.size(); ++i) f.down.data()[i] = static_cast<S>(dist(rng));
    a.factors.emplace(name, std::move(f));
  }
  return a;
}

template <typename S>
LowRankAdapter<S> LowRankAdapter<S>::zeros_like() const {
  LowRankAdapter out;
  out.rank = rank;
  out.alpha = alpha;
  for (const auto& [name, f] : factors)
    out.factors[name] = {Mat<S>::Zero(f.down.rows(), f.down.cols()), Mat<S>::Zero(f.up.rows(), f.up.cols())};
  return out;
}

template <typename S>
void LowRankAdapter<S>::set_zero() {
  for (auto& [_, f] : factors) {
    f.down.setZero();
    f.up.setZero();
  }
}

template <typename S>
void LowRankAdapter<S>::check_compatible(const Transformer<S>& base) const {
  for (const auto& [name, f] : factors) {
    auto slot = base.params.find(name);
    if (!slot) fail(errc::kUnknownTarget, "adapter target " + name + " not in checkpoint");
    const auto& w = base.params[*slot];
    if (f.down.rows() != w.rows() || f.up.cols() != w.cols() || f.down.cols() != rank ||
        f.up.rows() != rank)
      fail(errc::kShapeMismatch, "adapter factors for " + name + " do not match weight shape");
  }
}

template <typename S>
ModelView<S>::ModelView(const Transformer<S>& base, std::vector<const LowRankAdapter<S>*> adapters)
    : base_(&base), adapters_(std::move(adapters)) {
  for (const auto* a : adapters_) a->check_compatible(base);
  refresh();
}

template <typename S>
void ModelView<S>::refresh() {
  owned_.clear();
  effective_.assign(base_->params.size(), nullptr);
  for (size_t i = 0; i < base_->params.size(); ++i) effective_[i] = &base_->params[i];
  for (const auto* a : adapters_) {
    for (const auto& [name, f] : a->factors) {
      const size_t slot = base_->params.index(name);
      auto it = owned_.find(slot);
      if (it == owned_.end()) it = owned_.emplace(slot, base_->params[slot]).first;
      it->second.noalias() += a->scale() * (f.down * f.up);
    }
  }
  for (auto& [slot, m] : owned_) effective_[slot] = &m;
}

template <typename S>
Transformer<S> merge_adapters(const Transformer<S>& base, const std::vector<const LowRankAdapter<S>*>& adapters) {
  Transformer<S> out = base;
  for (const auto* a : adapters) {
    a->check_compatible(base);
    for (const auto& [name, f] : a->factors) {
      out.params[out.params.index(name)].noalias() += a->scale() * (f.down * f.up);
    }
  }
  return out;
}

template class ParamStore<float>;
template class ParamStore<double>;
template struct Transformer<float>;
template struct Transformer<double>;
template class LowRankAdapter<float>;
template class LowRankAdapter<double>;
template class ModelView<float>;
template class ModelView<double>;
template Transformer<float> merge_adapters(const Transformer<float>&, const std::vector<const LowRankAdapter<float>*>&);
template Transformer<double> merge_adapters(const Transformer<double>&, const std::vector<const LowRankAdapter<double>*>&);

}  // namespace tal
