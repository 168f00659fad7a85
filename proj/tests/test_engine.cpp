// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <random>

#include "tal/error.hpp"
#include "tal/lm.hpp"

using namespace tal;

namespace {

ModelConfig micro_config() {
  ModelConfig c;
  c.layer_count = 2;
  c.model_width = 8;
  c.head_count = 2;
  c.ff_width = 16;
  c.context_length = 16;
  std::vector<std::string> words = {"alpha beta gamma delta epsilon zeta eta theta"};
  c.vocabulary = Vocabulary::build(words);
  c.seed = 11;
  return c;
}

struct Batch {
  std::vector<std::vector<int>> tokens;
  std::vector<std::vector<int>> targets;
  std::vector<std::vector<std::uint8_t>> masks;
  std::vector<std::array<double, 4>> teacher;
};

Batch micro_batch(int vocab) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> tok(Vocabulary::kSpecialCount, vocab - 1);
  Batch b;
  for (int i = 0; i < 4; ++i) {
    const int len = 6 + i;
    std::vector<int> t, y;
    std::vector<std::uint8_t> m;
    for (int j = 0; j < len; ++j) {
      t.push_back(tok(rng));
      y.push_back(tok(rng));
      m.push_back(j >= len / 2);
    }
    b.tokens.push_back(t);
    b.targets.push_back(y);
    b.masks.push_back(m);
    std::array<double, 4> p{0.1 + 0.1 * i, 0.2, 0.3, 0.0};
    p[3] = 1.0 - p[0] - p[1] - p[2];
    b.teacher.push_back(p);
  }
  return b;
}

// Mean masked CE plus a label-distribution KL term; optionally accumulates gradients.
double batch_loss(const ModelView<double>& view, const Batch& b, GradientSink<double>* sink) {
  double total = 0.0;
  const double inv_b = 1.0 / static_cast<double>(b.tokens.size());
  for (size_t i = 0; i < b.tokens.size(); ++i) {
    ForwardCache<double> cache;
    forward(view, b.tokens[i], cache);
    std::vector<int> rows(b.tokens[i].size());
    for (size_t r = 0; r < rows.size(); ++r) rows[r] = static_cast<int>(r);
    const Mat<double> logits = vocab_logits(view, cache, rows);
    auto ce = masked_cross_entropy(logits, b.targets[i], b.masks[i]);
    total += ce.loss * inv_b;

    const int last = static_cast<int>(rows.size()) - 1;
    auto scores = label_scores(view, cache, last);
    double mx = *std::max_element(scores.begin(), scores.end()), z = 0.0;
    std::array<double, 4> q{};
    for (size_t l = 0; l < 4; ++l) z += q[l] = std::exp(scores[l] - mx);
    double kl = 0.0;
    std::array<double, 4> d_scores{};
    for (size_t l = 0; l < 4; ++l) {
      q[l] /= z;
      kl += b.teacher[i][l] * (std::log(b.teacher[i][l]) - std::log(q[l]));
      d_scores[l] = (q[l] - b.teacher[i][l]) * inv_b;
    }
    total += kl * inv_b;
    if (sink) {
      Mat<double> d_hidden = Mat<double>::Zero(static_cast<Eigen::Index>(rows.size()), view.config().model_width);
      Mat<double> d_logits = ce.d_logits * inv_b;
      accumulate_vocab_grad(view, cache, rows, d_logits, d_hidden, *sink);
      accumulate_label_grad(view, cache, last, d_scores, d_hidden, *sink);
      backward(view, cache, d_hidden, *sink);
    }
  }
  return total;
}

double relative_error(double a, double b) { return std::abs(a - b) / std::max({1e-6, std::abs(a), std::abs(b)}); }

}  // namespace

TEST_CASE("base-weight gradients match central differences") {
  auto model = Transformer<double>::init(micro_config());
  const auto batch = micro_batch(model.config.vocabulary.size());
  auto grads = model.params.zeros_like();
  GradientSink<double> sink{&grads, nullptr};
  batch_loss(ModelView<double>(model), batch, &sink);

  std::mt19937_64 rng(2);
  const double h = 1e-5;
  double worst = 0.0;
  for (size_t p = 0; p < model.params.size(); ++p) {
    auto& w = model.params[p];
    for (int k = 0; k < 3; ++k) {
      const Eigen::Index idx = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(w.size()));
      const double saved = w.data()[idx];
      w.data()[idx] = saved + h;
      const double up = batch_loss(ModelView<double>(model), batch, nullptr);
      w.data()[idx] = saved - h;
      const double down = batch_loss(ModelView<double>(model), batch, nullptr);
      w.data()[idx] = saved;
      const double numeric = (up - down) / (2 * h);
      const double analytic = grads[p].data()[idx];
      if (std::abs(numeric) + std::abs(analytic) > 1e-7) worst = std::max(worst, relative_error(numeric, analytic));
    }
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("adapter gradients match central differences with a frozen base") {
  auto model = Transformer<double>::init(micro_config());
  auto frozen = LowRankAdapter<double>::create(model, default_adapter_targets(model.config), 2, 4.0, 3);
  auto adapter = LowRankAdapter<double>::create(model, default_adapter_targets(model.config), 2, 4.0, 4);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 0.1);
  for (auto* a : {&frozen, &adapter})
    for (auto& [_, f] : a->factors) f.up = f.up.unaryExpr([&](double) { return n(rng); });
  const auto batch = micro_batch(model.config.vocabulary.size());

  auto grads = adapter.zeros_like();
  GradientSink<double> sink{nullptr, &grads};
  batch_loss(ModelView<double>(model, {&frozen, &adapter}), batch, &sink);

  const double h = 1e-5;
  double worst = 0.0;
  for (auto& [name, f] : adapter.factors) {
    for (auto* which : {&f.down, &f.up}) {
      Mat<double>& g = which == &f.down ? grads.factors.at(name).down : grads.factors.at(name).up;
      for (Eigen::Index idx = 0; idx < which->size(); idx += 3) {
        const double saved = which->data()[idx];
        which->data()[idx] = saved + h;
        const double up = batch_loss(ModelView<double>(model, {&frozen, &adapter}), batch, nullptr);
        which->data()[idx] = saved - h;
        const double down = batch_loss(ModelView<double>(model, {&frozen, &adapter}), batch, nullptr);
        which->data()[idx] = saved;
        const double numeric = (up - down) / (2 * h);
        if (std::abs(numeric) + std::abs(g.data()[idx]) > 1e-7)
          worst = std::max(worst, relative_error(numeric, g.data()[idx]));
      }
    }
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("incremental decoding reproduces full-sequence logits") {
  auto model = Transformer<double>::init(micro_config());
  ModelView<double> view(model);
  const std::vector<int> tokens = {12, 14, 15, 11, 13, 16};
  ForwardCache<double> cache;
  forward(view, tokens, cache);
  std::vector<int> rows(tokens.size());
  for (size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<int>(i);
  const auto full = vocab_logits(view, cache, rows);
  auto state = make_decode_state(view);
  for (size_t t = 0; t < tokens.size(); ++t) {
    const auto step = decode_step(view, state, tokens[t]);
    CHECK((step - full.row(static_cast<Eigen::Index>(t))).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("merging adapters is exactly the materialized view") {
  auto model = Transformer<float>::init(micro_config());
  auto adapter = LowRankAdapter<float>::create(model, default_adapter_targets(model.config), 2, 4.0, 3);
  for (auto& [_, f] : adapter.factors) f.up.setConstant(0.25f);
  ModelView<float> view(model, {&adapter});
  const auto merged = merge_adapters(model, {&adapter});
  for (size_t i = 0; i < model.params.size(); ++i) CHECK(merged.params[i] == view.weight(i));
}

TEST_CASE("a fresh adapter leaves outputs unchanged") {
  auto model = Transformer<float>::init(micro_config());
  auto adapter = LowRankAdapter<float>::create(model, default_adapter_targets(model.config), 2, 4.0, 3);
  ForwardCache<float> a, b;
  const std::vector<int> tokens = {12, 13, 14};
  forward(ModelView<float>(model), tokens, a);
  forward(ModelView<float>(model, {&adapter}), tokens, b);
  CHECK(a.hidden == b.hidden);
}

TEST_CASE("adapter creation rejects unknown targets") {
  auto model = Transformer<float>::init(micro_config());
  try {
    LowRankAdapter<float>::create(model, {"blocks.9.attn.query"}, 2, 4.0, 1);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == errc::kUnknownTarget);
  }
}
