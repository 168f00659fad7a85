// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "lab.hpp"
#include "tal/agents.hpp"
#include "tal/checkpoint.hpp"
#include "tal/error.hpp"
#include "tal/lm.hpp"
#include "tal/training.hpp"

using namespace tal;

namespace {

struct Memorized {
  Corpus corpus;
  Transformer<float> model;
  std::vector<EpochRecord> log;
};

// 50 items trained on directly until memorized.
const Memorized& memorized() {
  static const Memorized m = [] {
    Memorized out;
    out.corpus = generate_synthetic_corpus({{"Functions", 20}, {"Loops", 15}, {"Strings", 15}}, 8);
    ModelConfig mc;
    mc.layer_count = 2;
    mc.model_width = 32;
    mc.head_count = 2;
    mc.ff_width = 64;
    mc.context_length = 160;
    const Corpus* corpora[] = {&out.corpus};
    mc.vocabulary = build_vocabulary(corpora);
    mc.seed = 2;
    PretrainConfig pc;
    pc.epochs = 60;
    pc.batch_size = 8;
    pc.adam.learning_rate = 3e-3;
    pc.seed = 2;
    auto r = pretrain_base(out.corpus, mc, pc);
    out.model = std::move(r.model);
    out.log = std::move(r.training_log);
    return out;
  }();
  return m;
}

}  // namespace

TEST_CASE("option distributions are normalized") {
  const auto& lab = lab::toy_lab();
  const ModelView<float> view(lab.base);
  for (size_t i = 0; i < 10; ++i) {
    const auto p = option_distribution(view, lab.corpus.items()[i]);
    CHECK(std::accumulate(p.begin(), p.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-9));
    for (double v : p) CHECK(v >= 0.0);
  }
}

TEST_CASE("a uniform-logit stub gives 0.25 per label") {
  const auto& lab = lab::toy_lab();
  const auto stub = Transformer<float>::allocate(lab.model_config);
  const ModelView<float> view(stub);
  const auto p = option_distribution(view, lab.corpus.items()[0]);
  for (double v : p) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(predict_label(view, lab.corpus.items()[0]) == 'A');
}

TEST_CASE("argmax picks the largest label and breaks ties toward A") {
  CHECK(argmax_label({0.1, 0.6, 0.2, 0.1}) == 'B');
  CHECK(argmax_label({0.4, 0.4, 0.1, 0.1}) == 'A');
  CHECK(argmax_label({0.1, 0.2, 0.35, 0.35}) == 'C');
}

TEST_CASE("a zero-initialized adapter leaves the distribution unchanged") {
  const auto& lab = lab::toy_lab();
  const auto zero = LowRankAdapter<float>::create(lab.base, default_adapter_targets(lab.model_config), 8, 32.0, 3);
  const ModelView<float> plain(lab.base);
  const ModelView<float> adapted(lab.base, {&zero});
  for (size_t i = 0; i < 20; ++i) {
    const auto& item = lab.corpus.items()[i];
    CHECK(option_distribution(plain, item) == option_distribution(adapted, item));
  }
}

TEST_CASE("rank 8 and alpha 32 scale the delta by 4") {
  const auto& lab = lab::toy_lab();
  auto adapter = LowRankAdapter<float>::create(lab.base, default_adapter_targets(lab.model_config), 8, 32.0, 3);
  CHECK(adapter.scale() == 4.0f);
  auto& f = adapter.factors.begin()->second;
  f.up.setRandom();
  const Mat<float> expected = 4.0f * f.down * f.up;
  CHECK((adapter.delta(adapter.factors.begin()->first) - expected).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("adapter targets are the query and value projections") {
  const auto targets = default_adapter_targets(lab::toy_lab().model_config);
  CHECK(targets.size() == 4);
  for (const auto& t : targets) CHECK((t.find("query") != std::string::npos || t.find("value") != std::string::npos));
}

TEST_CASE("merging matches the applied view within 1e-5 on 20 items") {
  const auto& lab = lab::toy_lab();
  const ModelView<float> applied(lab.base, {&lab.unlearned50});
  const auto merged = merge_adapters(lab.base, {&lab.unlearned50});
  const ModelView<float> folded(merged);
  double worst = 0.0;
  for (size_t i = 0; i < 20; ++i) {
    const auto prompt = encode_prompt(lab.model_config.vocabulary, lab.corpus.items()[i]);
    ForwardCache<float> a, b;
    forward(applied, prompt, a);
    forward(folded, prompt, b);
    std::vector<int> rows(prompt.size());
    std::iota(rows.begin(), rows.end(), 0);
    const Mat<float> la = vocab_logits(applied, a, rows), lb = vocab_logits(folded, b, rows);
    worst = std::max(worst, static_cast<double>((la - lb).cwiseAbs().maxCoeff()));
  }
  CHECK(worst <= 1e-5);
}

TEST_CASE("adapters referencing unknown or misshapen targets are rejected") {
  const auto& lab = lab::toy_lab();
  auto bad = lab.unlearned50;
  bad.factors["no.such.weight"] = bad.factors.begin()->second;
  CHECK_THROWS_AS(ModelView<float>(lab.base, {&bad}), Error);
  auto wrong = lab.unlearned50;
  wrong.factors.begin()->second.down = Mat<float>::Zero(3, 8);
  try {
    wrong.check_compatible(lab.base);
    FAIL("expected a shape mismatch");
  } catch (const Error& e) {
    CHECK(e.code() == errc::kShapeMismatch);
  }
}

TEST_CASE("explanation generation rejects a zero budget and is deterministic") {
  const auto& lab = lab::toy_lab();
  const ModelView<float> view(lab.base);
  const auto& item = lab.corpus.items()[3];
  CHECK_THROWS_AS(generate_explanation(view, item, 'B', 0), Error);
  const auto a = generate_explanation(view, item, 'B', 12);
  const auto b = generate_explanation(view, item, 'B', 12);
  CHECK(a == b);
  CHECK(split_words(a).size() <= 12);
  CHECK_THROWS_AS(generate_explanation(view, item, 'E', 12), Error);
}

TEST_CASE("pretraining is deterministic for a fixed seed") {
  const Corpus c = generate_synthetic_corpus({{"Sets", 8}}, 1);
  ModelConfig mc = lab::toy_lab().model_config;
  mc.seed = 4;
  PretrainConfig pc;
  pc.epochs = 2;
  pc.seed = 4;
  const auto a = pretrain_base(c, mc, pc);
  const auto b = pretrain_base(c, mc, pc);
  CHECK(a.training_log == b.training_log);
  CHECK(a.training_log.size() == 2);
}

TEST_CASE("a 50-item toy corpus is memorized with its labels and explanations") {
  const auto& m = memorized();
  const ModelView<float> view(m.model);
  int correct = 0;
  double overlap = 0.0;
  for (const auto& item : m.corpus.items()) {
    correct += predict_label(view, item) == item.answer;
    overlap += token_f1(generate_explanation(view, item, item.answer, 40), item.explanation);
  }
  const double n = static_cast<double>(m.corpus.size());
  CHECK(correct / n >= 0.9);
  CHECK(overlap / n >= 0.5);
  CHECK(m.log.back().loss < m.log.front().loss);
}

TEST_CASE("checkpoints and adapters round-trip through disk") {
  const auto& lab = lab::toy_lab();
  lab::TempDir dir("ckpt");
  save_model(lab.base, dir.path() / "model");
  const auto loaded = load_model(dir.path() / "model");
  for (size_t i = 0; i < lab.base.params.size(); ++i) CHECK(loaded.params[i] == lab.base.params[i]);
  CHECK(loaded.config.vocabulary.tokens() == lab.base.config.vocabulary.tokens());

  save_adapter(lab.unlearned50, dir.path() / "adapter");
  const auto adapter = load_adapter(dir.path() / "adapter", loaded);
  CHECK(adapter_fingerprint(adapter) == adapter_fingerprint(lab.unlearned50));
  CHECK(adapter.rank == 8);
  CHECK(adapter.alpha == 32.0);
}
