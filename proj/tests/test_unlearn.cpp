// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "lab.hpp"
#include "tal/error.hpp"
#include "tal/unlearn.hpp"

using namespace tal;
namespace fs = std::filesystem;

namespace {

// Independent KL oracle, no clamping.
double kl_oracle(const std::array<double, 4>& q, const std::array<double, 4>& p) {
  double s = 0.0;
  for (size_t i = 0; i < 4; ++i)
    if (q[i] > 0.0) s += q[i] * std::log(q[i] / p[i]);
  return s;
}

std::array<double, 4> random_distribution(std::mt19937_64& rng, bool allow_zero) {
  std::uniform_real_distribution<double> u(0.01, 1.0);
  std::array<double, 4> p{};
  double z = 0.0;
  for (auto& v : p) z += v = u(rng);
  for (auto& v : p) v /= z;
  if (allow_zero) {
    p[rng() % 4] = 0.0;
    z = p[0] + p[1] + p[2] + p[3];
    for (auto& v : p) v /= z;
  }
  return p;
}

TeacherDistribution as_teacher(const std::array<double, 4>& q) { return {"x", q}; }

}  // namespace

TEST_CASE("teacher for correct B with three alternatives") {
  const auto t = build_teacher(lab::sample_item("q", 'B'), 3);
  CHECK(t.item_id == "q");
  CHECK(t.probabilities[0] == doctest::Approx(1.0 / 3));
  CHECK(t.probabilities[1] == 0.0);
  CHECK(t.probabilities[2] == doctest::Approx(1.0 / 3));
  CHECK(t.probabilities[3] == doctest::Approx(1.0 / 3));
}

TEST_CASE("teacher for correct A with one alternative puts all mass on B") {
  const auto t = build_teacher(lab::sample_item("q", 'A'), 1);
  CHECK(t.probabilities == OptionDistribution{0.0, 1.0, 0.0, 0.0});
}

TEST_CASE("every teacher has zero mass on the correct label and sums to one") {
  for (char answer : {'A', 'B', 'C', 'D'}) {
    for (int n = 1; n <= 3; ++n) {
      const auto t = build_teacher(lab::sample_item("q", answer), n);
      CHECK(t.probabilities[static_cast<size_t>(label_index(answer))] == 0.0);
      CHECK(t.probabilities[0] + t.probabilities[1] + t.probabilities[2] + t.probabilities[3] ==
            doctest::Approx(1.0).epsilon(1e-15));
    }
  }
  CHECK_THROWS_AS(build_teacher(lab::sample_item(), 0), Error);
  CHECK_THROWS_AS(build_teacher(lab::sample_item(), 4), Error);
}

TEST_CASE("forget loss is zero at the teacher and ln(4/3) against uniform") {
  const OptionDistribution q{1.0 / 3, 0.0, 1.0 / 3, 1.0 / 3};
  CHECK(forget_loss(q, as_teacher(q)) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(forget_loss({0.25, 0.25, 0.25, 0.25}, as_teacher(q)) == doctest::Approx(std::log(4.0 / 3.0)).epsilon(1e-12));
  CHECK(std::log(4.0 / 3.0) == doctest::Approx(0.28768).epsilon(1e-5));
}

TEST_CASE("forget loss grows as the model concentrates on the correct label") {
  const auto t = build_teacher(lab::sample_item("q", 'B'), 3);
  double prev = -1.0;
  for (double pc : {0.25, 0.5, 0.9}) {
    const double rest = (1.0 - pc) / 3.0;
    const double loss = forget_loss({rest, pc, rest, rest}, t);
    CHECK(loss > prev);
    prev = loss;
  }
}

TEST_CASE("forget loss equals the brute-force KL sum on 100 random pairs") {
  std::mt19937_64 rng(42);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const auto q = random_distribution(rng, i % 2 == 0);
    const auto p = random_distribution(rng, false);
    const double got = forget_loss(p, as_teacher(q));
    worst = std::max(worst, std::abs(got - kl_oracle(q, p)));
    CHECK(got >= 0.0);
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("objective combines the weighted means of both terms") {
  CHECK(0.1 * 0.3 + 1.0 * 0.2 == doctest::Approx(0.23).epsilon(1e-15));

  const auto& lab = lab::toy_lab();
  const ModelView<float> view(lab.base);
  std::vector<McqItem> forget, retain;
  for (const auto& id : forget_subset(lab.manifest, 10)) forget.push_back(lab.corpus.at(id));
  for (const auto& id : lab.manifest.retain) {
    retain.push_back(lab.corpus.at(id));
    if (retain.size() == 6) break;
  }
  UnlearnConfig cfg;
  cfg.retain_explanation = false;
  const auto terms = unlearn_objective(view, forget, retain, cfg);

  double kl = 0.0, ce = 0.0;
  for (const auto& item : forget) kl += forget_loss(option_distribution(view, item), build_teacher(item, 3));
  for (const auto& item : retain)
    ce -= std::log(option_distribution(view, item)[static_cast<size_t>(label_index(item.answer))]);
  kl /= static_cast<double>(forget.size());
  ce /= static_cast<double>(retain.size());
  CHECK(terms.forget_loss == doctest::Approx(kl).epsilon(1e-5));
  CHECK(terms.retain_loss == doctest::Approx(ce).epsilon(1e-5));
  CHECK(terms.objective == doctest::Approx(0.1 * kl + ce).epsilon(1e-5));

  cfg.retention_strength = 0.0;
  const auto only_forget = unlearn_objective(view, forget, retain, cfg);
  CHECK(only_forget.objective == doctest::Approx(0.1 * only_forget.forget_loss).epsilon(1e-12));

  cfg.retention_strength = 1.0;
  cfg.retain_explanation = true;
  const auto with_expl = unlearn_objective(view, forget, retain, cfg);
  CHECK(with_expl.forget_loss == doctest::Approx(terms.forget_loss).epsilon(1e-12));
  CHECK(with_expl.retain_loss > terms.retain_loss);  // adds a non-negative explanation term
}

TEST_CASE("objective with an empty forget batch fails") {
  const auto& lab = lab::toy_lab();
  const ModelView<float> view(lab.base);
  std::vector<McqItem> none, retain = {lab.corpus.items()[0]};
  CHECK_THROWS_AS(unlearn_objective(view, none, retain, UnlearnConfig{}), Error);
}

TEST_CASE("unlearn objective gradients match central differences in double") {
  const auto& lab = lab::toy_lab();
  ModelConfig mc;
  mc.layer_count = 2;
  mc.model_width = 8;
  mc.head_count = 2;
  mc.ff_width = 16;
  mc.context_length = 160;
  mc.vocabulary = lab.model_config.vocabulary;
  mc.seed = 5;
  const auto base = Transformer<double>::init(mc);
  auto adapter = LowRankAdapter<double>::create(base, default_adapter_targets(mc), 2, 4.0, 7);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n01(0.0, 0.3);
  for (auto& [_, f] : adapter.factors)
    for (Eigen::Index i = 0; i < f.up.size(); ++i) f.up.data()[i] = n01(rng);

  std::vector<UnlearnExample> forget, retain;
  for (size_t i = 0; i < 2; ++i) forget.push_back(make_unlearn_example(mc.vocabulary, lab.corpus.items()[i], 3, 160));
  for (size_t i = 2; i < 4; ++i) retain.push_back(make_unlearn_example(mc.vocabulary, lab.corpus.items()[i], 3, 160));
  UnlearnConfig cfg;
  cfg.retention_strength = 0.7;

  for (bool explanation : {false, true}) {
    cfg.retain_explanation = explanation;
    auto grads = adapter.zeros_like();
    GradientSink<double> sink{nullptr, &grads};
    accumulate_unlearn_gradient<double>(ModelView<double>(base, {&adapter}), forget, retain, cfg, sink);

    auto value = [&](const LowRankAdapter<double>& a) {
      return unlearn_objective<double>(ModelView<double>(base, {&a}), forget, retain, cfg).objective;
    };
    double worst = 0.0;
    int checked = 0;
    for (auto& [name, f] : adapter.factors) {
      for (Mat<double>* m : {&f.down, &f.up}) {
        const bool is_down = m == &f.down;
        for (Eigen::Index i = 0; i < m->size(); i += 3) {
          const double saved = m->data()[i];
          const double h = 1e-5;
          m->data()[i] = saved + h;
          const double up = value(adapter);
          m->data()[i] = saved - h;
          const double down = value(adapter);
          m->data()[i] = saved;
          const double numeric = (up - down) / (2 * h);
          const auto& g = grads.factors.at(name);
          const double analytic = (is_down ? g.down : g.up).data()[i];
          const double rel = std::abs(numeric - analytic) / std::max({1e-7, std::abs(numeric), std::abs(analytic)});
          worst = std::max(worst, rel);
          ++checked;
        }
      }
    }
    CHECK(checked > 40);
    CHECK(worst < 1e-3);
  }
}

TEST_CASE("zero epochs leave the adapter delta at zero") {
  const auto& lab = lab::toy_lab();
  UnlearnConfig cfg = lab::toy_unlearn_config();
  cfg.epochs = 0;
  const auto result = run_unlearning(lab.base, lab.corpus, lab.manifest, 10, cfg);
  CHECK(result.metrics.empty());
  for (const auto& [name, _] : result.adapter.factors) CHECK(result.adapter.delta(name).cwiseAbs().maxCoeff() == 0.0f);
  const ModelView<float> plain(lab.base), adapted(lab.base, {&result.adapter});
  CHECK(option_distribution(plain, lab.corpus.items()[0]) == option_distribution(adapted, lab.corpus.items()[0]));
}

TEST_CASE("unlearning is deterministic, leaves the base alone and writes its run directory") {
  const auto& lab = lab::toy_lab();
  lab::TempDir dir("unlearn");
  UnlearnConfig cfg = lab::toy_unlearn_config();
  cfg.epochs = 2;
  const auto before = lab.base.params[0];
  const auto a = run_unlearning(lab.base, lab.corpus, lab.manifest, 20, cfg, dir.path() / "run");
  const auto b = run_unlearning(lab.base, lab.corpus, lab.manifest, 20, cfg);
  CHECK(lab.base.params[0] == before);
  REQUIRE(a.metrics.size() == 2);
  for (size_t i = 0; i < 2; ++i) CHECK(a.metrics[i].objective == b.metrics[i].objective);
  for (const auto& [name, f] : a.adapter.factors) CHECK(f.up == b.adapter.factors.at(name).up);

  CHECK(fs::exists(dir.path() / "run" / "config.json"));
  CHECK(fs::exists(dir.path() / "run" / "adapter" / "adapter.json"));
  std::ifstream csv(dir.path() / "run" / "metrics.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "epoch,forget_loss,retain_loss,objective");
  int rows = 0;
  for (std::string line; std::getline(csv, line);) rows += !line.empty();
  CHECK(rows == 2);
  std::ifstream cfg_in(dir.path() / "run" / "config.json");
  const auto snapshot = nlohmann::json::parse(cfg_in);
  CHECK(snapshot.at("ratio") == 20);
  CHECK(unlearn_config_from_json(snapshot).epochs == 2);
}

TEST_CASE("unlearning at ratio 50 lowers forget-item accuracy") {
  const auto& lab = lab::toy_lab();
  const ModelView<float> base(lab.base), unlearned(lab.base, {&lab.unlearned50});
  int before = 0, after = 0;
  for (const auto& id : lab.manifest.forget) {
    const auto& item = lab.corpus.at(id);
    before += predict_label(base, item) == item.answer;
    after += predict_label(unlearned, item) == item.answer;
  }
  CHECK(after < before);
}

TEST_CASE("invalid unlearning configs are rejected") {
  UnlearnConfig cfg;
  cfg.n_alternatives = 4;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = UnlearnConfig{};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  const auto& lab = lab::toy_lab();
  CHECK_THROWS_AS(run_unlearning(lab.base, lab.corpus, lab.manifest, 15, lab::toy_unlearn_config()), Error);
}
