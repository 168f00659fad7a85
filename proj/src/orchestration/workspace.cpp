// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <random>

#include "tal/checkpoint.hpp"
#include "tal/error.hpp"
#include "tal/orchestration.hpp"

namespace tal {

namespace fs = std::filesystem;
using nlohmann::json;

RunConfig::RunConfig() {
  model.layer_count = 2;
  model.model_width = 64;
  model.head_count = 4;
  model.ff_width = 256;
  model.context_length = 160;
  pretrain.epochs = 14;
  unlearn.learning_rate = 1e-3;
  agent.update_steps = 2;
  agent.label_weight = 8.0;
}

void RunConfig::validate() const {
  require(!seeds.empty(), "seed list is empty");
  require(!shape.empty() || corpus_path.has_value(), "either a corpus path or a synthetic shape is required");
  require(pretraining_variants >= 1, "pretraining_variants must be at least 1");
  require(curriculum_items >= 0, "curriculum_items must be non-negative");
  require(!output_root.empty(), "output root is empty");
  split.validate();
  unlearn.validate();
  relearn.validate();
  agent.validate();
  require(model.layer_count > 0 && model.model_width > 0 && model.head_count > 0 && model.ff_width > 0 &&
              model.context_length > 0 && model.model_width % model.head_count == 0,
          "invalid model shape");
}

namespace {

json pretrain_to_json(const PretrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.adam.learning_rate},
          {"beta1", c.adam.beta1},
          {"beta2", c.adam.beta2},
          {"clip_norm", c.adam.clip_norm},
          {"final_lr_fraction", c.final_lr_fraction},
          {"label_weight", c.label_weight},
          {"label_only", c.span == AnswerSpan::label_only}};
}

void pretrain_from_json(const json& j, PretrainConfig& c) {
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.adam.learning_rate = j.value("learning_rate", c.adam.learning_rate);
  c.adam.beta1 = j.value("beta1", c.adam.beta1);
  c.adam.beta2 = j.value("beta2", c.adam.beta2);
  c.adam.clip_norm = j.value("clip_norm", c.adam.clip_norm);
  c.final_lr_fraction = j.value("final_lr_fraction", c.final_lr_fraction);
  c.label_weight = j.value("label_weight", c.label_weight);
  c.span = j.value("label_only", false) ? AnswerSpan::label_only : AnswerSpan::label_and_explanation;
}

void require_file(const fs::path& path, const std::string& command) {
  if (!fs::exists(path)) fail(errc::kNotFound, "missing " + path.string() + "; run `tal " + command + "` first");
}

std::string seed_name(std::uint64_t seed) { return "seed-" + std::to_string(seed); }
std::string ratio_name(int ratio) { return "ratio-" + std::to_string(ratio); }

}  // namespace

json run_config_to_json(const RunConfig& c) {
  json j;
  j["format_version"] = 1;
  j["corpus_path"] = c.corpus_path ? json(c.corpus_path->string()) : json(nullptr);
  j["shape"] = c.shape;
  j["corpus_seed"] = c.corpus_seed;
  j["pretraining_variants"] = c.pretraining_variants;
  j["split"] = {{"kc_fraction", c.split.kc_fraction},
                {"a_fractions", c.split.a_fractions},
                {"ratios", c.split.ratios},
                {"shuffle_forget_order", c.split.shuffle_forget_order},
                {"seed", c.split_seed}};
  j["model"] = {{"layer_count", c.model.layer_count},
                {"model_width", c.model.model_width},
                {"head_count", c.model.head_count},
                {"ff_width", c.model.ff_width},
                {"context_length", c.model.context_length}};
  j["pretrain"] = pretrain_to_json(c.pretrain);
  j["unlearn"] = unlearn_config_to_json(c.unlearn);
  j["relearn"] = relearn_config_to_json(c.relearn);
  j["agent"] = agent_config_to_json(c.agent);
  j["seeds"] = c.seeds;
  j["curriculum_items"] = c.curriculum_items;
  j["output_root"] = c.output_root.string();
  j["coach_endpoint"] = c.coach_endpoint;
  return j;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  try {
    if (j.contains("corpus_path") && !j.at("corpus_path").is_null()) c.corpus_path = j.at("corpus_path").get<std::string>();
    if (j.contains("shape")) c.shape = j.at("shape").get<std::map<std::string, int>>();
    c.corpus_seed = j.value("corpus_seed", c.corpus_seed);
    c.pretraining_variants = j.value("pretraining_variants", c.pretraining_variants);
    if (j.contains("split")) {
      const auto& s = j.at("split");
      c.split.kc_fraction = s.value("kc_fraction", c.split.kc_fraction);
      if (s.contains("a_fractions")) c.split.a_fractions = s.at("a_fractions").get<std::array<double, 3>>();
      if (s.contains("ratios")) c.split.ratios = s.at("ratios").get<std::vector<int>>();
      c.split.shuffle_forget_order = s.value("shuffle_forget_order", c.split.shuffle_forget_order);
      c.split_seed = s.value("seed", c.split_seed);
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      c.model.layer_count = m.value("layer_count", c.model.layer_count);
      c.model.model_width = m.value("model_width", c.model.model_width);
      c.model.head_count = m.value("head_count", c.model.head_count);
      c.model.ff_width = m.value("ff_width", c.model.ff_width);
      c.model.context_length = m.value("context_length", c.model.context_length);
    }
    if (j.contains("pretrain")) pretrain_from_json(j.at("pretrain"), c.pretrain);
    if (j.contains("unlearn")) {
      json merged = unlearn_config_to_json(c.unlearn);
      merged.update(j.at("unlearn"));
      c.unlearn = unlearn_config_from_json(merged);
    }
    if (j.contains("relearn")) {
      json merged = relearn_config_to_json(c.relearn);
      merged.update(j.at("relearn"));
      c.relearn = relearn_config_from_json(merged);
    }
    if (j.contains("agent")) {
      json merged = agent_config_to_json(c.agent);
      merged.update(j.at("agent"));
      c.agent = agent_config_from_json(merged);
    }
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    c.curriculum_items = j.value("curriculum_items", c.curriculum_items);
    if (j.contains("output_root")) c.output_root = j.at("output_root").get<std::string>();
    c.coach_endpoint = j.value("coach_endpoint", c.coach_endpoint);
  } catch (const json::exception& e) {
    fail(errc::kMalformed, std::string("run config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(errc::kNotFound, "missing config " + path.string());
  try {
    return run_config_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    fail(errc::kMalformed, path.string() + ": " + e.what());
  }
}

void apply_env_overrides(RunConfig& config) {
  if (const char* root = std::getenv("TAL_OUTPUT_ROOT"); root != nullptr && *root != '\0') config.output_root = root;
  if (const char* coach = std::getenv("TAL_COACH_ENDPOINT"); coach != nullptr) config.coach_endpoint = coach;
}

std::vector<std::string> coach_vocabulary() {
  return {"You chose ( ) , which is correct , but the explanation is incomplete .",
          ", which is incorrect . The correct answer is A B C D : . You claimed :"};
}

std::string default_run_id() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "run-%Y%m%dT%H%M%S", &tm);
  return buf;
}

Workspace::Workspace(RunConfig config) : config_(std::move(config)) { config_.validate(); }

fs::path Workspace::model_dir(std::uint64_t seed) const { return root() / "models" / seed_name(seed); }
fs::path Workspace::unlearn_dir(std::uint64_t seed, int ratio) const {
  return root() / "unlearn" / seed_name(seed) / ratio_name(ratio);
}
fs::path Workspace::relearn_dir(std::uint64_t seed, int ratio) const {
  return root() / "relearn" / seed_name(seed) / ratio_name(ratio);
}

void Workspace::save_config_snapshot() const {
  fs::create_directories(root());
  std::ofstream out(root() / "config.json");
  if (!out) fail(errc::kIo, "cannot write " + (root() / "config.json").string());
  out << run_config_to_json(config_).dump(2) << "\n";
}

void Workspace::generate_corpora() const {
  Corpus corpus;
  Corpus pretraining;
  if (config_.corpus_path) {
    // Ingested corpora have no fact structure to paraphrase; the base trains on the corpus itself.
    corpus = dedup_corpus(load_corpus(*config_.corpus_path));
    pretraining = corpus;
  } else {
    corpus = generate_synthetic_corpus(config_.shape, config_.corpus_seed);
    pretraining = generate_pretraining_corpus(config_.shape, config_.corpus_seed, config_.pretraining_variants);
  }
  save_corpus(corpus, corpus_path());
  save_corpus(pretraining, pretraining_path());
  corpus_ = std::move(corpus);
  pretraining_ = std::move(pretraining);
}

const Corpus& Workspace::corpus() const {
  if (!corpus_) {
    require_file(corpus_path(), "gen-corpus");
    corpus_ = load_corpus(corpus_path());
  }
  return *corpus_;
}

const Corpus& Workspace::pretraining_corpus() const {
  if (!pretraining_) {
    require_file(pretraining_path(), "gen-corpus");
    pretraining_ = load_corpus(pretraining_path());
  }
  return *pretraining_;
}

void Workspace::make_split() const {
  auto m = split_corpus(corpus(), config_.split, config_.split_seed);
  save_manifest(m, manifest_path());
  manifest_ = std::move(m);
}

const SplitManifest& Workspace::manifest() const {
  if (!manifest_) {
    require_file(manifest_path(), "split");
    manifest_ = load_manifest(manifest_path());
    if (manifest_->corpus_hash != corpus_hash(corpus()))
      fail(errc::kConflict, "split manifest does not match the corpus; run `tal split` again");
  }
  return *manifest_;
}

ModelConfig Workspace::model_config() const {
  ModelConfig mc = config_.model;
  const Corpus* corpora[] = {&corpus(), &pretraining_corpus()};
  const auto extra = coach_vocabulary();
  mc.vocabulary = build_vocabulary(corpora, extra);
  return mc;
}

void Workspace::pretrain(std::uint64_t seed) const {
  ModelConfig mc = model_config();
  mc.seed = seed;
  PretrainConfig pc = config_.pretrain;
  pc.seed = seed;
  if (logger_)
    pc.on_epoch = [&](int epoch, double loss, double acc) {
      logger_("pretrain seed " + std::to_string(seed) + " epoch " + std::to_string(epoch) + " loss " +
              std::to_string(loss) + " label accuracy " + std::to_string(acc));
    };
  const auto result = pretrain_base(pretraining_corpus(), mc, pc);
  save_model(result.model, model_dir(seed));
  save_training_log(result.training_log, model_dir(seed) / "training_log.json");
}

Transformer<float> Workspace::base(std::uint64_t seed) const {
  require_file(model_dir(seed) / "model.json", "--seeds " + std::to_string(seed) + " pretrain");
  return load_model(model_dir(seed));
}

void Workspace::unlearn(std::uint64_t seed, int ratio) const {
  const auto model = base(seed);
  UnlearnConfig uc = config_.unlearn;
  uc.seed = seed * 1000 + static_cast<std::uint64_t>(ratio);
  run_unlearning(model, corpus(), manifest(), ratio, uc, unlearn_dir(seed, ratio), [&](const UnlearnEpoch& e) {
    if (logger_)
      logger_("unlearn seed " + std::to_string(seed) + " ratio " + std::to_string(ratio) + " epoch " +
              std::to_string(e.epoch) + " objective " + std::to_string(e.objective));
  });
}

LowRankAdapter<float> Workspace::unlearned(std::uint64_t seed, int ratio, const Transformer<float>& base) const {
  require_file(unlearn_dir(seed, ratio) / "adapter" / "adapter.json",
               "--seeds " + std::to_string(seed) + " --ratios " + std::to_string(ratio) + " unlearn");
  return load_adapter(unlearn_dir(seed, ratio) / "adapter", base);
}

void Workspace::relearn(std::uint64_t seed, int ratio) const {
  const auto model = base(seed);
  const auto adapter = unlearned(seed, ratio, model);
  std::ifstream in(unlearn_dir(seed, ratio) / "config.json");
  const int trained_ratio = json::parse(in).at("ratio");
  RelearnConfig rc = config_.relearn;
  rc.seed = seed * 1000 + static_cast<std::uint64_t>(ratio);
  run_sft_relearn(model, adapter, trained_ratio, corpus(), manifest(), ratio, rc, relearn_dir(seed, ratio),
                  [&](int epoch, double loss) {
                    if (logger_)
                      logger_("relearn seed " + std::to_string(seed) + " ratio " + std::to_string(ratio) + " epoch " +
                              std::to_string(epoch) + " loss " + std::to_string(loss));
                  });
}

std::vector<LowRankAdapter<float>> Workspace::relearned(std::uint64_t seed, int ratio,
                                                       const Transformer<float>& base) const {
  const fs::path dir = relearn_dir(seed, ratio);
  require_file(dir / "adapter" / "adapter.json",
               "--seeds " + std::to_string(seed) + " --ratios " + std::to_string(ratio) + " relearn");
  std::ifstream in(dir / "config.json");
  const bool stacked = json::parse(in).value("stack_adapter", false);
  std::vector<LowRankAdapter<float>> out;
  if (stacked) out.push_back(unlearned(seed, ratio, base));
  out.push_back(load_adapter(dir / "adapter", base));
  return out;
}

std::unique_ptr<Coach> Workspace::make_coach() const {
  if (config_.coach_endpoint.empty()) return std::make_unique<OracleCoach>();
  return std::make_unique<ExternalCoach>(config_.coach_endpoint);
}

CurriculumResult Workspace::teach(std::uint64_t seed, int ratio, const std::string& run_id, int limit) const {
  const auto model = base(seed);
  const auto adapter = unlearned(seed, ratio, model);
  AgentConfig ac = config_.agent;
  ac.seed = seed * 1000 + static_cast<std::uint64_t>(ratio);
  std::vector<McqItem> items;
  for (const auto& id : targeted_test_ids(manifest(), corpus(), ratio)) items.push_back(corpus().at(id));
  std::mt19937_64 rng(ac.seed);
  std::shuffle(items.begin(), items.end(), rng);
  if (limit > 0 && items.size() > static_cast<size_t>(limit)) items.resize(static_cast<size_t>(limit));
  require(!items.empty(), "no targeted items for ratio " + std::to_string(ratio));

  const fs::path dir = teach_dir(run_id);
  fs::create_directories(dir);
  json snapshot = run_config_to_json(config_);
  snapshot["teach"] = {{"seed", seed}, {"ratio", ratio}, {"items", limit}, {"agent_seed", ac.seed},
                       {"source_adapter", adapter_fingerprint(adapter)}};
  std::ofstream(dir / "config.json") << snapshot.dump(2) << "\n";

  Student student(model, adapter, ac);
  auto coach = make_coach();
  IdentityRewriter rewriter;
  std::ofstream log(dir / "dialogue.jsonl");
  DialogueLog dialogue(log);
  auto result = run_curriculum(student, items, *coach, rewriter, run_id,
                               [&](const TeachingSession& s, const DialogueTurn& t) { dialogue.append(s, t); });
  std::ofstream sessions(dir / "sessions.jsonl");
  for (size_t i = 0; i < result.sessions.size(); ++i)
    sessions << session_summary(result.sessions[i], items[i]).dump() << "\n";
  std::ofstream traj(dir / "trajectory.csv");
  traj << "index,item_id,first_score,rolling,cumulative,outcome\n";
  for (size_t i = 0; i < items.size(); ++i)
    traj << i + 1 << "," << items[i].id << "," << result.first_attempt_scores[i] << "," << result.rolling[i] << ","
         << result.cumulative[i] << "," << to_string(result.sessions[i].outcome) << "\n";
  save_adapter(student.adapter(), dir / "adapter");
  return result;
}

GridConfig Workspace::grid_config() const {
  GridConfig g;
  g.seeds = config_.seeds;
  g.ratios = config_.split.ratios;
  g.model = model_config();
  g.pretrain = config_.pretrain;
  g.unlearn = config_.unlearn;
  g.relearn = config_.relearn;
  g.agent = config_.agent;
  g.curriculum_items = config_.curriculum_items;
  g.coach_endpoint = config_.coach_endpoint;
  return g;
}

std::vector<std::string> Workspace::grid_runs() const {
  std::vector<std::string> out;
  if (!fs::exists(root() / "grid")) return out;
  for (const auto& e : fs::directory_iterator(root() / "grid"))
    if (fs::exists(e.path() / "report" / "report.json")) out.push_back(e.path().filename().string());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::uint64_t> Workspace::trained_seeds() const {
  std::vector<std::uint64_t> out;
  if (!fs::exists(root() / "models")) return out;
  for (const auto& e : fs::directory_iterator(root() / "models")) {
    const auto name = e.path().filename().string();
    if (name.rfind("seed-", 0) == 0 && fs::exists(e.path() / "model.json"))
      out.push_back(std::stoull(name.substr(5)));
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<int> Workspace::unlearned_ratios(std::uint64_t seed) const {
  std::vector<int> out;
  for (int ratio : config_.split.ratios)
    if (fs::exists(unlearn_dir(seed, ratio) / "adapter" / "adapter.json")) out.push_back(ratio);
  return out;
}

}  // namespace tal
