// SPDX-License-Identifier: Apache-2.0
#include "tal/agents.hpp"

#include <httplib.h>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <ctime>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "tal/checkpoint.hpp"
#include "tal/error.hpp"
#include "tal/metrics.hpp"

namespace tal {

namespace {

// NLTK English stop words.
const std::set<std::string>& stop_words() {
  static const std::set<std::string> words = {
      "i",       "me",     "my",      "myself", "we",      "our",     "ours",    "ourselves", "you",    "your",
      "yours",   "yourself", "yourselves", "he", "him",   "his",     "himself", "she",       "her",    "hers",
      "herself", "it",     "its",     "itself", "they",    "them",    "their",   "theirs",    "themselves",
      "what",    "which",  "who",     "whom",   "this",    "that",    "these",   "those",     "am",     "is",
      "are",     "was",    "were",    "be",     "been",    "being",   "have",    "has",       "had",    "having",
      "do",      "does",   "did",     "doing",  "a",       "an",      "the",     "and",       "but",    "if",
      "or",      "because", "as",     "until",  "while",   "of",      "at",      "by",        "for",    "with",
      "about",   "against", "between", "into",  "through", "during",  "before",  "after",     "above",  "below",
      "to",      "from",   "up",      "down",   "in",      "out",     "on",      "off",       "over",   "under",
      "again",   "further", "then",   "once",   "here",    "there",   "when",    "where",     "why",    "how",
      "all",     "any",    "both",    "each",   "few",     "more",    "most",    "other",     "some",   "such",
      "no",      "nor",    "not",     "only",   "own",     "same",    "so",      "than",      "too",    "very",
      "s",       "t",      "can",     "will",   "just",    "don",     "should",  "now"};
  return words;
}

std::string first_words(const std::string& text, size_t count) {
  std::istringstream in(text);
  std::string word, out;
  for (size_t i = 0; i < count && in >> word; ++i) out += (out.empty() ? "" : " ") + word;
  return out;
}

}  // namespace

std::string to_string(Outcome outcome) { return outcome == Outcome::mastered ? "mastered" : "exhausted"; }

void AgentConfig::validate() const {
  require(max_rounds >= 1, "max_rounds must be at least 1");
  require(update_steps >= 0, "update_steps must be non-negative");
  require(learning_rate > 0.0, "learning rate must be positive");
  require(label_weight > 0.0, "label weight must be positive");
  require(explanation_budget >= 1, "explanation budget must be at least 1");
  require(mastery_threshold >= 0.0 && mastery_threshold <= 1.0, "mastery threshold must be in [0, 1]");
}

std::vector<std::string> content_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty() && !stop_words().contains(word)) out.push_back(word);
    word.clear();
  };
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u) || c == '_') {
      word += static_cast<char>(std::tolower(u));
    } else {
      flush();
    }
  }
  flush();
  return out;
}

double token_f1(std::string_view candidate, std::string_view reference) {
  const auto cand = content_tokens(candidate);
  const auto ref = content_tokens(reference);
  if (cand.empty() && ref.empty()) return 1.0;
  if (cand.empty() || ref.empty()) return 0.0;
  std::map<std::string, int> counts;
  for (const auto& w : ref) ++counts[w];
  int overlap = 0;
  for (const auto& w : cand) {
    auto it = counts.find(w);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  if (overlap == 0) return 0.0;
  const double precision = static_cast<double>(overlap) / static_cast<double>(cand.size());
  const double recall = static_cast<double>(overlap) / static_cast<double>(ref.size());
  return 2.0 * precision * recall / (precision + recall);
}

Verdict make_verdict(bool answer_correct, double explanation_score, double mastery_threshold) {
  Verdict v;
  v.answer_correct = answer_correct;
  v.explanation_score = std::clamp(explanation_score, 0.0, 1.0);
  v.combined_score = 0.5 * (answer_correct ? 1.0 : 0.0) + 0.5 * v.explanation_score;
  v.mastery = answer_correct && v.explanation_score >= mastery_threshold;
  return v;
}

Verdict judge_response(const McqItem& item, char label, std::string_view explanation, double mastery_threshold) {
  return make_verdict(label == item.answer, token_f1(explanation, item.explanation), mastery_threshold);
}

Attempt student_attempt(const ModelView<float>& model, const McqItem& item, int budget) {
  auto r = respond(model, item, budget);
  return {r.label, std::move(r.explanation)};
}

std::string OracleCoach::feedback(const McqItem& item, const Verdict& verdict,
                                  std::span<const DialogueTurn> history) {
  require(!history.empty(), "coach needs the turn being coached");
  const auto& last = history.back();
  std::string out;
  if (verdict.answer_correct) {
    out = "You chose " + std::string(1, last.student_label) +
          " , which is correct , but the explanation is incomplete . ";
  } else {
    const auto chosen = item.options.find(last.student_label);
    out = "You chose " + std::string(1, last.student_label);
    if (chosen != item.options.end()) out += " ( " + chosen->second + " )";
    out += " , which is incorrect . The correct answer is " + std::string(1, item.answer) + " : " +
           item.options.at(item.answer) + " . ";
  }
  out += item.explanation;
  const auto claim = first_words(last.student_explanation, 12);
  if (!claim.empty()) out += " You claimed : " + claim;
  return out;
}

ExternalCoach::ExternalCoach(std::string endpoint, int attempts, int timeout_seconds)
    : endpoint_(std::move(endpoint)), attempts_(attempts), timeout_seconds_(timeout_seconds) {
  require(!endpoint_.empty(), "external coach requires an endpoint");
  require(attempts_ >= 1, "external coach needs at least one attempt");
}

std::string ExternalCoach::feedback(const McqItem& item, const Verdict& verdict,
                                    std::span<const DialogueTurn> history) {
  // endpoint: scheme://host[:port][/path]
  const auto scheme_end = endpoint_.find("://");
  const auto path_start = endpoint_.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  const std::string origin = endpoint_.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : endpoint_.substr(path_start);

  nlohmann::json body;
  body["item"] = nlohmann::json::parse(item_to_json_line(item));
  body["verdict"] = {{"answer_correct", verdict.answer_correct},
                     {"explanation_score", verdict.explanation_score},
                     {"combined_score", verdict.combined_score},
                     {"mastery", verdict.mastery}};
  body["history"] = nlohmann::json::array();
  for (const auto& t : history) body["history"].push_back(turn_to_json(t, "", item.id, ""));

  std::string last_error = "no attempt made";
  for (int attempt = 0; attempt < attempts_; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(std::chrono::milliseconds(100 << attempt));
    httplib::Client client(origin);
    client.set_connection_timeout(timeout_seconds_);
    client.set_read_timeout(timeout_seconds_);
    auto res = client.Post(path, body.dump(), "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      last_error = "status " + std::to_string(res->status);
      continue;
    }
    try {
      auto text = nlohmann::json::parse(res->body).at("feedback").get<std::string>();
      if (!text.empty()) return text;
      last_error = "empty feedback";
    } catch (const nlohmann::json::exception& e) {
      last_error = e.what();
    }
  }
  fail(errc::kUnavailable, "external coach at " + endpoint_ + " failed: " + last_error);
}

std::string coach_feedback(Coach& coach, const McqItem& item, const Verdict& verdict,
                           std::span<const DialogueTurn> history) {
  require(!verdict.mastery, "coach feedback is only given without mastery");
  return coach.feedback(item, verdict, history);
}

std::string rewrite_response(const std::string& text) { return text; }

Student::Student(const Transformer<float>& base, const LowRankAdapter<float>& adapter, const AgentConfig& config)
    : base_(&base),
      config_(config),
      adapter_(std::make_unique<LowRankAdapter<float>>(adapter)),
      grads_(std::make_unique<LowRankAdapter<float>>(adapter.zeros_like())) {
  config_.validate();
  adapter_->check_compatible(base);
  adam_ = std::make_unique<Adam>(AdamConfig{config_.learning_rate, 0.9, 0.999, 1e-8, 1.0}, tensor_refs(*adapter_));
  view_ = std::make_unique<ModelView<float>>(base, std::vector<const LowRankAdapter<float>*>{adapter_.get()});
}

Attempt Student::attempt(const McqItem& item) const {
  return student_attempt(*view_, item, config_.explanation_budget);
}

std::string Student::fingerprint() const { return adapter_fingerprint(*adapter_); }

Example Student::training_example(const McqItem& item, const std::string& feedback) const {
  const auto& vocab = base_->config.vocabulary;
  const int limit = base_->config.context_length;
  // Trailing feedback words are dropped until the prompt leaves room for the answer.
  std::string context = feedback;
  auto words = split_words(feedback);
  while (!context.empty() && static_cast<int>(encode_prompt(vocab, item, context).size()) > limit - 16) {
    words.resize(words.size() * 3 / 4);
    context.clear();
    for (const auto& w : words) context += (context.empty() ? "" : " ") + w;
  }
  auto ex = make_example(vocab, item, AnswerSpan::label_and_explanation, limit, context);
  ex.label_weight = config_.label_weight;
  return ex;
}

double Student::sequence_loss(const McqItem& item, const std::string& feedback) const {
  const Example ex = training_example(item, feedback);
  auto scratch = adapter_->zeros_like();
  GradientSink<float> sink{nullptr, &scratch};
  return accumulate_sft_gradient(*view_, std::span<const Example>(&ex, 1), sink).loss;
}

double Student::update(const McqItem& item, const std::string& feedback) {
  require(!feedback.empty(), "feedback must be non-empty");
  const Example ex = training_example(item, feedback);
  GradientSink<float> sink{nullptr, grads_.get()};
  const auto grad_refs = tensor_refs(*grads_);
  double first = 0.0;
  for (int step = 0; step < config_.update_steps; ++step) {
    grads_->set_zero();
    const double loss = accumulate_sft_gradient(*view_, std::span<const Example>(&ex, 1), sink).loss;
    if (step == 0) first = loss;
    adam_->step(grad_refs);
    view_->refresh();
  }
  if (config_.update_steps == 0) first = sequence_loss(item, feedback);
  return first;
}

TeachingSession run_teaching_loop(Student& student, const McqItem& item, Coach& coach, Rewriter& rewriter,
                                  const std::string& session_id, const TurnObserver& observer) {
  const auto& cfg = student.config();
  TeachingSession session;
  session.session_id = session_id;
  session.item_id = item.id;
  session.adapter_before = student.fingerprint();
  for (int round = 1; round <= cfg.max_rounds; ++round) {
    const Attempt a = student.attempt(item);
    DialogueTurn turn;
    turn.round_index = round;
    turn.student_label = a.label;
    turn.student_explanation = a.explanation;
    if (auto rewritten = rewriter.rewrite(a.explanation)) {
      turn.rewritten_explanation = *rewritten;
      turn.rewriter = rewriter.kind();
    } else {
      turn.rewritten_explanation = a.explanation;
      turn.rewriter = "identity-fallback";
    }
    turn.verdict = judge_response(item, a.label, a.explanation, cfg.mastery_threshold);
    session.turns.push_back(turn);
    if (!turn.verdict.mastery) {
      const auto text = coach_feedback(coach, item, turn.verdict, session.turns);
      session.turns.back().coach_feedback = text;
      student.update(item, text);
      session.turns.back().update_applied = true;
      session.consumed_ids.push_back(item.id);
    }
    session.adapter_after = student.fingerprint();
    if (observer) observer(session, session.turns.back());
    if (session.turns.back().verdict.mastery) break;
  }
  session.outcome = session.turns.back().verdict.mastery ? Outcome::mastered : Outcome::exhausted;
  return session;
}

CurriculumResult run_curriculum(Student& student, std::span<const McqItem> items, Coach& coach,
                                Rewriter& rewriter, const std::string& run_id, const TurnObserver& observer) {
  CurriculumResult out;
  for (size_t i = 0; i < items.size(); ++i) {
    out.sessions.push_back(
        run_teaching_loop(student, items[i], coach, rewriter, run_id + "-" + std::to_string(i + 1), observer));
    out.first_attempt_scores.push_back(out.sessions.back().turns.front().verdict.combined_score);
  }
  if (!items.empty()) {
    out.rolling = rolling_accuracy(out.first_attempt_scores);
    out.cumulative = cumulative_accuracy(out.first_attempt_scores);
  }
  return out;
}

nlohmann::json turn_to_json(const DialogueTurn& t, const std::string& session_id, const std::string& item_id,
                            const std::string& timestamp) {
  nlohmann::json j;
  j["session_id"] = session_id;
  j["item_id"] = item_id;
  j["timestamp"] = timestamp;
  j["round_index"] = t.round_index;
  j["student_label"] = std::string(1, t.student_label);
  j["student_explanation"] = t.student_explanation;
  j["rewritten_explanation"] = t.rewritten_explanation ? nlohmann::json(*t.rewritten_explanation) : nullptr;
  j["rewriter"] = t.rewriter;
  j["verdict"] = {{"answer_correct", t.verdict.answer_correct},
                  {"explanation_score", t.verdict.explanation_score},
                  {"combined_score", t.verdict.combined_score},
                  {"mastery", t.verdict.mastery}};
  j["coach_feedback"] = t.coach_feedback ? nlohmann::json(*t.coach_feedback) : nullptr;
  j["update_applied"] = t.update_applied;
  return j;
}

DialogueTurn turn_from_json(const nlohmann::json& j) {
  const auto problems = validate_turn_record(j);
  if (!problems.empty()) fail(errc::kMalformed, "dialogue turn: " + problems.front());
  DialogueTurn t;
  t.round_index = j.at("round_index");
  t.student_label = j.at("student_label").get<std::string>()[0];
  t.student_explanation = j.at("student_explanation");
  if (!j.at("rewritten_explanation").is_null()) t.rewritten_explanation = j.at("rewritten_explanation");
  t.rewriter = j.at("rewriter");
  const auto& v = j.at("verdict");
  t.verdict = {v.at("answer_correct"), v.at("explanation_score"), v.at("combined_score"), v.at("mastery")};
  if (!j.at("coach_feedback").is_null()) t.coach_feedback = j.at("coach_feedback");
  t.update_applied = j.at("update_applied");
  return t;
}

std::vector<std::string> validate_turn_record(const nlohmann::json& r) {
  std::vector<std::string> out;
  if (!r.is_object()) return {"record is not an object"};
  static const std::map<std::string, nlohmann::json::value_t> kFields = {
      {"session_id", nlohmann::json::value_t::string},
      {"item_id", nlohmann::json::value_t::string},
      {"timestamp", nlohmann::json::value_t::string},
      {"round_index", nlohmann::json::value_t::number_integer},
      {"student_label", nlohmann::json::value_t::string},
      {"student_explanation", nlohmann::json::value_t::string},
      {"rewritten_explanation", nlohmann::json::value_t::string},
      {"rewriter", nlohmann::json::value_t::string},
      {"verdict", nlohmann::json::value_t::object},
      {"coach_feedback", nlohmann::json::value_t::string},
      {"update_applied", nlohmann::json::value_t::boolean}};
  for (const auto& [key, type] : kFields) {
    if (!r.contains(key)) {
      out.push_back("missing field " + key);
      continue;
    }
    const auto& v = r.at(key);
    const bool nullable = key == "rewritten_explanation" || key == "coach_feedback";
    const bool ok = (nullable && v.is_null()) || v.type() == type ||
                    (type == nlohmann::json::value_t::number_integer && v.is_number_integer());
    if (!ok) out.push_back("field " + key + " has the wrong type");
  }
  for (const auto& [key, _] : r.items())
    if (!kFields.contains(key)) out.push_back("unexpected field " + key);
  if (!out.empty()) return out;

  const int round = r.at("round_index");
  if (round < 1) out.push_back("round_index below 1");
  const auto label = r.at("student_label").get<std::string>();
  if (label.size() != 1 || label_index(label[0]) < 0) out.push_back("student_label is not one of A-D");
  const auto& v = r.at("verdict");
  for (const char* key : {"answer_correct", "mastery"})
    if (!v.contains(key) || !v.at(key).is_boolean()) out.push_back(std::string("verdict.") + key + " missing");
  for (const char* key : {"explanation_score", "combined_score"})
    if (!v.contains(key) || !v.at(key).is_number()) out.push_back(std::string("verdict.") + key + " missing");
  if (!out.empty()) return out;
  const bool correct = v.at("answer_correct");
  const bool mastery = v.at("mastery");
  const double score = v.at("explanation_score");
  const double combined = v.at("combined_score");
  if (score < 0.0 || score > 1.0) out.push_back("explanation_score outside [0, 1]");
  if (std::abs(combined - (0.5 * correct + 0.5 * score)) > 1e-12) out.push_back("combined_score inconsistent");
  if (mastery && !correct) out.push_back("mastery without a correct answer");
  const bool has_feedback = !r.at("coach_feedback").is_null();
  if (has_feedback == mastery) out.push_back("coach_feedback must be present exactly when mastery is false");
  if (r.at("update_applied").get<bool>() && !has_feedback) out.push_back("update applied without feedback");
  return out;
}

nlohmann::json session_summary(const TeachingSession& s, const McqItem& item) {
  require(!s.turns.empty(), "session has no turns");
  auto side = [](const DialogueTurn& t) {
    return nlohmann::json{{"selected_answer", std::string(1, t.student_label)},
                          {"explanation", t.student_explanation},
                          {"correct", t.verdict.answer_correct},
                          {"combined_score", t.verdict.combined_score}};
  };
  return {{"session_id", s.session_id},
          {"item_id", s.item_id},
          {"question", item.question},
          {"correct_label", std::string(1, item.answer)},
          {"rounds", s.turns.size()},
          {"outcome", to_string(s.outcome)},
          {"before", side(s.turns.front())},
          {"after", side(s.turns.back())},
          {"error_cause", nullptr},
          {"adapter_before", s.adapter_before},
          {"adapter_after", s.adapter_after}};
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void DialogueLog::append(const TeachingSession& session, const DialogueTurn& turn) {
  *out_ << turn_to_json(turn, session.session_id, session.item_id, utc_timestamp()).dump() << "\n";
  out_->flush();
}

nlohmann::json agent_config_to_json(const AgentConfig& c) {
  return {{"max_rounds", c.max_rounds},
          {"update_steps", c.update_steps},
          {"learning_rate", c.learning_rate},
          {"label_weight", c.label_weight},
          {"explanation_budget", c.explanation_budget},
          {"mastery_threshold", c.mastery_threshold},
          {"seed", c.seed}};
}

AgentConfig agent_config_from_json(const nlohmann::json& j) {
  AgentConfig c;
  try {
    c.max_rounds = j.value("max_rounds", c.max_rounds);
    c.update_steps = j.value("update_steps", c.update_steps);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.label_weight = j.value("label_weight", c.label_weight);
    c.explanation_budget = j.value("explanation_budget", c.explanation_budget);
    c.mastery_threshold = j.value("mastery_threshold", c.mastery_threshold);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    fail(errc::kMalformed, std::string("agent config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace tal
