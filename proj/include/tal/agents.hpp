// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <json.hpp>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tal/corpus.hpp"
#include "tal/training.hpp"

namespace tal {

struct Verdict {
  bool answer_correct = false;
  double explanation_score = 0.0;
  double combined_score = 0.0;
  bool mastery = false;
  bool operator==(const Verdict&) const = default;
};

struct Attempt {
  char label = 'A';
  std::string explanation;
};

struct DialogueTurn {
  int round_index = 1;
  char student_label = 'A';
  std::string student_explanation;
  std::optional<std::string> rewritten_explanation;
  std::string rewriter = "identity";
  Verdict verdict;
  std::optional<std::string> coach_feedback;
  bool update_applied = false;
  bool operator==(const DialogueTurn&) const = default;
};

enum class Outcome { mastered, exhausted };
std::string to_string(Outcome outcome);

struct TeachingSession {
  std::string session_id;
  std::string item_id;
  std::vector<DialogueTurn> turns;
  Outcome outcome = Outcome::exhausted;
  std::string adapter_before;  // adapter fingerprints
  std::string adapter_after;
  std::vector<std::string> consumed_ids;  // items whose sequences were trained on
};

struct AgentConfig {
  int max_rounds = 3;
  int update_steps = 4;
  double learning_rate = 1e-4;
  double label_weight = 1.0;
  int explanation_budget = 40;
  double mastery_threshold = 0.6;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Lowercased, punctuation-stripped content words (stop words removed).
std::vector<std::string> content_tokens(std::string_view text);
/// Multiset token-overlap F1; two empty token lists score 1.
double token_f1(std::string_view candidate, std::string_view reference);

Verdict make_verdict(bool answer_correct, double explanation_score, double mastery_threshold = 0.6);
Verdict judge_response(const McqItem& item, char label, std::string_view explanation,
                       double mastery_threshold = 0.6);

/// Predicted label plus a greedy explanation continuing from it.
Attempt student_attempt(const ModelView<float>& model, const McqItem& item, int budget = 40);

/// Feedback source. `history` holds every turn so far; its last element is the
/// turn being coached.
class Coach {
 public:
  virtual ~Coach() = default;
  virtual std::string kind() const = 0;
  virtual std::string feedback(const McqItem& item, const Verdict& verdict,
                               std::span<const DialogueTurn> history) = 0;
};

/// Deterministic template built from the reference explanation.
class OracleCoach : public Coach {
 public:
  std::string kind() const override { return "oracle"; }
  std::string feedback(const McqItem& item, const Verdict& verdict, std::span<const DialogueTurn> history) override;
};

/// POSTs {item, verdict, history} as JSON to `endpoint` and reads {"feedback": "..."}.
class ExternalCoach : public Coach {
 public:
  explicit ExternalCoach(std::string endpoint, int attempts = 3, int timeout_seconds = 30);
  std::string kind() const override { return "external"; }
  std::string feedback(const McqItem& item, const Verdict& verdict, std::span<const DialogueTurn> history) override;

 private:
  std::string endpoint_;
  int attempts_;
  int timeout_seconds_;
};

/// Throws precondition on a mastery verdict.
std::string coach_feedback(Coach& coach, const McqItem& item, const Verdict& verdict,
                           std::span<const DialogueTurn> history);

class Rewriter {
 public:
  virtual ~Rewriter() = default;
  virtual std::string kind() const = 0;
  /// Empty optional on failure; callers fall back to identity.
  virtual std::optional<std::string> rewrite(const std::string& text) = 0;
};

class IdentityRewriter : public Rewriter {
 public:
  std::string kind() const override { return "identity"; }
  std::optional<std::string> rewrite(const std::string& text) override { return text; }
};

std::string rewrite_response(const std::string& text);

/// A base model with one trainable adapter and its optimizer state.
class Student {
 public:
  Student(const Transformer<float>& base, const LowRankAdapter<float>& adapter, const AgentConfig& config);
  Student(const Student&) = delete;
  Student& operator=(const Student&) = delete;

  Attempt attempt(const McqItem& item) const;
  /// Answer-span loss on the item sequence with `feedback` as prompt context.
  double sequence_loss(const McqItem& item, const std::string& feedback) const;
  /// `update_steps` Adam steps on that sequence; returns the loss before them.
  double update(const McqItem& item, const std::string& feedback);

  const LowRankAdapter<float>& adapter() const { return *adapter_; }
  const ModelView<float>& view() const { return *view_; }
  const AgentConfig& config() const { return config_; }
  std::string fingerprint() const;

 private:
  Example training_example(const McqItem& item, const std::string& feedback) const;

  const Transformer<float>* base_;
  AgentConfig config_;
  std::unique_ptr<LowRankAdapter<float>> adapter_;
  std::unique_ptr<LowRankAdapter<float>> grads_;
  std::unique_ptr<Adam> adam_;
  std::unique_ptr<ModelView<float>> view_;
};

/// Called after each turn, before the next attempt.
using TurnObserver = std::function<void(const TeachingSession&, const DialogueTurn&)>;

TeachingSession run_teaching_loop(Student& student, const McqItem& item, Coach& coach, Rewriter& rewriter,
                                  const std::string& session_id, const TurnObserver& observer = {});

struct CurriculumResult {
  std::vector<TeachingSession> sessions;
  std::vector<double> first_attempt_scores;
  std::vector<double> rolling;
  std::vector<double> cumulative;
};

/// Sessions in order with one persistent adapter.
CurriculumResult run_curriculum(Student& student, std::span<const McqItem> items, Coach& coach,
                                Rewriter& rewriter, const std::string& run_id, const TurnObserver& observer = {});

/// One JSON object per turn: the DialogueTurn fields plus session_id, item_id, timestamp.
nlohmann::json turn_to_json(const DialogueTurn& turn, const std::string& session_id, const std::string& item_id,
                            const std::string& timestamp);
DialogueTurn turn_from_json(const nlohmann::json& j);
/// Empty when `record` satisfies the dialogue-log schema and turn invariants.
std::vector<std::string> validate_turn_record(const nlohmann::json& record);
/// Before/after fields of a session (selected answer, explanation, correctness).
nlohmann::json session_summary(const TeachingSession& session, const McqItem& item);
std::string utc_timestamp();

/// Appends every turn as one JSON line.
class DialogueLog {
 public:
  explicit DialogueLog(std::ostream& out) : out_(&out) {}
  void append(const TeachingSession& session, const DialogueTurn& turn);

 private:
  std::ostream* out_;
};

nlohmann::json agent_config_to_json(const AgentConfig& config);
AgentConfig agent_config_from_json(const nlohmann::json& j);

}  // namespace tal
