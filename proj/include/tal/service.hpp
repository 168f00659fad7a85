// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <json.hpp>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "tal/orchestration.hpp"

namespace httplib {
class Server;
}

namespace tal {

enum class SessionStatus { awaiting_attempt, awaiting_feedback, completed };
std::string to_string(SessionStatus status);

struct SessionRequest {
  int ratio = 0;
  std::string kc;  // empty: every targeted knowledge component
  std::optional<std::uint64_t> seed;  // default: first configured seed
  bool train_on_demand = false;
  std::string idempotency_key;
};

struct ItemResult {
  std::string item_id;
  Outcome outcome = Outcome::exhausted;
  double first_score = 0.0;
  int rounds = 0;
};

/// A human-coached teaching session over the targeted items of one ratio.
/// Every turn is journaled; replaying the journal rebuilds the same adapter.
class HumanSession {
 public:
  HumanSession(std::string id, SessionRequest request, std::uint64_t seed, std::vector<std::string> queue,
               const Transformer<float>& base, const LowRankAdapter<float>& unlearned, const AgentConfig& agent,
               const Corpus& corpus, std::filesystem::path journal_dir);

  const std::string& id() const { return id_; }
  const SessionRequest& request() const { return request_; }
  std::uint64_t seed() const { return seed_; }
  SessionStatus status() const { return status_; }
  std::size_t cursor() const { return cursor_; }
  const std::vector<std::string>& queue() const { return queue_; }
  std::mutex& mutex() { return mutex_; }

  /// Attempt on the current item. Conflict unless awaiting_attempt.
  nlohmann::json attempt();
  /// Trains on the feedback, then re-attempts or advances. Conflict unless
  /// awaiting_feedback; empty feedback is a precondition error.
  nlohmann::json submit_feedback(const std::string& feedback);

  nlohmann::json view() const;
  nlohmann::json trajectory() const;
  /// Finished turn records in dialogue-log format.
  const std::vector<nlohmann::json>& log() const { return log_; }
  std::string adapter_fingerprint() const { return student_.fingerprint(); }

  /// Writes session.json; call once after construction.
  void write_header(const std::string& source_fingerprint) const;
  /// Re-runs the journaled events. Throws conflict when a replayed attempt
  /// differs from the journal.
  void replay(const std::vector<nlohmann::json>& events);

 private:
  const McqItem& current() const;
  nlohmann::json do_attempt();
  nlohmann::json do_feedback(const std::string& feedback);
  void finish_item(Outcome outcome);
  void finalize_turn(const DialogueTurn& turn);
  void journal(const nlohmann::json& event) const;

  std::string id_;
  SessionRequest request_;
  std::uint64_t seed_;
  std::vector<std::string> queue_;
  const Corpus* corpus_;
  AgentConfig agent_;
  std::filesystem::path journal_dir_;
  Student student_;
  mutable std::mutex mutex_;

  SessionStatus status_ = SessionStatus::awaiting_attempt;
  std::size_t cursor_ = 0;
  std::vector<DialogueTurn> turns_;  // current item
  std::vector<ItemResult> results_;
  std::vector<nlohmann::json> log_;
  bool replaying_ = false;
};

/// Owns the sessions of one workspace. Session-level calls lock the session;
/// the registry lock is held only for lookup and creation.
class SessionManager {
 public:
  explicit SessionManager(const Workspace& workspace);

  std::shared_ptr<HumanSession> create(const SessionRequest& request);
  std::shared_ptr<HumanSession> get(const std::string& id) const;
  std::vector<std::string> ids() const;
  /// Rebuilds every journaled session under the sessions directory. Returns
  /// the ids that could not be restored, with reasons.
  std::map<std::string, std::string> restore();

  /// Targeted test ids of `ratio` restricted to `kc` when it is non-empty.
  std::vector<std::string> queue_for(int ratio, const std::string& kc) const;
  const Workspace& workspace() const { return *workspace_; }

 private:
  std::shared_ptr<const Transformer<float>> base(std::uint64_t seed);
  std::string next_id() const;
  std::vector<std::string> queue_unlocked(int ratio, const std::string& kc) const;

  const Workspace* workspace_;
  mutable std::mutex mutex_;
  std::map<std::uint64_t, std::shared_ptr<const Transformer<float>>> bases_;
  std::map<std::string, std::shared_ptr<HumanSession>> sessions_;
  std::map<std::string, std::string> idempotency_;
  int counter_ = 0;
};

int http_status(const std::string& error_code);
nlohmann::json error_body(const std::string& code, const std::string& message);

/// Installs every API route on `server`.
void register_routes(httplib::Server& server, SessionManager& sessions);

}  // namespace tal
