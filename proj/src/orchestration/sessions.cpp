// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>

#include "tal/checkpoint.hpp"
#include "tal/error.hpp"
#include "tal/eval.hpp"
#include "tal/service.hpp"

namespace tal {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(SessionStatus status) {
  switch (status) {
    case SessionStatus::awaiting_attempt: return "awaiting_attempt";
    case SessionStatus::awaiting_feedback: return "awaiting_feedback";
    case SessionStatus::completed: return "completed";
  }
  return "completed";
}

namespace {

bool blank(const std::string& text) {
  return std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

json item_view(const McqItem& item) {
  json options = json::object();
  for (const auto& [label, text] : item.options) options[std::string(1, label)] = text;
  return {{"id", item.id},
          {"kc", item.kc},
          {"question", item.question},
          {"options", options},
          {"answer", std::string(1, item.answer)},
          {"explanation", item.explanation}};
}

std::vector<json> read_jsonl(const fs::path& path) {
  std::vector<json> out;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

}  // namespace

HumanSession::HumanSession(std::string id, SessionRequest request, std::uint64_t seed,
                           std::vector<std::string> queue, const Transformer<float>& base,
                           const LowRankAdapter<float>& unlearned, const AgentConfig& agent, const Corpus& corpus,
                           fs::path journal_dir)
    : id_(std::move(id)),
      request_(std::move(request)),
      seed_(seed),
      queue_(std::move(queue)),
      corpus_(&corpus),
      agent_(agent),
      journal_dir_(std::move(journal_dir)),
      student_(base, unlearned, agent) {
  require(!queue_.empty(), "session queue is empty");
}

const McqItem& HumanSession::current() const {
  require(cursor_ < queue_.size(), "session " + id_ + " is completed");
  return corpus_->at(queue_[cursor_]);
}

void HumanSession::journal(const json& event) const {
  if (replaying_ || journal_dir_.empty()) return;
  std::ofstream out(journal_dir_ / "events.jsonl", std::ios::app);
  if (!out) fail(errc::kIo, "cannot append to session journal " + journal_dir_.string());
  out << event.dump() << "\n";
}

void HumanSession::finalize_turn(const DialogueTurn& turn) {
  const std::string stamp = replaying_ ? "" : utc_timestamp();
  log_.push_back(turn_to_json(turn, id_, current().id, stamp));
  if (replaying_ || journal_dir_.empty()) return;
  std::ofstream out(journal_dir_ / "dialogue.jsonl", std::ios::app);
  if (!out) fail(errc::kIo, "cannot append to dialogue log " + journal_dir_.string());
  out << log_.back().dump() << "\n";
}

void HumanSession::finish_item(Outcome outcome) {
  results_.push_back({queue_[cursor_], outcome, turns_.front().verdict.combined_score,
                      static_cast<int>(turns_.size())});
  turns_.clear();
  ++cursor_;
  status_ = cursor_ == queue_.size() ? SessionStatus::completed : SessionStatus::awaiting_attempt;
}

json HumanSession::do_attempt() {
  const McqItem& item = current();
  const std::string item_id = item.id;
  const Attempt a = student_.attempt(item);
  DialogueTurn turn;
  turn.round_index = static_cast<int>(turns_.size()) + 1;
  turn.student_label = a.label;
  turn.student_explanation = a.explanation;
  turn.rewritten_explanation = a.explanation;
  turn.rewriter = "identity";
  turn.verdict = judge_response(item, a.label, a.explanation, agent_.mastery_threshold);
  turns_.push_back(turn);
  json out = {{"turn", turn_to_json(turn, id_, item_id, replaying_ ? "" : utc_timestamp())},
              {"item_outcome", nullptr}};
  if (turn.verdict.mastery) {
    finalize_turn(turn);
    finish_item(Outcome::mastered);
    out["item_outcome"] = to_string(Outcome::mastered);
  } else {
    status_ = SessionStatus::awaiting_feedback;
  }
  return out;
}

json HumanSession::attempt() {
  if (status_ != SessionStatus::awaiting_attempt)
    fail(errc::kConflict, "session " + id_ + " is " + to_string(status_) + ", not awaiting_attempt");
  json out = do_attempt();
  const auto& t = out["turn"];
  journal({{"type", "attempt"}, {"label", t["student_label"]}, {"explanation", t["student_explanation"]}});
  out["session"] = view();
  return out;
}

json HumanSession::do_feedback(const std::string& feedback) {
  const McqItem& item = current();
  DialogueTurn& turn = turns_.back();
  student_.update(item, feedback);
  turn.coach_feedback = feedback;
  turn.update_applied = true;
  finalize_turn(turn);
  json out = {{"turn", log_.back()}, {"reattempt", nullptr}, {"item_outcome", nullptr}};
  if (static_cast<int>(turns_.size()) >= agent_.max_rounds) {
    finish_item(Outcome::exhausted);
    out["item_outcome"] = to_string(Outcome::exhausted);
    return out;
  }
  json next = do_attempt();
  out["reattempt"] = next["turn"];
  out["item_outcome"] = next["item_outcome"];
  return out;
}

json HumanSession::submit_feedback(const std::string& feedback) {
  require(!blank(feedback), "feedback is empty");
  if (status_ != SessionStatus::awaiting_feedback)
    fail(errc::kConflict, "session " + id_ + " is " + to_string(status_) + ", not awaiting_feedback");
  json out = do_feedback(feedback);
  json event = {{"type", "feedback"}, {"text", feedback}, {"next", nullptr}};
  if (!out["reattempt"].is_null())
    event["next"] = {{"label", out["reattempt"]["student_label"]},
                     {"explanation", out["reattempt"]["student_explanation"]}};
  journal(event);
  out["session"] = view();
  return out;
}

json HumanSession::view() const {
  json completed = json::array();
  for (const auto& r : results_)
    completed.push_back({{"item_id", r.item_id},
                         {"outcome", to_string(r.outcome)},
                         {"first_score", r.first_score},
                         {"rounds", r.rounds}});
  json latest = nullptr;
  if (!turns_.empty())
    latest = turn_to_json(turns_.back(), id_, queue_[cursor_], "");
  else if (!log_.empty())
    latest = log_.back();
  return {{"session_id", id_},
          {"ratio", request_.ratio},
          {"kc", request_.kc},
          {"seed", seed_},
          {"status", to_string(status_)},
          {"cursor", cursor_},
          {"queue_length", queue_.size()},
          {"round", turns_.size()},
          {"max_rounds", agent_.max_rounds},
          {"current_item", cursor_ < queue_.size() ? item_view(current()) : json(nullptr)},
          {"latest_attempt", latest},
          {"completed", completed},
          {"adapter_fingerprint", student_.fingerprint()}};
}

json HumanSession::trajectory() const {
  std::vector<double> scores;
  json items = json::array();
  for (const auto& r : results_) {
    scores.push_back(r.first_score);
    items.push_back({{"item_id", r.item_id}, {"outcome", to_string(r.outcome)}, {"rounds", r.rounds}});
  }
  const auto rolling = scores.empty() ? std::vector<double>{} : rolling_accuracy(scores);
  const auto cumulative = scores.empty() ? std::vector<double>{} : cumulative_accuracy(scores);
  return {{"session_id", id_},
          {"scores", scores},
          {"rolling", rolling},
          {"cumulative", cumulative},
          {"items", items}};
}

void HumanSession::write_header(const std::string& source_fingerprint) const {
  if (journal_dir_.empty()) return;
  fs::create_directories(journal_dir_);
  const json header = {{"session_id", id_},
                       {"ratio", request_.ratio},
                       {"kc", request_.kc},
                       {"seed", seed_},
                       {"idempotency_key", request_.idempotency_key},
                       {"queue", queue_},
                       {"agent", agent_config_to_json(agent_)},
                       {"source_adapter", source_fingerprint},
                       {"created_at", utc_timestamp()}};
  std::ofstream out(journal_dir_ / "session.json");
  if (!out) fail(errc::kIo, "cannot write session header in " + journal_dir_.string());
  out << header.dump(2) << "\n";
}

void HumanSession::replay(const std::vector<json>& events) {
  replaying_ = true;
  auto check = [&](const json& expected, const json& turn, size_t index) {
    if (expected.at("label") != turn.at("student_label") ||
        expected.at("explanation") != turn.at("student_explanation"))
      fail(errc::kConflict, "session " + id_ + " diverged from its journal at event " + std::to_string(index + 1));
  };
  try {
    for (size_t i = 0; i < events.size(); ++i) {
      const auto& e = events[i];
      const std::string type = e.at("type");
      if (type == "attempt") {
        if (status_ != SessionStatus::awaiting_attempt) fail(errc::kConflict, "journal attempt out of order");
        check(e, do_attempt()["turn"], i);
      } else if (type == "feedback") {
        if (status_ != SessionStatus::awaiting_feedback) fail(errc::kConflict, "journal feedback out of order");
        const json out = do_feedback(e.at("text").get<std::string>());
        if (e.at("next").is_null() != out.at("reattempt").is_null())
          fail(errc::kConflict, "session " + id_ + " diverged from its journal at event " + std::to_string(i + 1));
        if (!out.at("reattempt").is_null()) check(e.at("next"), out.at("reattempt"), i);
      } else {
        fail(errc::kMalformed, "unknown journal event " + type);
      }
    }
  } catch (...) {
    replaying_ = false;
    throw;
  }
  replaying_ = false;
  // Keep the recorded timestamps.
  const auto recorded = read_jsonl(journal_dir_ / "dialogue.jsonl");
  if (recorded.size() == log_.size()) log_ = recorded;
}

SessionManager::SessionManager(const Workspace& workspace) : workspace_(&workspace) {}

std::shared_ptr<const Transformer<float>> SessionManager::base(std::uint64_t seed) {
  auto it = bases_.find(seed);
  if (it != bases_.end()) return it->second;
  auto model = std::make_shared<const Transformer<float>>(workspace_->base(seed));
  bases_.emplace(seed, model);
  return model;
}

std::vector<std::string> SessionManager::queue_for(int ratio, const std::string& kc) const {
  std::lock_guard lock(mutex_);
  return queue_unlocked(ratio, kc);
}

std::vector<std::string> SessionManager::queue_unlocked(int ratio, const std::string& kc) const {
  const auto ids = targeted_test_ids(workspace_->manifest(), workspace_->corpus(), ratio);
  if (kc.empty()) return ids;
  std::vector<std::string> out;
  for (const auto& id : ids)
    if (workspace_->corpus().at(id).kc == kc) out.push_back(id);
  return out;
}

std::string SessionManager::next_id() const {
  for (int n = counter_ + 1;; ++n) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "s%04d", n);
    if (!sessions_.contains(buf) && !fs::exists(workspace_->sessions_dir() / buf)) return buf;
  }
}

std::shared_ptr<HumanSession> SessionManager::create(const SessionRequest& request) {
  std::lock_guard lock(mutex_);
  const auto& cfg = workspace_->config();
  if (!request.idempotency_key.empty()) {
    auto it = idempotency_.find(request.idempotency_key);
    if (it != idempotency_.end()) return sessions_.at(it->second);
  }
  const auto& ratios = cfg.split.ratios;
  if (std::find(ratios.begin(), ratios.end(), request.ratio) == ratios.end())
    fail(errc::kPrecondition, "unsupported ratio " + std::to_string(request.ratio));
  const std::uint64_t seed = request.seed.value_or(cfg.seeds.front());
  auto queue = queue_unlocked(request.ratio, request.kc);
  if (queue.empty())
    fail(errc::kNotFound, "no targeted items for ratio " + std::to_string(request.ratio) +
                              (request.kc.empty() ? std::string() : " and knowledge component " + request.kc));
  auto model = base(seed);
  if (request.train_on_demand && !fs::exists(workspace_->unlearn_dir(seed, request.ratio) / "adapter" / "adapter.json"))
    workspace_->unlearn(seed, request.ratio);
  const auto adapter = workspace_->unlearned(seed, request.ratio, *model);
  AgentConfig agent = cfg.agent;
  agent.seed = seed;
  const std::string id = next_id();
  auto session = std::make_shared<HumanSession>(id, request, seed, std::move(queue), *model, adapter, agent,
                                                workspace_->corpus(), workspace_->sessions_dir() / id);
  session->write_header(adapter_fingerprint(adapter));
  sessions_.emplace(id, session);
  if (!request.idempotency_key.empty()) idempotency_.emplace(request.idempotency_key, id);
  ++counter_;
  return session;
}

std::shared_ptr<HumanSession> SessionManager::get(const std::string& id) const {
  std::lock_guard lock(mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) fail(errc::kNotFound, "no session " + id);
  return it->second;
}

std::vector<std::string> SessionManager::ids() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [id, _] : sessions_) out.push_back(id);
  return out;
}

std::map<std::string, std::string> SessionManager::restore() {
  std::lock_guard lock(mutex_);
  std::map<std::string, std::string> failures;
  const auto dir = workspace_->sessions_dir();
  if (!fs::exists(dir)) return failures;
  std::vector<fs::path> entries;
  for (const auto& e : fs::directory_iterator(dir))
    if (fs::exists(e.path() / "session.json")) entries.push_back(e.path());
  std::sort(entries.begin(), entries.end());
  for (const auto& path : entries) {
    const std::string id = path.filename().string();
    if (sessions_.contains(id)) continue;
    try {
      std::ifstream in(path / "session.json");
      const json h = json::parse(in);
      SessionRequest request;
      request.ratio = h.at("ratio");
      request.kc = h.at("kc");
      request.seed = h.at("seed").get<std::uint64_t>();
      request.idempotency_key = h.value("idempotency_key", "");
      auto model = base(*request.seed);
      const auto adapter = workspace_->unlearned(*request.seed, request.ratio, *model);
      if (adapter_fingerprint(adapter) != h.at("source_adapter").get<std::string>())
        fail(errc::kConflict, "unlearned adapter changed since the session was created");
      AgentConfig agent = agent_config_from_json(h.at("agent"));
      auto session = std::make_shared<HumanSession>(id, request, *request.seed,
                                                    h.at("queue").get<std::vector<std::string>>(), *model, adapter,
                                                    agent, workspace_->corpus(), path);
      session->replay(read_jsonl(path / "events.jsonl"));
      sessions_.emplace(id, session);
      if (!request.idempotency_key.empty()) idempotency_.emplace(request.idempotency_key, id);
      if (id.size() > 1 && id[0] == 's') counter_ = std::max(counter_, std::atoi(id.c_str() + 1));
    } catch (const std::exception& e) {
      failures.emplace(id, e.what());
    }
  }
  return failures;
}

}  // namespace tal
