// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <sstream>
#include <thread>

#include "lab.hpp"
#include "tal/agents.hpp"
#include "tal/error.hpp"

// After the tal headers: resolv.h defines a `_res` macro.
#include <httplib.h>

using namespace tal;

namespace {

const McqItem* first_mastered(const Student& student) {
  for (const auto& item : lab::toy_lab().corpus.items()) {
    const auto a = student.attempt(item);
    if (judge_response(item, a.label, a.explanation).mastery) return &item;
  }
  return nullptr;
}

DialogueTurn wrong_turn(const McqItem& item) {
  DialogueTurn t;
  t.student_label = item.answer == 'A' ? 'C' : 'A';
  t.student_explanation = "it returns None because nothing happens";
  t.verdict = judge_response(item, t.student_label, t.student_explanation);
  return t;
}

}  // namespace

TEST_CASE("judge scores a perfect answer 1 and a wrong empty answer 0") {
  const McqItem item = lab::sample_item();
  const auto perfect = judge_response(item, 'B', item.explanation);
  CHECK(perfect.answer_correct);
  CHECK(perfect.explanation_score == 1.0);
  CHECK(perfect.combined_score == 1.0);
  CHECK(perfect.mastery);

  const auto wrong = judge_response(item, 'A', "");
  CHECK_FALSE(wrong.answer_correct);
  CHECK(wrong.explanation_score == 0.0);
  CHECK(wrong.combined_score == 0.0);
  CHECK_FALSE(wrong.mastery);
}

TEST_CASE("partial overlap matches a hand-computed token F1") {
  const McqItem item = lab::sample_item();
  // Reference content words: int raises valueerror string valid integer literal (7).
  CHECK(content_tokens(item.explanation).size() == 7);
  // Candidate keeps 2 of them: precision 1, recall 2/7, F1 4/9.
  const auto v = judge_response(item, 'B', "int raises");
  CHECK(v.explanation_score == doctest::Approx(4.0 / 9.0).epsilon(1e-12));
  CHECK(v.combined_score == doctest::Approx(0.5 + 0.5 * 4.0 / 9.0).epsilon(1e-12));
  CHECK_FALSE(v.mastery);

  const auto wrong_label = judge_response(item, 'C', item.explanation);
  CHECK(wrong_label.combined_score == 0.5);
  CHECK_FALSE(wrong_label.mastery);
}

TEST_CASE("token F1 handles case, punctuation, stop words and repeats") {
  CHECK(token_f1("ValueError!", "valueerror") == 1.0);
  CHECK(token_f1("the a of", "") == 1.0);
  CHECK(token_f1("", "loop") == 0.0);
  // cand {x, x}, ref {x}: overlap 1, precision 1/2, recall 1.
  CHECK(token_f1("x x", "x") == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("oracle feedback carries the reference explanation and is deterministic") {
  const McqItem item = lab::sample_item();
  OracleCoach coach;
  const DialogueTurn turn = wrong_turn(item);
  const auto text = coach_feedback(coach, item, turn.verdict, std::span(&turn, 1));
  CHECK(text.find(item.explanation) != std::string::npos);
  CHECK(text.find("ValueError") != std::string::npos);
  CHECK(text == coach_feedback(coach, item, turn.verdict, std::span(&turn, 1)));

  const auto mastered = judge_response(item, 'B', item.explanation);
  try {
    coach_feedback(coach, item, mastered, std::span(&turn, 1));
    FAIL("expected a precondition error");
  } catch (const Error& e) {
    CHECK(e.code() == errc::kPrecondition);
  }
}

TEST_CASE("zero update steps leave the adapter unchanged and a real update lowers the loss") {
  const auto& lab = lab::toy_lab();
  const McqItem& item = lab.corpus.items()[2];
  const std::string feedback = "The correct answer is " + std::string(1, item.answer) + " . " + item.explanation;

  AgentConfig frozen;
  frozen.update_steps = 0;
  Student still(lab.base, lab.unlearned50, frozen);
  const auto before = still.fingerprint();
  still.update(item, feedback);
  CHECK(still.fingerprint() == before);

  AgentConfig cfg;
  cfg.learning_rate = 1e-3;
  Student student(lab.base, lab.unlearned50, cfg);
  const double loss_before = student.sequence_loss(item, feedback);
  CHECK(student.update(item, feedback) == doctest::Approx(loss_before).epsilon(1e-6));
  CHECK(student.sequence_loss(item, feedback) < loss_before);
  CHECK(student.fingerprint() != before);
  CHECK_THROWS_AS(student.update(item, ""), Error);
}

TEST_CASE("a student that already knows the item masters it in one turn") {
  const auto& lab = lab::toy_lab();
  const auto zero = LowRankAdapter<float>::create(lab.base, default_adapter_targets(lab.model_config), 8, 32.0, 1);
  Student student(lab.base, zero, AgentConfig{});
  const McqItem* item = first_mastered(student);
  REQUIRE(item != nullptr);
  OracleCoach coach;
  IdentityRewriter rewriter;
  const auto session = run_teaching_loop(student, *item, coach, rewriter, "s1");
  REQUIRE(session.turns.size() == 1);
  CHECK(session.outcome == Outcome::mastered);
  CHECK_FALSE(session.turns[0].coach_feedback.has_value());
  CHECK_FALSE(session.turns[0].update_applied);
  CHECK(session.adapter_before == session.adapter_after);
  CHECK(session.consumed_ids.empty());
}

TEST_CASE("a student that never improves is exhausted after three coached turns") {
  const auto& lab = lab::toy_lab();
  const auto stub = Transformer<float>::allocate(lab.model_config);  // always answers A
  const auto zero = LowRankAdapter<float>::create(stub, default_adapter_targets(lab.model_config), 8, 32.0, 1);
  AgentConfig cfg;
  cfg.update_steps = 0;
  Student student(stub, zero, cfg);
  const McqItem item = lab::sample_item();
  OracleCoach coach;
  IdentityRewriter rewriter;
  std::vector<int> observed;
  const auto session = run_teaching_loop(student, item, coach, rewriter, "s1",
                                         [&](const TeachingSession&, const DialogueTurn& t) {
                                           observed.push_back(t.round_index);
                                         });
  REQUIRE(session.turns.size() == 3);
  CHECK(session.outcome == Outcome::exhausted);
  CHECK(observed == std::vector<int>{1, 2, 3});
  for (const auto& t : session.turns) {
    CHECK_FALSE(t.verdict.mastery);
    CHECK(t.coach_feedback.has_value());
    CHECK(t.update_applied);
  }
  CHECK(session.consumed_ids == std::vector<std::string>{"q1", "q1", "q1"});
}

TEST_CASE("an empty curriculum has no sessions") {
  const auto& lab = lab::toy_lab();
  Student student(lab.base, lab.unlearned50, AgentConfig{});
  OracleCoach coach;
  IdentityRewriter rewriter;
  const auto result = run_curriculum(student, {}, coach, rewriter, "run");
  CHECK(result.sessions.empty());
  CHECK(result.first_attempt_scores.empty());
  CHECK(result.rolling.empty());
}

TEST_CASE("fixed seeds give identical curricula and schema-valid logs") {
  const auto& lab = lab::toy_lab();
  std::vector<McqItem> items;
  for (const auto& id : lab.manifest.test) {
    items.push_back(lab.corpus.at(id));
    if (items.size() == 5) break;
  }
  auto run = [&](std::string& log) {
    Student student(lab.base, lab.unlearned50, AgentConfig{});
    OracleCoach coach;
    IdentityRewriter rewriter;
    std::ostringstream out;
    DialogueLog writer(out);
    auto result = run_curriculum(student, items, coach, rewriter, "run",
                                 [&](const TeachingSession& s, const DialogueTurn& t) { writer.append(s, t); });
    log = out.str();
    return result;
  };
  std::string log_a, log_b;
  const auto a = run(log_a);
  const auto b = run(log_b);
  REQUIRE(a.sessions.size() == 5);
  CHECK(a.first_attempt_scores == b.first_attempt_scores);
  for (size_t i = 0; i < a.sessions.size(); ++i) {
    CHECK(a.sessions[i].turns == b.sessions[i].turns);
    CHECK(a.sessions[i].adapter_after == b.sessions[i].adapter_after);
  }
  CHECK(a.rolling.size() == 5);
  CHECK(a.cumulative.back() == doctest::Approx(
      (a.first_attempt_scores[0] + a.first_attempt_scores[1] + a.first_attempt_scores[2] +
       a.first_attempt_scores[3] + a.first_attempt_scores[4]) / 5.0));

  std::istringstream lines(log_a);
  size_t count = 0;
  for (std::string line; std::getline(lines, line);) {
    const auto record = nlohmann::json::parse(line);
    CHECK(validate_turn_record(record).empty());
    CHECK(record.at("round_index").get<int>() <= 3);
    CHECK(turn_from_json(record).round_index == record.at("round_index").get<int>());
    ++count;
  }
  size_t turns = 0;
  for (const auto& s : a.sessions) turns += s.turns.size();
  CHECK(count == turns);
}

TEST_CASE("turn records that break the schema are reported") {
  const McqItem item = lab::sample_item();
  DialogueTurn t = wrong_turn(item);
  t.coach_feedback = "try again";
  t.update_applied = true;
  auto record = turn_to_json(t, "s", item.id, "2026-01-01T00:00:00Z");
  CHECK(validate_turn_record(record).empty());

  auto no_feedback = record;
  no_feedback["coach_feedback"] = nullptr;
  CHECK_FALSE(validate_turn_record(no_feedback).empty());
  auto bad_label = record;
  bad_label["student_label"] = "E";
  CHECK_FALSE(validate_turn_record(bad_label).empty());
  auto extra = record;
  extra["surprise"] = 1;
  CHECK_FALSE(validate_turn_record(extra).empty());
  auto bad_combined = record;
  bad_combined["verdict"]["combined_score"] = 0.9;
  CHECK_FALSE(validate_turn_record(bad_combined).empty());
  auto missing = record;
  missing.erase("timestamp");
  CHECK_FALSE(validate_turn_record(missing).empty());
  CHECK_THROWS_AS(turn_from_json(missing), Error);
}

TEST_CASE("the identity rewriter returns its input and leaves the verdict alone") {
  IdentityRewriter rewriter;
  CHECK(rewriter.rewrite("int raises ValueError") == std::optional<std::string>("int raises ValueError"));
  CHECK(rewriter.rewrite("") == std::optional<std::string>(""));
  CHECK(rewrite_response("") == "");
  const McqItem item = lab::sample_item();
  const std::string text = "int raises";
  CHECK(judge_response(item, 'B', *rewriter.rewrite(text)) == judge_response(item, 'B', text));
}

TEST_CASE("the external coach posts the turn and reads the feedback") {
  httplib::Server server;
  nlohmann::json seen;
  server.Post("/coach", [&](const httplib::Request& req, httplib::Response& res) {
    seen = nlohmann::json::parse(req.body);
    res.set_content(nlohmann::json{{"feedback", "look at the exception name"}}.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  const McqItem item = lab::sample_item();
  const DialogueTurn turn = wrong_turn(item);
  ExternalCoach coach("http://127.0.0.1:" + std::to_string(port) + "/coach", 1, 5);
  CHECK(coach_feedback(coach, item, turn.verdict, std::span(&turn, 1)) == "look at the exception name");
  server.stop();
  thread.join();
  CHECK(seen.at("item").at("id") == "q1");
  CHECK(seen.at("verdict").at("answer_correct") == false);
  CHECK(seen.at("history").size() == 1);
}

TEST_CASE("an unreachable external coach is backend-unavailable") {
  httplib::Server probe;
  const int port = probe.bind_to_any_port("127.0.0.1");
  probe.stop();  // port released, nothing listening
  ExternalCoach coach("http://127.0.0.1:" + std::to_string(port) + "/coach", 1, 1);
  const McqItem item = lab::sample_item();
  const DialogueTurn turn = wrong_turn(item);
  try {
    coach.feedback(item, turn.verdict, std::span(&turn, 1));
    FAIL("expected backend-unavailable");
  } catch (const Error& e) {
    CHECK(e.code() == errc::kUnavailable);
  }
}
