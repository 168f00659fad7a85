// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <thread>

#include "lab.hpp"
#include "tal/checkpoint.hpp"
#include "tal/error.hpp"
#include "tal/service.hpp"

// After the tal headers: resolv.h defines a `_res` macro.
#include <httplib.h>

using namespace tal;
using nlohmann::json;

namespace {

std::string error_code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return "";
}

const std::string kFeedback = "Re-read the question and check which option matches the explanation .";

// Drives the current item to its end; returns the number of rounds taken.
int finish_current_item(HumanSession& s) {
  int rounds = 0;
  const auto item = s.view().at("current_item").at("id").get<std::string>();
  json r = s.attempt();
  ++rounds;
  while (r.at("item_outcome").is_null()) {
    r = s.submit_feedback(kFeedback);
    if (!r.at("reattempt").is_null()) ++rounds;
    if (r.at("item_outcome").is_null()) CHECK(s.status() == SessionStatus::awaiting_feedback);
  }
  CHECK(rounds <= 3);
  if (r.at("item_outcome") == "exhausted") CHECK(rounds == 3);
  const json view = s.view();
  const auto& done = view.at("completed").back();
  CHECK(done.at("item_id") == item);
  CHECK(done.at("rounds") == rounds);
  return rounds;
}

struct Http {
  httplib::Server server;
  std::thread thread;
  int port = 0;

  explicit Http(SessionManager& sessions) {
    register_routes(server, sessions);
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~Http() {
    server.stop();
    thread.join();
  }
  httplib::Client client() const { return httplib::Client("127.0.0.1", port); }
};

}  // namespace

TEST_CASE("http status mapping and error bodies") {
  CHECK(http_status(errc::kPrecondition) == 400);
  CHECK(http_status(errc::kMalformed) == 400);
  CHECK(http_status(errc::kNotFound) == 404);
  CHECK(http_status(errc::kConflict) == 409);
  CHECK(http_status(errc::kUnavailable) == 503);
  CHECK(http_status(errc::kNonFinite) == 500);
  CHECK(error_body("conflict", "x") == json{{"error", {{"code", "conflict"}, {"message", "x"}}}});
}

TEST_CASE("a session runs its turns under the round rule") {
  SessionManager sessions(lab::toy_workspace());
  auto s = sessions.create({50, "", std::nullopt, false, ""});
  CHECK(s->status() == SessionStatus::awaiting_attempt);
  CHECK(s->queue() == sessions.queue_for(50, ""));
  CHECK(error_code_of([&] { s->submit_feedback(kFeedback); }) == errc::kConflict);

  for (int i = 0; i < 3; ++i) finish_current_item(*s);
  CHECK(s->cursor() == 3);

  // Every finished turn is logged exactly once and is schema-valid.
  size_t turns = 0;
  const json view = s->view();
  for (const auto& item : view.at("completed")) turns += item.at("rounds").get<size_t>();
  CHECK(s->log().size() == turns);
  for (const auto& record : s->log()) CHECK(validate_turn_record(record).empty());

  const auto t = s->trajectory();
  CHECK(t.at("scores").size() == 3);
  CHECK(t.at("rolling").size() == 3);
  CHECK(t.at("cumulative").back().get<double>() ==
        doctest::Approx((t["scores"][0].get<double>() + t["scores"][1].get<double>() + t["scores"][2].get<double>()) / 3));
}

TEST_CASE("out-of-order calls conflict and blank feedback is rejected") {
  SessionManager sessions(lab::toy_workspace());
  auto s = sessions.create({50, "", std::nullopt, false, ""});
  // Find an item the student misses.
  for (;;) {
    const auto r = s->attempt();
    if (r.at("item_outcome").is_null()) break;
  }
  CHECK(s->status() == SessionStatus::awaiting_feedback);
  CHECK(error_code_of([&] { s->attempt(); }) == errc::kConflict);
  CHECK(error_code_of([&] { s->submit_feedback(""); }) == errc::kPrecondition);
  CHECK(error_code_of([&] { s->submit_feedback("   "); }) == errc::kPrecondition);
  CHECK(s->status() == SessionStatus::awaiting_feedback);

  const auto before = s->adapter_fingerprint();
  const auto r = s->submit_feedback(kFeedback);
  CHECK(s->adapter_fingerprint() != before);
  const auto& turn = r.at("turn");
  CHECK(turn.at("coach_feedback") == kFeedback);
  CHECK(turn.at("update_applied") == true);
  CHECK(turn == s->log().back());
}

TEST_CASE("invalid requests are rejected") {
  SessionManager sessions(lab::toy_workspace());
  CHECK(error_code_of([&] { sessions.create({15, "", std::nullopt, false, ""}); }) == errc::kPrecondition);
  CHECK(error_code_of([&] { sessions.create({30, "", std::nullopt, false, ""}); }) == errc::kNotFound);
  CHECK(error_code_of([&] { sessions.create({50, "No Such KC", std::nullopt, false, ""}); }) == errc::kNotFound);
  CHECK(error_code_of([&] { sessions.create({50, "", 9, false, ""}); }) == errc::kNotFound);
  CHECK(error_code_of([&] { sessions.get("s9999"); }) == errc::kNotFound);
}

TEST_CASE("sessions own independent adapters and idempotency keys dedupe creation") {
  SessionManager sessions(lab::toy_workspace());
  auto a = sessions.create({50, "", std::nullopt, false, "key-a"});
  auto b = sessions.create({50, "", std::nullopt, false, ""});
  CHECK(sessions.create({50, "", std::nullopt, false, "key-a"}) == a);
  CHECK(a->id() != b->id());
  CHECK(a->adapter_fingerprint() == b->adapter_fingerprint());
  while (a->attempt().at("item_outcome").is_string()) {
  }
  a->submit_feedback(kFeedback);
  CHECK(a->adapter_fingerprint() != b->adapter_fingerprint());
  const auto& ws = lab::toy_workspace();
  const auto base = ws.base(1);
  CHECK(b->adapter_fingerprint() == adapter_fingerprint(ws.unlearned(1, 50, base)));
}

TEST_CASE("a knowledge-component filter restricts the queue") {
  SessionManager sessions(lab::toy_workspace());
  const auto& corpus = lab::toy_workspace().corpus();
  const auto all = sessions.queue_for(50, "");
  const auto eh = sessions.queue_for(50, "Exception Handling");
  CHECK(!eh.empty());
  CHECK(eh.size() < all.size());
  for (const auto& id : eh) CHECK(corpus.at(id).kc == "Exception Handling");
  auto s = sessions.create({50, "Exception Handling", std::nullopt, false, ""});
  CHECK(s->queue() == eh);
}

TEST_CASE("journals replay to the same adapter, log and status") {
  const auto& ws = lab::toy_workspace();
  std::string id, fingerprint;
  std::vector<json> log;
  json view;
  {
    SessionManager sessions(ws);
    auto s = sessions.create({10, "", std::nullopt, false, "replay-key"});
    finish_current_item(*s);
    finish_current_item(*s);
    while (s->attempt().at("item_outcome").is_string()) {
    }
    s->submit_feedback(kFeedback);
    id = s->id();
    fingerprint = s->adapter_fingerprint();
    log = s->log();
    view = s->view();
  }
  SessionManager restored(ws);
  const auto failures = restored.restore();
  CHECK_FALSE(failures.contains(id));
  auto s = restored.get(id);
  CHECK(s->adapter_fingerprint() == fingerprint);
  CHECK(s->log() == log);
  CHECK(s->view() == view);
  CHECK(restored.create({10, "", std::nullopt, false, "replay-key"}) == s);
  // The restored session keeps going.
  const auto next = restored.create({10, "", std::nullopt, false, ""});
  CHECK(next->id() != id);
}

TEST_CASE("the HTTP API serves sessions, errors and discovery routes") {
  SessionManager sessions(lab::toy_workspace());
  Http http(sessions);
  auto client = http.client();

  auto health = client.Get("/api/health");
  REQUIRE(health);
  CHECK(health->status == 200);

  auto runs = client.Get("/api/runs");
  REQUIRE(runs);
  CHECK(json::parse(runs->body).at("models")[0].at("ratios") == json{10, 50});

  auto kcs = client.Get("/api/kcs?ratio=50");
  REQUIRE(kcs);
  const auto kcs_body = json::parse(kcs->body);
  size_t total = 0;
  for (const auto& k : kcs_body.at("kcs")) total += k.at("targeted_items").get<size_t>();
  CHECK(total == sessions.queue_for(50, "").size());
  CHECK(client.Get("/api/kcs?ratio=15")->status == 400);
  CHECK(client.Get("/api/kcs?ratio=x")->status == 400);

  auto created = client.Post("/api/sessions", R"({"ratio": 50})", "application/json");
  REQUIRE(created);
  CHECK(created->status == 201);
  const auto sid = json::parse(created->body).at("session_id").get<std::string>();
  const std::string base = "/api/sessions/" + sid;
  CHECK(json::parse(created->body).at("status") == "awaiting_attempt");

  auto early = client.Post(base + "/feedback", R"({"feedback": "x"})", "application/json");
  CHECK(early->status == 409);
  CHECK(json::parse(early->body).at("error").at("code") == "conflict");

  json attempt;
  for (;;) {
    auto r = client.Post(base + "/attempt", "", "application/json");
    REQUIRE(r);
    REQUIRE(r->status == 200);
    attempt = json::parse(r->body);
    if (attempt.at("item_outcome").is_null()) break;
  }
  CHECK(client.Post(base + "/attempt", "", "application/json")->status == 409);
  auto blank = client.Post(base + "/feedback", R"({"feedback": ""})", "application/json");
  CHECK(blank->status == 400);
  CHECK(json::parse(blank->body).at("error").at("code") == "precondition");
  CHECK(client.Post(base + "/feedback", "{not json", "application/json")->status == 400);
  auto fb = client.Post(base + "/feedback", json{{"feedback", kFeedback}}.dump(), "application/json");
  REQUIRE(fb);
  CHECK(fb->status == 200);
  const auto fb_body = json::parse(fb->body);
  CHECK(fb_body.at("turn").at("coach_feedback") == kFeedback);

  auto log = client.Get(base + "/log");
  const auto turns = json::parse(log->body).at("turns");
  CHECK(turns.back() == fb_body.at("turn"));
  CHECK(turns.back().at("student_label") == attempt.at("turn").at("student_label"));
  CHECK(turns.back().at("verdict") == attempt.at("turn").at("verdict"));

  auto traj = client.Get(base + "/trajectory");
  CHECK(traj->status == 200);
  CHECK(json::parse(traj->body).contains("rolling"));

  auto list = client.Get("/api/sessions");
  bool listed = false;
  const auto listing = json::parse(list->body);
  for (const auto& s : listing.at("sessions")) listed |= s.at("session_id") == sid;
  CHECK(listed);

  httplib::Headers key = {{"Idempotency-Key", "http-key"}};
  auto first = client.Post("/api/sessions", key, R"({"ratio": 10})", "application/json");
  auto second = client.Post("/api/sessions", key, R"({"ratio": 10})", "application/json");
  CHECK(json::parse(first->body).at("session_id") == json::parse(second->body).at("session_id"));

  CHECK(client.Post("/api/sessions", R"({"ratio": 15})", "application/json")->status == 400);
  CHECK(client.Post("/api/sessions", R"({})", "application/json")->status == 400);
  CHECK(client.Get("/api/sessions/s9999")->status == 404);
  CHECK(client.Get("/api/runs/none/report")->status == 404);
  auto unknown = client.Get("/api/nothing");
  CHECK(unknown->status == 404);
  CHECK(json::parse(unknown->body).at("error").at("code") == "not-found");
}
