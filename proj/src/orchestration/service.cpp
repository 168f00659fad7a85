// SPDX-License-Identifier: Apache-2.0
#include <fstream>
#include <set>
#include <sstream>

#include "tal/error.hpp"
#include "tal/eval.hpp"
#include "tal/service.hpp"

// After Eigen: resolv.h defines _res.
#include <httplib.h>

namespace tal {

namespace fs = std::filesystem;
using nlohmann::json;

int http_status(const std::string& code) {
  if (code == errc::kPrecondition || code == errc::kMalformed) return 400;
  if (code == errc::kNotFound) return 404;
  if (code == errc::kConflict) return 409;
  if (code == errc::kUnavailable) return 503;
  return 500;
}

json error_body(const std::string& code, const std::string& message) {
  return {{"error", {{"code", code}, {"message", message}}}};
}

namespace {

const std::set<std::string> kReportFiles = {"metrics.csv", "trajectories.csv", "plot_data.json", "report.json",
                                            "gaps.json"};

void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const std::string& code, const std::string& message) {
  send_json(res, error_body(code, message), http_status(code));
}

using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

Handler guarded(Handler inner) {
  return [inner = std::move(inner)](const httplib::Request& req, httplib::Response& res) {
    try {
      inner(req, res);
    } catch (const Error& e) {
      std::string message = e.what();
      const std::string prefix = e.code() + ": ";
      if (message.rfind(prefix, 0) == 0) message = message.substr(prefix.size());
      send_error(res, e.code(), message);
    } catch (const json::exception& e) {
      send_error(res, errc::kMalformed, e.what());
    } catch (const std::exception& e) {
      send_error(res, "internal", e.what());
    }
  };
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  json body = json::parse(req.body);
  if (!body.is_object()) fail(errc::kMalformed, "request body must be a JSON object");
  return body;
}

int int_param(const httplib::Request& req, const std::string& name) {
  const auto text = req.get_param_value(name);
  try {
    size_t used = 0;
    const int value = std::stoi(text, &used);
    if (used == text.size()) return value;
  } catch (const std::exception&) {
  }
  fail(errc::kPrecondition, "query parameter " + name + " must be an integer");
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(errc::kNotFound, "missing " + path.filename().string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void register_routes(httplib::Server& server, SessionManager& sessions) {
  const Workspace& ws = sessions.workspace();

  server.Get("/api/health", guarded([](const httplib::Request&, httplib::Response& res) {
               send_json(res, {{"status", "ok"}});
             }));

  server.Get("/api/runs", guarded([&ws](const httplib::Request&, httplib::Response& res) {
               json models = json::array();
               for (auto seed : ws.trained_seeds()) models.push_back({{"seed", seed}, {"ratios", ws.unlearned_ratios(seed)}});
               send_json(res, {{"grid_runs", ws.grid_runs()}, {"models", models}, {"ratios", ws.config().split.ratios}});
             }));

  server.Get("/api/ratios", guarded([&ws](const httplib::Request& req, httplib::Response& res) {
               json available = json::object();
               for (auto seed : ws.trained_seeds()) available[std::to_string(seed)] = ws.unlearned_ratios(seed);
               json body = {{"supported", ws.config().split.ratios}, {"available", available}};
               if (req.has_param("seed")) {
                 const auto seed = static_cast<std::uint64_t>(int_param(req, "seed"));
                 body["available"] = {{std::to_string(seed), ws.unlearned_ratios(seed)}};
               }
               send_json(res, body);
             }));

  server.Get("/api/kcs", guarded([&sessions, &ws](const httplib::Request& req, httplib::Response& res) {
               require(req.has_param("ratio"), "query parameter ratio is required");
               const int ratio = int_param(req, "ratio");
               const auto& ratios = ws.config().split.ratios;
               if (std::find(ratios.begin(), ratios.end(), ratio) == ratios.end())
                 fail(errc::kPrecondition, "unsupported ratio " + std::to_string(ratio));
               std::map<std::string, int> counts;
               const auto ids = sessions.queue_for(ratio, "");
               for (const auto& id : ids) ++counts[ws.corpus().at(id).kc];
               json kcs = json::array();
               for (const auto& [kc, n] : counts) kcs.push_back({{"kc", kc}, {"targeted_items", n}});
               send_json(res, {{"ratio", ratio}, {"kcs", kcs}});
             }));

  server.Get(R"(/api/runs/([\w.-]+)/report)", guarded([&ws](const httplib::Request& req, httplib::Response& res) {
               res.set_content(read_file(ws.grid_dir(req.matches[1].str()) / "report" / "report.json"),
                               "application/json");
             }));

  server.Get(R"(/api/runs/([\w.-]+)/report/([\w.-]+))",
             guarded([&ws](const httplib::Request& req, httplib::Response& res) {
               const std::string file = req.matches[2].str();
               if (!kReportFiles.contains(file)) fail(errc::kNotFound, "no report file " + file);
               const auto path = ws.grid_dir(req.matches[1].str()) / "report" / file;
               const bool csv = file.ends_with(".csv");
               res.set_content(read_file(path), csv ? "text/csv" : "application/json");
             }));

  server.Post("/api/sessions", guarded([&sessions](const httplib::Request& req, httplib::Response& res) {
                const json body = parse_body(req);
                require(body.contains("ratio") && body.at("ratio").is_number_integer(), "ratio (integer) is required");
                SessionRequest request;
                request.ratio = body.at("ratio");
                request.kc = body.value("kc", "");
                if (body.contains("seed") && !body.at("seed").is_null()) request.seed = body.at("seed").get<std::uint64_t>();
                request.train_on_demand = body.value("train_on_demand", false);
                request.idempotency_key = body.value("idempotency_key", req.get_header_value("Idempotency-Key"));
                auto session = sessions.create(request);
                std::lock_guard lock(session->mutex());
                send_json(res, session->view(), 201);
              }));

  server.Get("/api/sessions", guarded([&sessions](const httplib::Request&, httplib::Response& res) {
               json out = json::array();
               for (const auto& id : sessions.ids()) {
                 auto s = sessions.get(id);
                 std::lock_guard lock(s->mutex());
                 out.push_back({{"session_id", id},
                                {"ratio", s->request().ratio},
                                {"kc", s->request().kc},
                                {"seed", s->seed()},
                                {"status", to_string(s->status())},
                                {"cursor", s->cursor()},
                                {"queue_length", s->queue().size()}});
               }
               send_json(res, {{"sessions", out}});
             }));

  server.Get(R"(/api/sessions/([\w-]+))", guarded([&sessions](const httplib::Request& req, httplib::Response& res) {
               auto s = sessions.get(req.matches[1].str());
               std::lock_guard lock(s->mutex());
               send_json(res, s->view());
             }));

  server.Post(R"(/api/sessions/([\w-]+)/attempt)",
              guarded([&sessions](const httplib::Request& req, httplib::Response& res) {
                auto s = sessions.get(req.matches[1].str());
                std::lock_guard lock(s->mutex());
                send_json(res, s->attempt());
              }));

  server.Post(R"(/api/sessions/([\w-]+)/feedback)",
              guarded([&sessions](const httplib::Request& req, httplib::Response& res) {
                const json body = parse_body(req);
                require(body.contains("feedback") && body.at("feedback").is_string(), "feedback (string) is required");
                auto s = sessions.get(req.matches[1].str());
                std::lock_guard lock(s->mutex());
                send_json(res, s->submit_feedback(body.at("feedback").get<std::string>()));
              }));

  server.Get(R"(/api/sessions/([\w-]+)/trajectory)",
             guarded([&sessions](const httplib::Request& req, httplib::Response& res) {
               auto s = sessions.get(req.matches[1].str());
               std::lock_guard lock(s->mutex());
               send_json(res, s->trajectory());
             }));

  server.Get(R"(/api/sessions/([\w-]+)/log)", guarded([&sessions](const httplib::Request& req, httplib::Response& res) {
               auto s = sessions.get(req.matches[1].str());
               std::lock_guard lock(s->mutex());
               send_json(res, {{"session_id", s->id()}, {"turns", s->log()}});
             }));

  server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) send_json(res, error_body("not-found", "no such route"), res.status);
  });
}

}  // namespace tal
