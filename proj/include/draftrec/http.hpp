#pragma once

#include <httplib.h>

#include "draftrec/service.hpp"

namespace draftrec {

namespace detail {

inline void send(httplib::Response& res, const ApiResponse& r) {
  res.status = r.status;
  res.set_content(r.body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, const ApiError& e) { send(res, {e.status, error_body(e)}); }

template <class F>
void guarded(httplib::Response& res, F&& f) {
  try {
    send(res, f());
  } catch (const ApiError& e) {
    send_error(res, e);
  } catch (const LegalityError& e) {
    send_error(res, ApiError(422, "illegal_pick", e.what(), "champion", e.rule()));
  } catch (const std::exception& e) {
    send_error(res, ApiError(500, "internal", e.what()));
  }
}

inline json parse_body(const httplib::Request& req) {
  if (req.body.empty()) throw ApiError(400, "malformed", "request body is empty");
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& e) {
    throw ApiError(400, "malformed", std::string("invalid JSON: ") + e.what());
  }
}

inline DraftService::RecQuery parse_rec_query(const httplib::Request& req) {
  DraftService::RecQuery q;
  if (req.has_param("k")) {
    const auto v = req.get_param_value("k");
    char* end = nullptr;
    const long long k = std::strtoll(v.c_str(), &end, 10);
    if (v.empty() || *end != '\0' || k < 1) throw ApiError(400, "malformed", "k must be a positive integer", "k");
    q.k = static_cast<std::size_t>(k);
  }
  if (req.has_param("strategy")) {
    try {
      q.strategy = parse_strategy(req.get_param_value("strategy"));
    } catch (const Error& e) {
      throw ApiError(400, "malformed", e.what(), "strategy");
    }
  }
  if (req.has_param("tau")) {
    const auto v = req.get_param_value("tau");
    char* end = nullptr;
    const double tau = std::strtod(v.c_str(), &end);
    if (v.empty() || *end != '\0' || !std::isfinite(tau)) throw ApiError(400, "malformed", "tau must be a number", "tau");
    q.tau = tau;
  }
  return q;
}

}  // namespace detail

// Registers the /v1 routes and /healthz on `server`.
inline void mount(httplib::Server& server, DraftService& svc) {
  using httplib::Request;
  using httplib::Response;
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  server.Options(R"(/.*)", [](const Request&, Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
  server.Get("/healthz", [](const Request&, Response& res) { detail::send(res, {200, {{"status", "ok"}}}); });
  server.Get("/v1/meta", [&svc](const Request&, Response& res) { detail::guarded(res, [&] { return svc.meta(); }); });
  server.Post("/v1/sessions", [&svc](const Request& req, Response& res) {
    detail::guarded(res, [&] { return svc.create_session(detail::parse_body(req)); });
  });
  server.Post(R"(/v1/sessions/([^/]+)/picks)", [&svc](const Request& req, Response& res) {
    detail::guarded(res, [&] { return svc.submit_pick(req.matches[1], detail::parse_body(req)); });
  });
  server.Get(R"(/v1/sessions/([^/]+)/state)", [&svc](const Request& req, Response& res) {
    detail::guarded(res, [&] { return svc.get_state(req.matches[1]); });
  });
  server.Get(R"(/v1/sessions/([^/]+)/recommendations)", [&svc](const Request& req, Response& res) {
    detail::guarded(res, [&] { return svc.recommendations(req.matches[1], detail::parse_rec_query(req)); });
  });
  server.set_error_handler([](const Request& req, Response& res) {
    if (!res.body.empty()) return;
    if (res.status == 404)
      detail::send_error(res, ApiError(404, "not_found", "no route for " + req.method + " " + req.path));
    else
      detail::send_error(res, ApiError(res.status, "error", "request failed"));
  });
}

}  // namespace draftrec
