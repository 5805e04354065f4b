#pragma once

// HTTP+JSON front end over Advisor. Every response body carries
// schema_version; errors are {code, message, field}.

#include <chrono>
#include <string>
#include <thread>

#include <httplib.h>

#include "vacuform/advisor.hpp"

namespace vacuform {

inline constexpr int kApiSchemaVersion = 1;

inline int http_status(ErrorCode c) {
  switch (c) {
    case ErrorCode::validation:
    case ErrorCode::ingestion:
    case ErrorCode::configuration:
      return 400;
    case ErrorCode::segmentation:
      return 422;
    case ErrorCode::not_found:
      return 404;
    case ErrorCode::conflict:
      return 409;
    default:
      return 500;
  }
}

inline json error_body(const std::string& code, const std::string& message, const std::string& field) {
  return {{"schema_version", kApiSchemaVersion}, {"code", code}, {"message", message}, {"field", field}};
}

namespace detail {

inline void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <typename F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const Error& e) {
    send_json(res, http_status(e.code()), error_body(std::string(to_string(e.code())), e.what(), e.field()));
  } catch (const json::exception& e) {
    send_json(res, 400, error_body("validation", std::string("malformed JSON: ") + e.what(), "body"));
  } catch (const std::exception& e) {
    send_json(res, 500, error_body("internal", e.what(), ""));
  }
}

inline json parse_body(const std::string& body) {
  if (body.empty()) return json::object();
  try {
    return json::parse(body);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::validation, std::string("request body is not JSON: ") + e.what(), "body");
  }
}

inline std::string form_value(const httplib::Request& req, const std::string& key) {
  if (!req.has_file(key)) fail(ErrorCode::validation, "missing multipart field '" + key + "'", key);
  return req.get_file_value(key).content;
}

/// Repeated `views` parts, in upload order.
inline ViewSet views_from_multipart(const httplib::Request& req) {
  const auto parts = req.get_file_values("views");
  if (parts.size() != std::size_t(kViewCount))
    fail(ErrorCode::validation, "expected " + std::to_string(kViewCount) + " views, got " + std::to_string(parts.size()),
         "views");
  ViewSet vs;
  for (std::size_t k = 0; k < parts.size(); ++k)
    vs.views.push_back(decode_png_bytes(parts[k].content, "views[" + std::to_string(k) + "]"));
  vs.validate();
  return vs;
}

}  // namespace detail

class AdvisorService {
 public:
  explicit AdvisorService(Advisor& advisor) : advisor_(advisor) {
    server_.set_payload_max_length(std::size_t(256) << 20);
    server_.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    routes();
  }

  httplib::Server& server() { return server_; }

  /// Binds; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port) {
    const int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (bound < 0) fail(ErrorCode::io, "cannot bind " + host + ":" + std::to_string(port), "port");
    return bound;
  }
  bool run() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }

 private:
  void routes() {
    using detail::guarded;
    using detail::send_json;

    server_.Get("/v1/health", [](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, {{"schema_version", kApiSchemaVersion}, {"status", "ok"}});
    });

    server_.Get("/v1/models", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] {
        json models = json::array();
        for (const auto& m : advisor_.list_models()) {
          json j = m.to_json();
          j.erase("path");
          models.push_back(j);
        }
        send_json(res, 200, {{"schema_version", kApiSchemaVersion}, {"models", models}});
      });
    });

    server_.Post("/v1/suggest", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        if (!req.is_multipart_form_data())
          fail(ErrorCode::validation, "suggest expects multipart/form-data", "content-type");
        const auto t0 = std::chrono::steady_clock::now();
        const std::string model_id = detail::form_value(req, "model_id");
        const ProcessParams current = params_from_json(detail::parse_body(detail::form_value(req, "params")));
        SuggestConfig cfg;
        if (req.has_file("options")) {
          const json o = detail::parse_body(req.get_file_value("options").content);
          cfg.n_composites = o.value("n_composites", cfg.n_composites);
          cfg.method = o.value("method", cfg.method);
          cfg.no_change_epsilon = o.value("no_change_epsilon", cfg.no_change_epsilon);
          cfg.seed = o.value("seed", cfg.seed);
        }
        const ViewSet views = detail::views_from_multipart(req);
        json body = advisor_.suggest(model_id, views, current, cfg).to_json();
        body["model_id"] = model_id;
        body["latency_ms"] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        send_json(res, 200, body);
      });
    });

    server_.Post("/v1/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        SessionRequest r;
        if (req.is_multipart_form_data()) {
          r = SessionRequest::from_json(detail::parse_body(detail::form_value(req, "request")));
          if (req.has_file("views")) r.initial_views = detail::views_from_multipart(req);
        } else {
          r = SessionRequest::from_json(detail::parse_body(req.body));
        }
        send_json(res, 201, advisor_.create_session(r).to_json());
      });
    });

    server_.Get(R"(/v1/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { send_json(res, 200, advisor_.get_session(req.matches[1]).to_json()); });
    });

    server_.Post(R"(/v1/sessions/([^/]+)/cycles)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        json body;
        std::optional<ViewSet> uploaded;
        if (req.is_multipart_form_data()) {
          body = detail::parse_body(detail::form_value(req, "request"));
          if (req.has_file("views")) uploaded = detail::views_from_multipart(req);
        } else {
          body = detail::parse_body(req.body);
        }
        if (!body.contains("apply") || !body["apply"].is_boolean())
          fail(ErrorCode::validation, "body must contain boolean 'apply'", "apply");
        std::optional<Verdict> verdict;
        if (body.contains("verdict") && body["verdict"].is_string()) {
          const auto v = body["verdict"].get<std::string>();
          if (v != "good" && v != "bad") fail(ErrorCode::validation, "verdict must be good or bad", "verdict");
          verdict = v == "good" ? Verdict::good : Verdict::bad;
        }
        const std::string id = req.matches[1];
        const auto c = advisor_.run_cycle(id, body["apply"].get<bool>(), uploaded, verdict);
        send_json(res, 201, {{"schema_version", kApiSchemaVersion}, {"session_id", id}, {"cycle", c.to_json()}});
      });
    });

    server_.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.status = 204;
    });
  }

  Advisor& advisor_;
  httplib::Server server_;
};

}  // namespace vacuform
