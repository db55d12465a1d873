#pragma once

// HTTP endpoint.
//
//   POST /predict   {"gender": "M", "age": 55, "results": {"Hemoglobin, (HGB)": 128, ...}}
//                   200 -> prediction_json(...)
//                   400 -> {"error": "malformed_json" | "malformed_request", "message": ...}
//                   422 -> {"error": "unknown_label", "label": ..., "message": ...}
//                          {"error": "invalid_value" | "rejected", "message": ...}
//   GET  /health    200 {"status": "ok", "model_version": ...}
//
// `results` keys are catalog labels or short codes. Gender accepts "M"/"F"
// or 1/0.

#include <string>
#include <string_view>

#include "httplib.h"
#include "json.hpp"

#include "ulm/inference.hpp"

namespace ulm {

struct HttpResult {
  int status = 200;
  std::string body;
};

namespace server_detail {

inline HttpResult error(int status, const std::string& code, const std::string& message,
                        const std::string& label = {}) {
  nlohmann::json j{{"error", code}, {"message", message}};
  if (!label.empty()) j["label"] = label;
  return {status, j.dump()};
}

}  // namespace server_detail

/// Request body -> response; no I/O, safe to call concurrently.
inline HttpResult handle_predict(const ModelBundle& model, const InferenceConfig& cfg, std::string_view body) {
  using server_detail::error;
  const auto& cat = FeatureCatalog::standard();
  nlohmann::json req;
  try {
    req = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    return error(400, "malformed_json", e.what());
  }
  if (!req.is_object()) return error(400, "malformed_request", "request must be a JSON object");
  for (const auto& [k, v] : req.items()) {
    if (k != "gender" && k != "age" && k != "results") return error(400, "malformed_request", "unknown field '" + k + "'");
  }

  LabRecord record;
  try {
    if (req.contains("gender") && !req["gender"].is_null()) {
      const auto& g = req["gender"];
      std::optional<double> v;
      if (g.is_string()) v = parse_gender(g.get<std::string>());
      if (g.is_number()) v = g.get<double>() == 1.0 ? std::optional(1.0) : g.get<double>() == 0.0 ? std::optional(0.0) : std::nullopt;
      if (!v) return error(422, "invalid_value", "gender must be \"M\", \"F\", 1 or 0");
      record.set(fid::gender, *v);
    }
    if (req.contains("age") && !req["age"].is_null()) {
      if (!req["age"].is_number()) return error(422, "invalid_value", "age must be a number");
      record.set(fid::age, req["age"].get<double>());
    }
    if (req.contains("results")) {
      const auto& results = req["results"];
      if (!results.is_object()) return error(400, "malformed_request", "results must be an object");
      for (const auto& [label, value] : results.items()) {
        const auto f = cat.find(label);
        if (!f) return error(422, "unknown_label", "unknown test label '" + label + "'", label);
        if (!value.is_number()) return error(422, "invalid_value", "value of '" + label + "' must be a number", label);
        if (record.has(*f)) return error(422, "invalid_value", "'" + label + "' given twice", label);
        record.set(*f, value.get<double>());
      }
    }
  } catch (const DataError& e) {
    return error(422, "invalid_value", e.what());
  }

  const Scored s = score_record(model, record, cfg);
  if (!s.prediction) return error(422, "rejected", s.reason);
  return {200, prediction_json(model, *s.prediction, cfg).dump()};
}

/// Registers the routes on `srv`. `model` must outlive the server.
inline void configure_server(httplib::Server& srv, const ModelBundle& model, const InferenceConfig& cfg) {
  srv.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof(yes));
  });
  srv.Post("/predict", [&model, cfg](const httplib::Request& req, httplib::Response& res) {
    const HttpResult r = handle_predict(model, cfg, req.body);
    res.status = r.status;
    res.set_content(r.body, "application/json");
  });
  srv.Get("/health", [&model](const httplib::Request&, httplib::Response& res) {
    res.set_content(nlohmann::json{{"status", "ok"}, {"model_version", model.version}}.dump(), "application/json");
  });
}

}  // namespace ulm
