#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dgkit/dialog_store.hpp"
#include "dgkit/prompt_gen.hpp"

namespace dgkit {

struct ApiSession {
  std::string writer_id;
  bool annotate = true;
  bool admin = false;
};

struct ServiceConfig {
  /// Bearer token -> session.
  std::map<std::string, ApiSession> tokens;
  SplitRatios ratios;
  /// Seed used by GET /export when the request gives none.
  std::uint64_t export_seed = 0;
  PromptOptions prompt_options;
};

/// Token file: {"tokens":[{"token":"...","writer_id":"...","capabilities":["annotate","admin"]}]}.
std::map<std::string, ApiSession> load_tokens(const std::filesystem::path& path);

struct HttpRequest {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  /// Lower-case header names.
  std::map<std::string, std::string> headers;
  std::string body;
};

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;

  nlohmann::json json() const { return nlohmann::json::parse(body); }
};

/// HTTP status for an error code.
int http_status(ErrorCode code);

/// Endpoint logic, independent of the transport. Bodies carry "v":1; errors
/// are {code, message, detail}. A client request id is read from the
/// X-Request-Id header (or a "request_id" body field).
class Service {
 public:
  Service(DialogStore& store, const TemplateSet& templates, ServiceConfig config);

  HttpResponse handle(const HttpRequest& request);

  DialogStore& store() { return store_; }

 private:
  const ApiSession& authenticate(const HttpRequest& request) const;
  nlohmann::json goal_context_json(const DialogFlow& flow, std::size_t goal_index) const;
  nlohmann::json assignment_json(const Assignment& a) const;
  nlohmann::json node_json(const NodeRef& ref) const;
  void check_owner(const ApiSession& session, const std::string& dialog_id) const;

  DialogStore& store_;
  const TemplateSet& templates_;
  ServiceConfig config_;
};

struct ServeConfig {
  std::string host = "127.0.0.1";
  /// 0 picks a free port.
  int port = 8080;
  /// Graph JSON produced by `ingest`.
  std::filesystem::path corpus_path;
  /// Empty keeps the store in memory.
  std::filesystem::path store_path;
  std::filesystem::path tokens_path;
  std::filesystem::path templates_dir;
  /// Optional taxonomy/ratio config.
  std::filesystem::path store_config_path;
  /// .flow.json files (or directories of them) registered at startup.
  std::vector<std::filesystem::path> flow_paths;
};

/// A running HTTP server. Destroying the handle stops it.
class ServiceHandle {
 public:
  ~ServiceHandle();
  ServiceHandle(const ServiceHandle&) = delete;
  ServiceHandle& operator=(const ServiceHandle&) = delete;

  int port() const;
  void stop();
  /// Blocks until stop() is called from another thread or a signal handler.
  void wait();
  Service& service();

 private:
  friend std::unique_ptr<ServiceHandle> serve(const ServeConfig& config);
  ServiceHandle();
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Loads graph, templates, tokens and store, registers the given flows and
/// starts listening. Throws CorpusLoadError, BindError.
std::unique_ptr<ServiceHandle> serve(const ServeConfig& config);

}  // namespace dgkit
