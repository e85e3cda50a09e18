#include "dgkit/service.hpp"

#include <fstream>
#include <thread>

#include <httplib.h>

#include "dgkit/graph_json.hpp"

namespace dgkit {

using json = nlohmann::json;

namespace {

HttpResponse json_response(int status, json body) {
  body["v"] = 1;
  return {status, "application/json", body.dump()};
}

HttpResponse error_response(const Error& e) {
  return json_response(http_status(e.code()), {{"code", std::string(to_string(e.code()))},
                                               {"message", e.what()},
                                               {"detail", e.detail()}});
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::size_t pos = 0;
  while (pos < path.size()) {
    auto next = path.find('/', pos);
    if (next == std::string::npos) next = path.size();
    if (next > pos) parts.push_back(path.substr(pos, next - pos));
    pos = next + 1;
  }
  return parts;
}

std::size_t parse_index(const std::string& s, const char* what) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos || s.size() > 9)
    throw Error(ErrorCode::BadRequest, std::string("invalid ") + what + " '" + s + "'");
  return std::stoul(s);
}

json parse_body(const HttpRequest& r) {
  if (r.body.empty()) return json::object();
  try {
    json j = json::parse(r.body);
    if (!j.is_object()) throw Error(ErrorCode::BadRequest, "request body must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::BadRequest, std::string("malformed JSON body: ") + e.what());
  }
}

std::string request_id(const HttpRequest& r, const json& body) {
  if (auto it = r.headers.find("x-request-id"); it != r.headers.end()) return it->second;
  if (body.contains("request_id")) return body["request_id"].get<std::string>();
  return {};
}

NodeRef grounding_ref(const json& j) {
  if (j.is_string()) {
    auto ref = parse_node_ref(j.get<std::string>());
    if (!ref) throw Error(ErrorCode::BadRequest, "grounding ref must be 'doc#node'");
    return *ref;
  }
  return node_ref_from_json(j);
}

Turn turn_from_body(const json& b) {
  Turn t;
  if (b.contains("role")) {
    auto role = parse_role(b["role"].get<std::string>());
    if (!role) throw Error(ErrorCode::BadRequest, "role must be user or system");
    t.role = *role;
  }
  t.utterance = b.value("utterance", "");
  t.act = b.value("act", "");
  for (const auto& g : b.value("grounding", json::array())) t.grounding.push_back(grounding_ref(g));
  t.goal_index = b.value("goal_index", std::size_t{0});
  return t;
}

}  // namespace

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownFlow:
    case ErrorCode::UnknownDialog:
    case ErrorCode::UnknownDoc:
    case ErrorCode::UnknownRef:
    case ErrorCode::NotFound: return 404;
    case ErrorCode::FlowAlreadyClaimed:
    case ErrorCode::DialogClosed:
    case ErrorCode::AlreadyClosed:
    case ErrorCode::OpenDialogPresent: return 409;
    case ErrorCode::Unauthorized: return 401;
    case ErrorCode::Forbidden: return 403;
    case ErrorCode::BadRequest: return 400;
    case ErrorCode::RoleOrderViolation:
    case ErrorCode::UnknownAct:
    case ErrorCode::DanglingGrounding:
    case ErrorCode::WrongGoal:
    case ErrorCode::NotActive:
    case ErrorCode::BadRatios:
    case ErrorCode::UnknownLocale:
    case ErrorCode::MissingSlot:
    case ErrorCode::InvalidArgument: return 422;
    default: return 500;
  }
}

std::map<std::string, ApiSession> load_tokens(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot read token file " + path.string());
  std::map<std::string, ApiSession> out;
  try {
    const json j = json::parse(in);
    for (const auto& t : j.at("tokens")) {
      ApiSession s;
      s.writer_id = t.at("writer_id").get<std::string>();
      const auto caps = t.value("capabilities", std::vector<std::string>{"annotate"});
      s.annotate = std::find(caps.begin(), caps.end(), "annotate") != caps.end();
      s.admin = std::find(caps.begin(), caps.end(), "admin") != caps.end();
      const auto token = t.at("token").get<std::string>();
      if (token.empty() || s.writer_id.empty())
        throw Error(ErrorCode::InvalidArgument, "token and writer_id must not be empty");
      out.emplace(token, std::move(s));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, path.string() + ": " + e.what());
  }
  return out;
}

Service::Service(DialogStore& store, const TemplateSet& templates, ServiceConfig config)
    : store_(store), templates_(templates), config_(std::move(config)) {}

const ApiSession& Service::authenticate(const HttpRequest& r) const {
  auto it = r.headers.find("authorization");
  constexpr std::string_view kBearer = "Bearer ";
  if (it == r.headers.end() || !it->second.starts_with(kBearer))
    throw Error(ErrorCode::Unauthorized, "missing bearer token");
  auto session = config_.tokens.find(it->second.substr(kBearer.size()));
  if (session == config_.tokens.end()) throw Error(ErrorCode::Unauthorized, "unknown token");
  return session->second;
}

void Service::check_owner(const ApiSession& session, const std::string& dialog_id) const {
  const Dialog d = store_.dialog(dialog_id);
  if (!session.admin && d.writer_id != session.writer_id)
    throw Error(ErrorCode::Forbidden, "dialog '" + dialog_id + "' belongs to another writer",
                dialog_id);
}

json Service::node_json(const NodeRef& ref) const {
  const Node& n = store_.graph().node(ref);
  return {{"ref", to_json(ref)},
          {"type", std::string(to_string(n.type))},
          {"text", n.text},
          {"is_super_leaf", n.is_super_leaf()}};
}

json Service::goal_context_json(const DialogFlow& flow, std::size_t k) const {
  if (k >= flow.goals.size())
    throw Error(ErrorCode::NotFound, "flow '" + flow.flow_id + "' has no goal " + std::to_string(k));
  const Goal& goal = flow.goals[k];
  const GoalContext ctx = goal_context(store_.graph(), goal.node);
  json path = json::array();
  for (const auto& r : ctx.path_from_root) path.push_back(node_json(r));
  json siblings = json::array();
  for (const auto& r : ctx.neighbors.siblings) siblings.push_back(node_json(r));
  json children = json::array();
  for (const auto& r : ctx.neighbors.children) children.push_back(node_json(r));
  json slots = json::object();
  for (const auto& [name, slot] : goal.prompt.slots) {
    json refs = json::array();
    for (const auto& r : slot.refs) refs.push_back(to_json(r));
    slots[name] = {{"text", slot.text}, {"refs", refs}};
  }
  return {{"flow_id", flow.flow_id},
          {"goal_index", k},
          {"goal", node_json(goal.node)},
          {"prompt",
           {{"guideline", goal.prompt.guideline},
            {"pattern", std::string(to_string(goal.prompt.pattern))},
            {"slots", std::move(slots)}}},
          {"path_from_root", std::move(path)},
          {"neighbors",
           {{"parent", ctx.neighbors.parent ? node_json(*ctx.neighbors.parent) : json(nullptr)},
            {"siblings", std::move(siblings)},
            {"children", std::move(children)}}}};
}

json Service::assignment_json(const Assignment& a) const {
  const auto flow = store_.flow(a.flow_id);
  const Dialog d = store_.dialog(a.dialog_id);
  const auto active = d.active_goal();
  return {{"flow_id", a.flow_id},
          {"dialog_id", a.dialog_id},
          {"flow", to_json(*flow)},
          {"dialog", to_json(d)},
          {"goal_context", active ? goal_context_json(*flow, *active) : json(nullptr)}};
}

HttpResponse Service::handle(const HttpRequest& r) {
  try {
    const auto parts = split_path(r.path);
    const bool get = r.method == "GET";
    const bool post = r.method == "POST";
    const ApiSession& session = authenticate(r);

    // GET /flows/next
    if (get && parts.size() == 2 && parts[0] == "flows" && parts[1] == "next") {
      if (!session.annotate) throw Error(ErrorCode::Forbidden, "token cannot annotate");
      auto a = store_.next_flow(session.writer_id, request_id(r, json::object()));
      if (!a) return json_response(200, {{"assignment", nullptr}});
      return json_response(200, {{"assignment", assignment_json(*a)}});
    }
    // GET /flows/{id}[?locale=xx]
    if (get && parts.size() == 2 && parts[0] == "flows") {
      auto flow = store_.flow(parts[1]);
      if (!flow) throw Error(ErrorCode::UnknownFlow, "unknown flow '" + parts[1] + "'", parts[1]);
      if (auto loc = r.query.find("locale"); loc != r.query.end())
        for (auto& g : flow->goals)
          g.prompt.guideline = render_template(templates_, g.prompt.pattern, g.prompt.slots, loc->second);
      return json_response(200, {{"flow", to_json(*flow)}});
    }
    // GET /goals/{flow}/{idx}/context
    if (get && parts.size() == 4 && parts[0] == "goals" && parts[3] == "context") {
      auto flow = store_.flow(parts[1]);
      if (!flow) throw Error(ErrorCode::UnknownFlow, "unknown flow '" + parts[1] + "'", parts[1]);
      return json_response(200, goal_context_json(*flow, parse_index(parts[2], "goal index")));
    }
    // POST /dialogs
    if (post && parts.size() == 1 && parts[0] == "dialogs") {
      if (!session.annotate) throw Error(ErrorCode::Forbidden, "token cannot annotate");
      const json body = parse_body(r);
      if (!body.contains("flow_id") || !body["flow_id"].is_string())
        throw Error(ErrorCode::BadRequest, "flow_id is required");
      const auto id =
          store_.create_dialog(body["flow_id"].get<std::string>(), session.writer_id, request_id(r, body));
      return json_response(201, {{"dialog_id", id}, {"dialog", to_json(store_.dialog(id))}});
    }
    // GET /dialogs/{id}
    if (get && parts.size() == 2 && parts[0] == "dialogs") {
      check_owner(session, parts[1]);
      return json_response(200, {{"dialog", to_json(store_.dialog(parts[1]))}});
    }
    // POST /dialogs/{id}/turns
    if (post && parts.size() == 3 && parts[0] == "dialogs" && parts[2] == "turns") {
      check_owner(session, parts[1]);
      const json body = parse_body(r);
      const auto index = store_.append_turn(parts[1], turn_from_body(body), request_id(r, body));
      return json_response(201, {{"turn_index", index}});
    }
    // POST /dialogs/{id}/turns/{idx}: a revision of an earlier turn
    if (post && parts.size() == 4 && parts[0] == "dialogs" && parts[2] == "turns") {
      check_owner(session, parts[1]);
      const json body = parse_body(r);
      const auto revision = store_.revise_turn(parts[1], parse_index(parts[3], "turn index"),
                                               turn_from_body(body), request_id(r, body));
      return json_response(201, {{"revision", revision}});
    }
    // POST /dialogs/{id}/goals/{idx}/status
    if (post && parts.size() == 5 && parts[0] == "dialogs" && parts[2] == "goals" &&
        parts[4] == "status") {
      check_owner(session, parts[1]);
      const json body = parse_body(r);
      const auto status = parse_goal_status(body.value("status", ""));
      if (!status) throw Error(ErrorCode::BadRequest, "status must be completed or skipped");
      const auto adv = store_.set_goal_status(parts[1], parse_index(parts[3], "goal index"), *status,
                                              request_id(r, body));
      return json_response(200, {{"next_active", adv.next_active ? json(*adv.next_active) : json(nullptr)},
                                 {"closed", adv.closed}});
    }
    // GET /stats
    if (get && parts.size() == 1 && parts[0] == "stats") {
      if (!session.admin) throw Error(ErrorCode::Forbidden, "stats require the admin capability");
      return json_response(
          200, to_json(compute_stats(store_.dialogs(), store_.graph(), store_.taxonomy())));
    }
    // GET /export[?seed=N]
    if (get && parts.size() == 1 && parts[0] == "export") {
      if (!session.admin) throw Error(ErrorCode::Forbidden, "export requires the admin capability");
      std::uint64_t seed = config_.export_seed;
      if (auto it = r.query.find("seed"); it != r.query.end()) {
        try {
          seed = std::stoull(it->second);
        } catch (const std::exception&) {
          throw Error(ErrorCode::BadRequest, "seed must be an unsigned integer");
        }
      }
      const auto dialogs = store_.dialogs();
      const auto splits = split_dataset(dialogs, config_.ratios, seed);
      return {200, "application/x-ndjson", export_corpus(dialogs, splits)};
    }
    throw Error(ErrorCode::NotFound, "no endpoint " + r.method + " " + r.path);
  } catch (const Error& e) {
    return error_response(e);
  } catch (const json::exception& e) {
    return error_response(Error(ErrorCode::BadRequest, e.what()));
  }
}

// -- server -------------------------------------------------------------------------

struct ServiceHandle::Impl {
  DocumentGraph graph;
  TemplateSet templates;
  std::unique_ptr<DialogStore> store;
  std::unique_ptr<Service> service;
  httplib::Server server;
  std::thread thread;
  int port = 0;
};

ServiceHandle::ServiceHandle() : impl_(std::make_unique<Impl>()) {}

ServiceHandle::~ServiceHandle() { stop(); }

int ServiceHandle::port() const { return impl_->port; }

void ServiceHandle::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

void ServiceHandle::wait() {
  if (impl_->thread.joinable()) impl_->thread.join();
}

Service& ServiceHandle::service() { return *impl_->service; }

namespace {

void register_flows(DialogStore& store, const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  std::vector<fs::path> files;
  if (fs::is_directory(path)) {
    for (const auto& e : fs::directory_iterator(path))
      if (e.path().string().ends_with(".flow.json")) files.push_back(e.path());
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(path);
  }
  for (const auto& f : files) {
    std::ifstream in(f);
    if (!in) throw Error(ErrorCode::CorpusLoadError, "cannot read flow file " + f.string());
    try {
      store.add_flow(flow_from_json(json::parse(in)));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::CorpusLoadError, f.string() + ": " + e.what());
    }
  }
}

void copy_request(const httplib::Request& in, HttpRequest& out) {
  out.method = in.method;
  out.path = in.path;
  for (const auto& [k, v] : in.params) out.query[k] = v;
  for (const auto& [k, v] : in.headers) {
    std::string key = k;
    std::transform(key.begin(), key.end(), key.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    out.headers[key] = v;
  }
  out.body = in.body;
}

}  // namespace

std::unique_ptr<ServiceHandle> serve(const ServeConfig& config) {
  std::unique_ptr<ServiceHandle> handle(new ServiceHandle());
  auto& impl = *handle->impl_;
  try {
    impl.graph = load_graph(config.corpus_path);
  } catch (const Error& e) {
    throw Error(ErrorCode::CorpusLoadError, e.what(), config.corpus_path.string());
  }
  const auto report = validate(impl.graph);
  if (!report.ok())
    throw Error(ErrorCode::CorpusLoadError,
                "corpus graph fails validation: " + report.violations.front().rule + " at " +
                    to_string(report.violations.front().node),
                config.corpus_path.string());
  impl.templates.load_directory(config.templates_dir);

  ServiceConfig svc;
  DialogStore::Options store_opts;
  if (!config.store_config_path.empty()) {
    const auto cfg = load_store_config(config.store_config_path);
    store_opts.taxonomy = cfg.taxonomy;
    svc.ratios = cfg.ratios;
  }
  if (!config.tokens_path.empty()) svc.tokens = load_tokens(config.tokens_path);
  impl.store = std::make_unique<DialogStore>(impl.graph, config.store_path, store_opts);
  for (const auto& p : config.flow_paths) register_flows(*impl.store, p);
  impl.service = std::make_unique<Service>(*impl.store, impl.templates, std::move(svc));

  auto forward = [&impl](const httplib::Request& req, httplib::Response& res) {
    HttpRequest r;
    copy_request(req, r);
    const HttpResponse out = impl.service->handle(r);
    res.status = out.status;
    res.set_content(out.body, out.content_type);
  };
  impl.server.Get(".*", forward);
  impl.server.Post(".*", forward);

  if (config.port == 0) {
    impl.port = impl.server.bind_to_any_port(config.host);
    if (impl.port < 0) throw Error(ErrorCode::BindError, "cannot bind " + config.host);
  } else {
    if (!impl.server.bind_to_port(config.host, config.port))
      throw Error(ErrorCode::BindError,
                  "cannot bind " + config.host + ":" + std::to_string(config.port));
    impl.port = config.port;
  }
  impl.thread = std::thread([&impl] { impl.server.listen_after_bind(); });
  impl.server.wait_until_ready();
  return handle;
}

}  // namespace dgkit
