#include <doctest.h>

#include <fstream>
#include <set>

#include <httplib.h>

#include "dgkit/graph_json.hpp"
#include "dgkit/service.hpp"
#include "support.hpp"

using namespace dgkit;
using namespace dgkit::testing;
using json = nlohmann::json;

namespace {

struct Fixture {
  DocumentGraph graph = figure1_graph();
  DialogStore store{graph};
  Service service{store, default_templates(), config()};
  std::vector<DialogFlow> flows;

  Fixture() {
    for (std::uint64_t seed : {10ull, 11ull}) {
      FlowParams p;
      p.seed = seed;
      p.n_goals = 3;
      flows.push_back(generate_flow(graph, p, default_templates()));
      store.add_flow(flows.back());
    }
  }

  static ServiceConfig config() {
    ServiceConfig c;
    c.tokens = {{"tok-alice", {"alice", true, false}},
                {"tok-bob", {"bob", true, false}},
                {"tok-admin", {"admin", false, true}},
                {"tok-reader", {"reader", false, false}}};
    return c;
  }

  HttpResponse call(const std::string& method, const std::string& path, const std::string& token,
                    const json& body = nullptr, std::map<std::string, std::string> query = {},
                    const std::string& request_id = {}) {
    HttpRequest r;
    r.method = method;
    r.path = path;
    r.query = std::move(query);
    if (!token.empty()) r.headers["authorization"] = "Bearer " + token;
    if (!request_id.empty()) r.headers["x-request-id"] = request_id;
    if (!body.is_null()) r.body = body.dump();
    return service.handle(r);
  }
};

json turn_body(const std::string& role, const std::string& act, std::size_t goal,
               json grounding = json::array(), const std::string& text = "words here") {
  return {{"role", role}, {"act", act}, {"goal_index", goal}, {"grounding", grounding},
          {"utterance", text}};
}

void expect_error(const HttpResponse& r, int status, const std::string& code) {
  CHECK(r.status == status);
  const auto j = r.json();
  CHECK(j.at("code") == code);
  CHECK(j.at("v") == 1);
  CHECK(j.contains("message"));
  CHECK(j.contains("detail"));
}

}  // namespace

TEST_SUITE("service") {
  TEST_CASE("authentication and capabilities") {
    Fixture f;
    expect_error(f.call("GET", "/flows/next", ""), 401, "Unauthorized");
    expect_error(f.call("GET", "/flows/next", "nope"), 401, "Unauthorized");
    expect_error(f.call("GET", "/flows/next", "tok-reader"), 403, "Forbidden");
    expect_error(f.call("GET", "/stats", "tok-alice"), 403, "Forbidden");
    expect_error(f.call("GET", "/export", "tok-alice"), 403, "Forbidden");
    expect_error(f.call("GET", "/nowhere", "tok-alice"), 404, "NotFound");
    CHECK(f.call("GET", "/stats", "tok-admin").status == 200);
  }

  TEST_CASE("scripted annotation session") {
    Fixture f;
    auto next = f.call("GET", "/flows/next", "tok-alice");
    REQUIRE(next.status == 200);
    const auto a = next.json().at("assignment");
    const std::string id = a.at("dialog_id");
    CHECK(a.at("flow_id") == f.flows[0].flow_id);
    CHECK(a.at("goal_context").at("goal_index") == 0);
    CHECK(f.call("GET", "/flows/next", "tok-alice").json().at("assignment").at("dialog_id") == id);

    const auto bob = f.call("GET", "/flows/next", "tok-bob").json().at("assignment");
    CHECK(bob.at("flow_id") == f.flows[1].flow_id);
    CHECK(f.call("GET", "/flows/next", "tok-admin").status == 403);
    CHECK(f.call("GET", "/flows/next", "tok-bob").json().at("assignment").at("flow_id") ==
          f.flows[1].flow_id);

    expect_error(f.call("POST", "/dialogs", "tok-bob", {{"flow_id", f.flows[0].flow_id}}), 409,
                 "FlowAlreadyClaimed");
    expect_error(f.call("POST", "/dialogs", "tok-bob", {{"flow_id", "flow-x"}}), 404, "UnknownFlow");
    expect_error(f.call("POST", "/dialogs", "tok-bob", json::object()), 400, "BadRequest");

    const std::string turns = "/dialogs/" + id + "/turns";
    const std::string goal0 = f.flows[0].goals[0].node.doc_id + "#" + f.flows[0].goals[0].node.node_id;
    expect_error(f.call("POST", turns, "tok-alice", turn_body("system", "answer", 0)), 422,
                 "RoleOrderViolation");
    expect_error(f.call("POST", turns, "tok-alice", turn_body("user", "verify_condition", 0)), 422,
                 "UnknownAct");
    expect_error(f.call("POST", turns, "tok-alice", turn_body("user", "query", 0, {"fund-guide#zz"})),
                 422, "DanglingGrounding");
    expect_error(f.call("POST", turns, "tok-alice", turn_body("user", "query", 2)), 422, "WrongGoal");
    expect_error(f.call("POST", turns, "tok-alice", turn_body("robot", "query", 0)), 400, "BadRequest");
    expect_error(f.call("POST", turns, "tok-bob", turn_body("user", "query", 0)), 403, "Forbidden");
    expect_error(f.call("POST", "/dialogs/dlg-999999/turns", "tok-alice", turn_body("user", "query", 0)),
                 404, "UnknownDialog");

    auto r = f.call("POST", turns, "tok-alice", turn_body("user", "query", 0, {goal0}), {}, "t-1");
    CHECK(r.status == 201);
    CHECK(r.json().at("turn_index") == 0);
    r = f.call("POST", turns, "tok-alice", turn_body("user", "query", 0, {goal0}), {}, "t-1");
    CHECK(r.json().at("turn_index") == 0);
    r = f.call("POST", turns, "tok-alice",
               turn_body("system", "answer", 0,
                         json::array({{{"doc_id", "fund-guide"}, {"node_id", "N1"}}})));
    CHECK(r.json().at("turn_index") == 1);

    const std::string status = "/dialogs/" + id + "/goals/";
    expect_error(f.call("POST", status + "1/status", "tok-alice", {{"status", "completed"}}), 422,
                 "NotActive");
    expect_error(f.call("POST", status + "0/status", "tok-alice", {{"status", "pending"}}), 422,
                 "InvalidArgument");
    expect_error(f.call("POST", status + "0/status", "tok-alice", {{"status", "done"}}), 400,
                 "BadRequest");
    r = f.call("POST", status + "2/status", "tok-alice", {{"status", "skipped"}});
    CHECK(r.json() == json{{"v", 1}, {"next_active", 0}, {"closed", false}});
    r = f.call("POST", status + "0/status", "tok-alice", {{"status", "completed"}});
    CHECK(r.json().at("next_active") == 1);

    expect_error(f.call("GET", "/export", "tok-admin"), 409, "OpenDialogPresent");

    f.call("POST", turns, "tok-alice", turn_body("user", "query", 1));
    f.call("POST", turns, "tok-alice", turn_body("system", "clarify_choice", 1));
    r = f.call("POST", status + "1/status", "tok-alice", {{"status", "completed"}});
    CHECK(r.json().at("closed") == true);
    expect_error(f.call("POST", turns, "tok-alice", turn_body("user", "query", 1)), 409, "DialogClosed");
    expect_error(f.call("POST", status + "1/status", "tok-alice", {{"status", "skipped"}}), 409,
                 "AlreadyClosed");

    const auto d = f.call("GET", "/dialogs/" + id, "tok-alice").json().at("dialog");
    CHECK(d.at("closed") == true);
    CHECK(d.at("turns").size() == 4);
    CHECK(f.call("GET", "/dialogs/" + id, "tok-admin").status == 200);
    expect_error(f.call("GET", "/dialogs/" + id, "tok-bob"), 403, "Forbidden");

    // Close bob's dialog too, then export and re-import.
    const std::string bob_id = bob.at("dialog_id");
    for (int k = 0; k < 3; ++k)
      f.call("POST", "/dialogs/" + bob_id + "/goals/" + std::to_string(k) + "/status", "tok-bob",
             {{"status", "skipped"}});
    CHECK(f.call("GET", "/flows/next", "tok-bob").json().at("assignment").is_null());

    const auto exported = f.call("GET", "/export", "tok-admin", nullptr, {{"seed", "3"}});
    CHECK(exported.status == 200);
    CHECK(exported.content_type == "application/x-ndjson");
    const auto back = import_corpus(exported.body);
    CHECK(back.dialogs == f.store.dialogs());
    const auto stats = f.call("GET", "/stats", "tok-admin").json();
    CHECK(to_json(compute_stats(back.dialogs, f.graph)) == stats);
    expect_error(f.call("GET", "/export", "tok-admin", nullptr, {{"seed", "x"}}), 400, "BadRequest");
  }

  TEST_CASE("API results equal direct library calls") {
    Fixture api;
    DocumentGraph g = figure1_graph();
    DialogStore lib(g);
    for (const auto& fl : api.flows) lib.add_flow(fl);

    const std::string id = api.call("POST", "/dialogs", "tok-alice", {{"flow_id", api.flows[0].flow_id}})
                               .json()
                               .at("dialog_id");
    CHECK(lib.create_dialog(api.flows[0].flow_id, "alice") == id);
    const auto node = api.flows[0].goals[0].node;
    api.call("POST", "/dialogs/" + id + "/turns", "tok-alice",
             turn_body("user", "query", 0, {to_string(node)}, "how do i apply"));
    Turn t;
    t.role = Role::user;
    t.act = "query";
    t.grounding = {node};
    t.utterance = "how do i apply";
    lib.append_turn(id, t);
    api.call("POST", "/dialogs/" + id + "/goals/0/status", "tok-alice", {{"status", "skipped"}});
    lib.set_goal_status(id, 0, GoalStatus::skipped);

    auto strip = [](json d) {
      for (auto& turn : d["turns"]) turn.erase("created_at");
      d.erase("created_at");
      return d;
    };
    CHECK(strip(api.call("GET", "/dialogs/" + id, "tok-alice").json().at("dialog")) ==
          strip(to_json(lib.dialog(id))));
  }

  TEST_CASE("flow view and goal context") {
    Fixture f;
    const auto& flow = f.flows[0];
    auto r = f.call("GET", "/flows/" + flow.flow_id, "tok-alice");
    CHECK(r.json().at("flow") == to_json(flow));
    r = f.call("GET", "/flows/" + flow.flow_id, "tok-alice", nullptr, {{"locale", "zh"}});
    CHECK(r.json().at("flow").at("goals")[0].at("prompt") != to_json(flow).at("goals")[0].at("prompt"));
    expect_error(f.call("GET", "/flows/" + flow.flow_id, "tok-alice", nullptr, {{"locale", "fr"}}), 422,
                 "UnknownLocale");
    expect_error(f.call("GET", "/flows/missing", "tok-alice"), 404, "UnknownFlow");

    r = f.call("GET", "/goals/" + flow.flow_id + "/0/context", "tok-alice");
    const auto ctx = r.json();
    CHECK(ctx.at("goal").at("ref") == to_json(flow.goals[0].node));
    CHECK(ctx.at("path_from_root")[0].at("type") == "root");
    CHECK(ctx.at("path_from_root").back().at("ref") == to_json(flow.goals[0].node));
    CHECK(ctx.at("prompt").at("guideline") == flow.goals[0].prompt.guideline);
    expect_error(f.call("GET", "/goals/" + flow.flow_id + "/9/context", "tok-alice"), 404, "NotFound");
    expect_error(f.call("GET", "/goals/" + flow.flow_id + "/x/context", "tok-alice"), 400, "BadRequest");
  }

  TEST_CASE("malformed bodies are 400") {
    Fixture f;
    HttpRequest r{"POST", "/dialogs", {}, {{"authorization", "Bearer tok-alice"}}, "{oops"};
    expect_error(f.service.handle(r), 400, "BadRequest");
    r.body = "[1]";
    expect_error(f.service.handle(r), 400, "BadRequest");
  }

  TEST_CASE("status mapping") {
    CHECK(http_status(ErrorCode::UnknownDialog) == 404);
    CHECK(http_status(ErrorCode::DialogClosed) == 409);
    CHECK(http_status(ErrorCode::BadRatios) == 422);
    CHECK(http_status(ErrorCode::StoreCorrupt) == 500);
  }

  TEST_CASE("token files") {
    TempDir tmp;
    std::ofstream(tmp / "t.json")
        << R"({"tokens":[{"token":"a","writer_id":"w","capabilities":["annotate","admin"]},{"token":"b","writer_id":"v"}]})";
    const auto tokens = load_tokens(tmp / "t.json");
    CHECK(tokens.at("a").admin);
    CHECK(tokens.at("b").annotate);
    CHECK_FALSE(tokens.at("b").admin);
    std::ofstream(tmp / "bad.json") << R"({"tokens":[{"token":""}]})";
    CHECK_THROWS_AS(load_tokens(tmp / "bad.json"), Error);
  }

  TEST_CASE("real HTTP round trip") {
    TempDir tmp;
    const auto g = figure1_graph();
    save_graph(g, tmp / "graph.json");
    FlowParams p;
    p.seed = 1;
    {
      std::ofstream(tmp / "f.flow.json") << serialize_flow(generate_flow(g, p, default_templates()));
      std::ofstream(tmp / "tokens.json")
          << R"({"tokens":[{"token":"t","writer_id":"w","capabilities":["annotate"]}]})";
    }
    ServeConfig c;
    c.port = 0;
    c.corpus_path = tmp / "graph.json";
    c.store_path = tmp / "store.jsonl";
    c.tokens_path = tmp / "tokens.json";
    c.templates_dir = data_dir() / "templates";
    c.flow_paths = {tmp.path()};
    auto handle = serve(c);
    REQUIRE(handle->port() > 0);

    httplib::Client client("127.0.0.1", handle->port());
    auto res = client.Get("/flows/next", {{"Authorization", "Bearer t"}});
    REQUIRE(res);
    CHECK(res->status == 200);
    const auto a = json::parse(res->body).at("assignment");
    CHECK(a.at("flow_id") == flow_id_for_seed(1));
    const std::string id = a.at("dialog_id");
    res = client.Post("/dialogs/" + id + "/turns", {{"Authorization", "Bearer t"}, {"X-Request-Id", "r1"}},
                      turn_body("user", "query", 0).dump(), "application/json");
    REQUIRE(res);
    CHECK(res->status == 201);
    res = client.Get("/flows/next");
    REQUIRE(res);
    CHECK(res->status == 401);
    handle->stop();

    ServeConfig bad = c;
    bad.corpus_path = tmp / "missing.json";
    try {
      serve(bad);
      FAIL("expected CorpusLoadError");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::CorpusLoadError);
    }
  }

  TEST_CASE("the committed schema matches the router") {
    Fixture f;
    std::ifstream in(data_dir().parent_path() / "api" / "openapi.json");
    REQUIRE(in);
    const auto schema = json::parse(in);
    const auto& flow = f.flows[0];
    const std::map<std::string, std::string> values = {
        {"{flow_id}", flow.flow_id}, {"{dialog_id}", "dlg-000001"}, {"{goal_index}", "0"}, {"{turn_index}", "0"}};
    std::size_t routes = 0;
    for (const auto& [templ, methods] : schema.at("paths").items()) {
      std::string path = templ;
      for (const auto& [k, v] : values)
        if (auto pos = path.find(k); pos != std::string::npos) path.replace(pos, k.size(), v);
      for (const auto& [method, op] : methods.items()) {
        ++routes;
        std::string upper = method;
        for (auto& c : upper) c = static_cast<char>(std::toupper(c));
        const auto r = f.call(upper, path, "tok-admin", upper == "POST" ? json::object() : json(nullptr));
        INFO(upper << " " << path);
        CHECK(r.body.find("no endpoint") == std::string::npos);
        CHECK(op.at("responses").contains(std::to_string(r.status)));
      }
    }
    CHECK(routes == 10);

    const auto ctx = f.call("GET", "/goals/" + flow.flow_id + "/0/context", "tok-alice").json();
    std::set<std::string> got, documented;
    for (const auto& [k, v] : ctx.items()) got.insert(k);
    for (const auto& [k, v] : schema.at("components").at("schemas").at("GoalContext").at("properties").items())
      documented.insert(k);
    CHECK(got == documented);
  }
}
