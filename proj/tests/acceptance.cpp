// One PASS/FAIL line per acceptance criterion; exits nonzero on any failure.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#include "dgkit/dialog_store.hpp"
#include "dgkit/flow_gen.hpp"
#include "dgkit/graph_json.hpp"
#include "dgkit/service.hpp"
#include "support.hpp"

using namespace dgkit;
using namespace dgkit::testing;
using json = nlohmann::json;

namespace {

/// Thrown by a criterion to report why it failed.
struct Failure {
  std::string why;
};

void require(bool ok, const std::string& why) {
  if (!ok) throw Failure{why};
}

int failures = 0;

void criterion(const std::string& name, double budget_s, const std::function<void()>& body) {
  const auto start = std::chrono::steady_clock::now();
  std::string why;
  try {
    body();
  } catch (const Failure& f) {
    why = f.why;
  } catch (const std::exception& e) {
    why = std::string("exception: ") + e.what();
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (why.empty() && secs > budget_s) {
    std::ostringstream s;
    s << "took " << secs << " s, budget " << budget_s << " s";
    why = s.str();
  }
  char timing[32];
  std::snprintf(timing, sizeof timing, "%.3fs", secs);
  if (why.empty()) {
    std::cout << "PASS  " << name << "  (" << timing << ")\n";
  } else {
    ++failures;
    std::cout << "FAIL  " << name << "  (" << timing << "): " << why << "\n";
  }
}

std::string trace_line(const TraceEntry& e) {
  std::string s(to_string(e.op));
  if (e.node) s += " " + to_string(*e.node);
  if (!e.detail.empty()) s += " " + e.detail;
  return s;
}

int run_binary(const std::string& args) {
  const std::string cmd = cli_path().string() + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void figure1_validation() {
  const auto g = figure1_graph();
  const auto report = validate(g);
  std::size_t shape = 0;
  for (const auto& v : report.violations) shape += is_shape_rule(v.rule) ? 1 : 0;
  require(shape == 0, std::to_string(shape) + " shape violations");
  require(report.ok(), std::to_string(report.violations.size()) + " violations");
  const int code = run_binary("validate " + (data_dir() / "fixtures/figure1.docmk").string());
  require(code == 0, "validate exited " + std::to_string(code));
}

void trace_equivalence() {
  const auto g = mini_graph();
  const auto cases = read_json(test_data_dir() / "mini_traces.json");
  require(cases.size() == 9, "expected 9 oracle traces");
  for (const auto& c : cases) {
    FlowParams p;
    p.rates = {c["rates"][0], c["rates"][1], c["rates"][2], 2.0};
    p.seed = c["seed"];
    p.n_goals = c["n_goals"];
    p.start_doc = c["start_doc"];
    const auto flow = generate_flow(g, p, default_templates());
    const std::string tag = "rates " + c["rates"].dump() + " seed " + std::to_string(p.seed);
    require(flow.goals.size() == c["goals"].size(), tag + ": goal count");
    for (std::size_t k = 0; k < flow.goals.size(); ++k) {
      require(to_string(flow.goals[k].node) == c["goals"][k][0].get<std::string>(), tag + ": goal");
      require(to_string(flow.goals[k].transition_used) == c["goals"][k][1].get<std::string>(),
              tag + ": transition");
    }
    std::vector<std::string> trace;
    for (const auto& e : flow.trace) trace.push_back(trace_line(e));
    require(trace == c["trace"].get<std::vector<std::string>>(), tag + ": trace");
    require(flow.truncated == c["truncated"].get<bool>(), tag + ": truncated flag");
  }
}

void flow_properties() {
  const auto g = corpus_graph();
  std::map<std::string, bool> has_links;
  for (const auto& d : g.documents()) has_links[d] = !connected_docs(g, d).empty();
  FlowParams base;
  base.n_goals = 6;
  const auto batch = generate_batch(g, base, 1000, 2024, default_templates(), {}, std::thread::hardware_concurrency());
  for (const auto& r : batch) {
    require(r.flow.has_value(), "flow " + std::to_string(r.seed) + " failed");
    const auto& flow = *r.flow;
    std::set<NodeRef> seen;
    for (std::size_t k = 0; k < flow.goals.size(); ++k) {
      const auto& goal = flow.goals[k];
      require(g.node(goal.node).is_super_leaf(), to_string(goal.node) + " is not a super-leaf");
      require(seen.insert(goal.node).second, "duplicate goal " + to_string(goal.node));
      if (k > 0 && goal.transition_used == Transition::out_jump)
        require(has_links[flow.goals[k - 1].node.doc_id], "out_jump from an unlinked document");
    }
    FlowParams again = base;
    again.seed = r.seed;
    require(serialize_flow(generate_flow(g, again, default_templates())) == serialize_flow(flow),
            "rerun differs for seed " + std::to_string(r.seed));
  }
}

void boost_renormalization() {
  const TransitionRates third{1.0 / 3, 1.0 / 3, 1.0 / 3, 2.0};
  SplitMix64 rng(7);
  std::size_t out = 0;
  constexpr std::size_t kDraws = 100000;
  for (std::size_t k = 0; k < kDraws; ++k)
    out += sample_transition(rng, third, true) == Transition::out_jump ? 1 : 0;
  const double freq = static_cast<double>(out) / kDraws;
  require(freq >= 0.49 && freq <= 0.51, "out_jump frequency " + std::to_string(freq));
}

void prompt_fidelity() {
  const auto fig = figure1_graph();
  const std::string expected =
      "write a number of question-answer turns so that the system final answer is A4 - the paper "
      "size of the application form";
  bool found = false;
  for (std::uint64_t seed = 0; seed < 64 && !found; ++seed) {
    SplitMix64 rng(seed);
    const auto slots = fill_slots(fig, {"fund-guide", "N4"}, PromptPattern::value_lookup, rng);
    if (slots.at("value").text != "A4") continue;
    const auto text = render_template(default_templates(), PromptPattern::value_lookup, slots, "en");
    require(text == expected, "rendered '" + text + "'");
    found = true;
  }
  require(found, "no draw selected the A4 value");

  const auto g = corpus_graph();
  std::set<PromptPattern> patterns;
  FlowParams base;
  const auto batch = generate_batch(g, base, 1000, 99, default_templates(), {}, std::thread::hardware_concurrency());
  for (const auto& r : batch) {
    require(r.flow.has_value(), "flow failed");
    for (const auto& goal : r.flow->goals) patterns.insert(goal.prompt.pattern);
  }
  for (auto p : kAllPatterns)
    require(patterns.count(p) == 1, std::string(to_string(p)) + " never produced");
}

void stats_oracle() {
  const auto g = corpus_graph();
  const auto graph_json = graph_to_json(g);
  const auto whitespace = [](std::string_view s) {
    std::size_t n = 0;
    bool in = false;
    for (char c : s) {
      const bool space = c == ' ';
      if (!space && !in) ++n;
      in = !space;
    }
    return n;
  };
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto dialogs = random_corpus(g, 1000 + seed, 100);
    const auto text = export_corpus(dialogs, split_dataset(dialogs, {}, seed));
    const auto ours = to_json(compute_stats(dialogs, g, ActTaxonomy::defaults(), whitespace));
    std::string why;
    require(stats_match(ours, brute_force_stats(text, graph_json), 1e-9, &why),
            "corpus " + std::to_string(seed) + ": " + why);
  }
}

void split_exactness() {
  auto ids = [](std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back("d" + std::to_string(i));
    return out;
  };
  const auto ten = split_dataset(ids(10), {0.70, 0.10, 0.20}, 0);
  require(ten.train.size() == 7 && ten.validation.size() == 1 && ten.test.size() == 2,
          "10 dialogs split " + std::to_string(ten.train.size()) + "/" +
              std::to_string(ten.validation.size()) + "/" + std::to_string(ten.test.size()));
  SplitMix64 rng(500);
  for (int k = 0; k < 500; ++k) {
    const auto all = ids(rng.index(2000));
    const auto s = split_dataset(all, {}, rng.next());
    std::multiset<std::string> joined(s.train.begin(), s.train.end());
    joined.insert(s.validation.begin(), s.validation.end());
    joined.insert(s.test.begin(), s.test.end());
    require(joined == std::multiset<std::string>(all.begin(), all.end()),
            "not a disjoint cover for n=" + std::to_string(all.size()));
  }
}

void protocol_enforcement() {
  const auto g = figure1_graph();
  DialogStore store(g);
  ServiceConfig cfg;
  cfg.tokens = {{"w", {"writer", true, false}}, {"a", {"admin", false, true}}};
  Service service(store, default_templates(), cfg);
  FlowParams p;
  p.n_goals = 3;
  p.seed = 10;
  store.add_flow(generate_flow(g, p, default_templates()));

  auto call = [&](const std::string& method, const std::string& path, const std::string& token,
                  const json& body = nullptr) {
    HttpRequest r{method, path, {}, {{"authorization", "Bearer " + token}}, {}};
    if (!body.is_null()) r.body = body.dump();
    return service.handle(r);
  };
  auto expect = [&](const HttpResponse& r, int status, const std::string& code, const std::string& step) {
    require(r.status == status, step + ": status " + std::to_string(r.status) + " " + r.body);
    if (!code.empty()) require(r.json().at("code") == code, step + ": code " + r.body);
  };
  auto turn = [](const std::string& role, const std::string& act, std::size_t goal,
                 json grounding = json::array()) {
    return json{{"role", role}, {"act", act}, {"goal_index", goal}, {"grounding", grounding},
                {"utterance", "some words"}};
  };

  const auto next = call("GET", "/flows/next", "w");
  expect(next, 200, "", "claim");
  const std::string id = next.json().at("assignment").at("dialog_id");
  const std::string turns = "/dialogs/" + id + "/turns";
  const std::string status = "/dialogs/" + id + "/goals/";

  expect(call("POST", turns, "w", turn("system", "answer", 0)), 422, "RoleOrderViolation", "user first");
  expect(call("POST", turns, "w", turn("user", "answer", 0)), 422, "UnknownAct", "act validation");
  expect(call("POST", turns, "w", turn("user", "query", 0, {"fund-guide#missing"})), 422,
         "DanglingGrounding", "grounding validation");
  expect(call("POST", turns, "w", turn("user", "query", 0, {"fund-guide#N1"})), 201, "", "user turn");
  expect(call("POST", turns, "w", turn("user", "query", 0)), 422, "RoleOrderViolation", "alternation");
  expect(call("POST", turns, "w", turn("system", "answer", 0, {"fund-guide#N1"})), 201, "", "system turn");
  expect(call("POST", status + "1/status", "w", {{"status", "completed"}}), 422, "NotActive",
         "complete pending goal");
  expect(call("POST", status + "2/status", "w", {{"status", "skipped"}}), 200, "", "goal skip");
  expect(call("POST", status + "0/status", "w", {{"status", "completed"}}), 200, "", "goal completion");
  expect(call("GET", "/export", "a"), 409, "OpenDialogPresent", "export while open");
  expect(call("POST", turns, "w", turn("user", "query", 1)), 201, "", "second goal");
  expect(call("POST", turns, "w", turn("system", "verify_condition", 1)), 201, "", "second goal");
  const auto closing = call("POST", status + "1/status", "w", {{"status", "completed"}});
  expect(closing, 200, "", "close");
  require(closing.json().at("closed") == true, "dialog did not close");
  expect(call("POST", turns, "w", turn("user", "query", 1)), 409, "DialogClosed", "turn after close");
  expect(call("POST", status + "1/status", "w", {{"status", "skipped"}}), 409, "AlreadyClosed",
         "status after close");
  expect(call("GET", "/stats", "w"), 403, "Forbidden", "stats capability");

  const auto exported = call("GET", "/export", "a");
  expect(exported, 200, "", "export");
  const auto back = import_corpus(exported.body);
  require(back.dialogs == store.dialogs(), "imported dialogs differ");
  const auto stats = call("GET", "/stats", "a");
  require(to_json(compute_stats(back.dialogs, g)) == stats.json(), "stats differ after round-trip");
  require(export_corpus(back.dialogs, back.splits) == exported.body, "re-export differs");
}

}  // namespace

int main() {
  criterion("figure-1 fixture validation", 1, figure1_validation);
  criterion("agenda trace equivalence on the mini fixture", 1, trace_equivalence);
  criterion("flow property suite (1000 flows)", 30, flow_properties);
  criterion("boost renormalization (100000 draws)", 5, boost_renormalization);
  criterion("prompt fidelity and pattern coverage (1000 seeds)", 5, prompt_fidelity);
  criterion("stats oracle (100 random corpora)", 30, stats_oracle);
  criterion("split exactness and disjoint cover (500 sizes)", 5, split_exactness);
  criterion("protocol enforcement and export round-trip", 10, protocol_enforcement);
  std::cout << (failures ? "FAILED " : "ALL PASSED ") << "(" << failures << " failing)\n";
  return failures ? 1 : 0;
}
