#include "support.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <unistd.h>

#include "dgkit/flow_gen.hpp"
#include "dgkit/graph_builder.hpp"
#include "dgkit/ingest.hpp"

namespace dgkit::testing {

namespace fs = std::filesystem;
using json = nlohmann::json;

fs::path data_dir() { return DGKIT_DATA_DIR; }
fs::path test_data_dir() { return DGKIT_TEST_DATA_DIR; }
fs::path cli_path() { return DGKIT_CLI_PATH; }

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& path) { return json::parse(read_text(path)); }

DocumentGraph fixture_graph(const std::vector<fs::path>& sources) {
  std::vector<DocumentIR> docs;
  for (const auto& s : sources) {
    if (fs::is_directory(s)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(s))
        if (e.path().extension() == ".docmk") files.push_back(e.path());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) docs.push_back(load_document(f));
    } else {
      docs.push_back(load_document(s));
    }
  }
  DocumentGraph g = build_graph(docs);
  mark_super_leaves(g, MarkingRuleSet::defaults());
  return g;
}

DocumentGraph figure1_graph() { return fixture_graph({data_dir() / "fixtures/figure1.docmk"}); }
DocumentGraph mini_graph() { return fixture_graph({data_dir() / "fixtures/mini"}); }
DocumentGraph corpus_graph() { return fixture_graph({data_dir() / "corpus"}); }

const TemplateSet& default_templates() {
  static const TemplateSet templates = [] {
    TemplateSet t;
    t.load_directory(data_dir() / "templates");
    return t;
  }();
  return templates;
}

TempDir::TempDir() {
  static std::atomic<unsigned> counter{0};
  path_ = fs::temp_directory_path() /
          ("dgkit-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

// -- random corpora --------------------------------------------------------------

namespace {

const std::vector<std::string> kWords = {"how", "do", "i", "apply", "for", "the", "fund",
                                         "what", "is", "needed", "yes", "you", "can",
                                         "please", "bring", "form", "a4", "2", "step", "one"};

std::string random_utterance(SplitMix64& rng) {
  const std::size_t n = 1 + rng.index(12);
  std::string out;
  for (std::size_t k = 0; k < n; ++k) {
    if (k) out += ' ';
    out += kWords[rng.index(kWords.size())];
  }
  return out;
}

std::vector<NodeRef> random_grounding(const DocumentGraph& g, SplitMix64& rng) {
  std::vector<NodeRef> out;
  const std::size_t n = rng.index(4);
  while (out.size() < n) {
    const auto& node = g.node(rng.index(g.size()));
    if (node.type != NodeType::root) out.push_back(node.ref);
  }
  return out;
}

}  // namespace

std::vector<Dialog> random_corpus(const DocumentGraph& graph, std::uint64_t seed,
                                  std::size_t max_dialogs) {
  DialogStore store(graph);
  const auto& tax = store.taxonomy();
  SplitMix64 rng(seed);
  const std::size_t n = rng.index(max_dialogs + 1);
  for (std::size_t k = 0; k < n; ++k) {
    FlowParams params;
    params.seed = split_seed(seed, k);
    params.n_goals = 1 + rng.index(4);
    const auto flow = generate_flow(graph, params, default_templates());
    store.add_flow(flow);
    const auto id = store.create_dialog(flow.flow_id, "writer-" + std::to_string(rng.index(3)));
    while (true) {
      const Dialog d = store.dialog(id);
      if (d.closed) break;
      const std::size_t active = *d.active_goal();
      // Occasionally skip a later pending goal up front.
      if (active + 1 < d.goals.size() && rng.index(8) == 0) {
        const std::size_t later = active + 1 + rng.index(d.goals.size() - active - 1);
        if (d.goal_status[later] == GoalStatus::pending) {
          store.set_goal_status(id, later, GoalStatus::skipped);
          continue;
        }
      }
      if (rng.index(7) == 0) {
        store.set_goal_status(id, active, GoalStatus::skipped);
        continue;
      }
      const std::size_t exchanges = 1 + rng.index(3);
      for (std::size_t e = 0; e < exchanges; ++e) {
        for (Role role : {Role::user, Role::system}) {
          const auto& acts = role == Role::user ? tax.user_acts : tax.system_acts;
          Turn t;
          t.role = role;
          t.utterance = random_utterance(rng);
          t.act = acts[rng.index(acts.size())];
          t.grounding = random_grounding(graph, rng);
          t.goal_index = active;
          store.append_turn(id, t);
        }
      }
      store.set_goal_status(id, active, GoalStatus::completed);
    }
  }
  return store.dialogs();
}

// -- brute-force statistics ------------------------------------------------------------

json brute_force_stats(const std::string& jsonl, const json& graph_json) {
  // Graph facts straight from the canonical JSON.
  auto key = [](const json& ref) {
    return ref.at("doc_id").get<std::string>() + "#" + ref.at("node_id").get<std::string>();
  };
  std::map<std::string, std::string> type_of, doc_of;
  for (const auto& n : graph_json.at("nodes")) {
    type_of[key(n)] = n.at("type").get<std::string>();
    doc_of[key(n)] = n.at("doc_id").get<std::string>();
  }
  std::map<std::string, std::string> parent_of;
  for (const auto& e : graph_json.at("edges"))
    if (e.at("kind") == "hierarchy" && !parent_of.count(key(e.at("child"))))
      parent_of[key(e.at("child"))] = key(e.at("parent"));
  std::map<std::string, std::string> root_domain;
  for (const auto& [name, ref] : graph_json.at("domains").items()) root_domain[key(ref)] = name;

  auto is_group = [](const std::string& t) {
    return t == "disjunction" || t == "conjunction" || t == "negation";
  };
  auto domain_of_node = [&](std::string k) {
    while (parent_of.count(k)) k = parent_of[k];
    return root_domain.count(k) ? root_domain[k] : std::string();
  };

  json domains = json::object();
  for (const auto& [name, _] : graph_json.at("domains").items())
    domains[name] = {{"docs", 0}, {"tables", 0}, {"sequences", 0}, {"conditions", 0}, {"sections", 0}};
  for (const auto& [k, t] : type_of) {
    if (t == "root") continue;
    const auto dom = domain_of_node(k);
    auto& c = domains[dom];
    const auto p = parent_of.count(k) ? parent_of[k] : std::string();
    if (!p.empty() && root_domain.count(p)) c["docs"] = c["docs"].get<int>() + 1;
    if (t == "table") c["tables"] = c["tables"].get<int>() + 1;
    if (t == "sequence") c["sequences"] = c["sequences"].get<int>() + 1;
    if (t == "section") c["sections"] = c["sections"].get<int>() + 1;
    if (is_group(t) && !(parent_of.count(k) && is_group(type_of[parent_of[k]])))
      c["conditions"] = c["conditions"].get<int>() + 1;
  }

  const std::set<std::string> questions = {"clarify_choice", "verify_condition"};
  long dialogs = 0, turns = 0, users = 0, systems = 0, sys_q = 0, multidoc = 0;
  double docs_sum = 0, ugr = 0, sgr = 0, ulen = 0, slen = 0;
  std::map<std::string, long> goals{{"ordinary", 0}, {"tables", 0}, {"sequences", 0}, {"conditions", 0}};
  std::istringstream lines(jsonl);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    const json d = json::parse(line);
    ++dialogs;
    std::set<std::string> docs;
    for (const auto& t : d.at("turns")) {
      ++turns;
      std::istringstream words(t.at("utterance").get<std::string>());
      double len = 0;
      for (std::string w; words >> w;) ++len;
      const double gr = static_cast<double>(t.at("grounding").size());
      for (const auto& r : t.at("grounding")) docs.insert(r.at("doc_id").get<std::string>());
      if (t.at("role") == "user") {
        ++users;
        ugr += gr;
        ulen += len;
      } else {
        ++systems;
        sgr += gr;
        slen += len;
        if (questions.count(t.at("act").get<std::string>())) ++sys_q;
      }
    }
    docs_sum += static_cast<double>(docs.size());
    if (docs.size() > 1) ++multidoc;
    for (const auto& g : d.at("goals")) {
      if (g.at("status") != "completed") continue;
      std::string k = key(g.at("node"));
      std::string family = "ordinary";
      for (std::string at = k; !at.empty(); at = parent_of.count(at) ? parent_of[at] : "") {
        const auto& t = type_of[at];
        if (t == "table") { family = "tables"; break; }
        if (t == "sequence") { family = "sequences"; break; }
        if (is_group(t)) { family = "conditions"; break; }
      }
      ++goals[family];
    }
  }
  auto mean = [](double s, long n) { return n ? json(s / static_cast<double>(n)) : json(nullptr); };
  return {{"v", 1},
          {"n_dialogs", dialogs},
          {"n_turns", turns},
          {"n_user_turns", users},
          {"n_system_turns", systems},
          {"n_system_questions", sys_q},
          {"n_dialogs_multidoc", multidoc},
          {"docs_per_dialog", mean(docs_sum, dialogs)},
          {"gr_per_user_turn", mean(ugr, users)},
          {"gr_per_system_turn", mean(sgr, systems)},
          {"user_turn_len", mean(ulen, users)},
          {"system_turn_len", mean(slen, systems)},
          {"goals_by_type", goals},
          {"domains", domains}};
}

bool stats_match(const json& a, const json& b, double tol, std::string* why) {
  auto fail = [&](const std::string& msg) {
    if (why) *why = msg;
    return false;
  };
  if (a.is_object() && b.is_object()) {
    if (a.size() != b.size()) return fail("key sets differ: " + a.dump() + " vs " + b.dump());
    for (const auto& [k, v] : a.items()) {
      if (!b.contains(k)) return fail("missing key " + k);
      if (!stats_match(v, b.at(k), tol, why)) {
        if (why) *why = k + ": " + *why;
        return false;
      }
    }
    return true;
  }
  if (a.is_number_integer() && b.is_number_integer())
    return a.get<long long>() == b.get<long long>() ? true : fail(a.dump() + " != " + b.dump());
  if (a.is_number() && b.is_number())
    return std::abs(a.get<double>() - b.get<double>()) <= tol ? true
                                                              : fail(a.dump() + " != " + b.dump());
  return a == b ? true : fail(a.dump() + " != " + b.dump());
}

}  // namespace dgkit::testing
