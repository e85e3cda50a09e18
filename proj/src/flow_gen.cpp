#include "dgkit/flow_gen.hpp"

#include <cmath>
#include <cstdio>
#include <set>
#include <thread>

#include "dgkit/graph_json.hpp"

namespace dgkit {

using json = nlohmann::json;

namespace {

constexpr std::uint64_t kAgendaStream = 0;
constexpr std::uint64_t kPromptStream = 1;
constexpr std::uint64_t kStartDocStream = 2;

bool has_unvisited_leaves(const DocumentGraph& g, std::string_view doc,
                          const std::set<NodeRef>& visited) {
  return !subtree_super_leaves(g, g.node(g.document_top(doc)).ref, visited).empty();
}

std::vector<std::string> jump_candidates(const DocumentGraph& g, std::string_view doc,
                                         const std::set<NodeRef>& visited) {
  std::vector<std::string> out;
  for (auto& d : connected_docs(g, doc))
    if (has_unvisited_leaves(g, d, visited)) out.push_back(std::move(d));
  return out;
}

json rates_to_json(const TransitionRates& r) {
  return {{"follow_up", r.follow_up},
          {"in_jump", r.in_jump},
          {"out_jump", r.out_jump},
          {"out_jump_boost", r.out_jump_boost}};
}

json prompt_slots_to_json(const std::map<std::string, Slot>& slots) {
  json out = json::object();
  for (const auto& [name, slot] : slots) {
    json refs = json::array();
    for (const auto& r : slot.refs) refs.push_back(to_json(r));
    out[name] = {{"text", slot.text}, {"refs", std::move(refs)}};
  }
  return out;
}

std::map<std::string, Slot> prompt_slots_from_json(const json& j) {
  std::map<std::string, Slot> out;
  for (const auto& [name, s] : j.items()) {
    Slot slot{s.at("text").get<std::string>(), {}};
    for (const auto& r : s.at("refs")) slot.refs.push_back(node_ref_from_json(r));
    out.emplace(name, std::move(slot));
  }
  return out;
}

}  // namespace

void TransitionRates::validate() const {
  const auto bad = [](double x) { return !std::isfinite(x) || x < 0.0; };
  if (bad(follow_up) || bad(in_jump) || bad(out_jump))
    throw Error(ErrorCode::InvalidRates, "transition rates must be finite and non-negative");
  if (std::abs(follow_up + in_jump + out_jump - 1.0) > 1e-9)
    throw Error(ErrorCode::InvalidRates, "transition rates must sum to 1");
  if (!std::isfinite(out_jump_boost) || out_jump_boost < 1.0)
    throw Error(ErrorCode::InvalidRates, "out_jump_boost must be at least 1");
}

std::string_view to_string(Transition t) {
  switch (t) {
    case Transition::initial: return "initial";
    case Transition::follow_up: return "follow_up";
    case Transition::in_jump: return "in_jump";
    case Transition::out_jump: return "out_jump";
  }
  return "?";
}

std::optional<Transition> parse_transition(std::string_view s) {
  for (auto t : {Transition::initial, Transition::follow_up, Transition::in_jump,
                 Transition::out_jump})
    if (to_string(t) == s) return t;
  return std::nullopt;
}

std::string_view to_string(TraceOp op) {
  switch (op) {
    case TraceOp::push: return "push";
    case TraceOp::pop: return "pop";
    case TraceOp::act: return "act";
    case TraceOp::jump: return "jump";
    case TraceOp::exhausted: return "exhausted";
  }
  return "?";
}

// -- agenda ----------------------------------------------------------------------

void AgendaStack::push(const NodeRef& ref) {
  items_.push_back(ref);
  if (trace_) trace_->push_back({TraceOp::push, ref, {}});
}

void AgendaStack::push_path(const std::vector<NodeRef>& path) {
  for (const auto& r : path) push(r);
}

NodeRef AgendaStack::pop(std::string_view reason) {
  if (items_.empty()) throw Error(ErrorCode::InvalidArgument, "pop from an empty agenda");
  NodeRef r = std::move(items_.back());
  items_.pop_back();
  if (trace_) trace_->push_back({TraceOp::pop, r, std::string(reason)});
  return r;
}

NodeRef AgendaStack::pop_to(std::size_t index, std::string_view reason) {
  if (index >= items_.size()) throw Error(ErrorCode::InvalidArgument, "agenda index out of range");
  NodeRef last;
  while (items_.size() > index) last = pop(reason);
  return last;
}

// -- transitions -----------------------------------------------------------------

std::array<double, 3> effective_rates(const TransitionRates& rates, bool goal_has_outlink,
                                      const ActionAvailability& available) {
  std::array<double, 3> m{available.follow_up ? rates.follow_up : 0.0,
                          available.in_jump ? rates.in_jump : 0.0,
                          available.out_jump
                              ? rates.out_jump * (goal_has_outlink ? rates.out_jump_boost : 1.0)
                              : 0.0};
  const double total = m[0] + m[1] + m[2];
  if (total <= 0.0) return {0.0, 0.0, 0.0};
  for (auto& x : m) x /= total;
  return m;
}

std::optional<Transition> sample_transition(SplitMix64& rng, const TransitionRates& rates,
                                            bool goal_has_outlink,
                                            const ActionAvailability& available) {
  rates.validate();
  const auto p = effective_rates(rates, goal_has_outlink, available);
  const double u = rng.unit();
  constexpr std::array<Transition, 3> kActs{Transition::follow_up, Transition::in_jump,
                                            Transition::out_jump};
  std::optional<Transition> last_positive;
  double cumulative = 0.0;
  for (std::size_t k = 0; k < 3; ++k) {
    if (p[k] <= 0.0) continue;
    last_positive = kActs[k];
    cumulative += p[k];
    if (u < cumulative) return kActs[k];
  }
  // Rounding can leave u just above the final cumulative sum.
  return last_positive;
}

bool goal_has_outlink(const DocumentGraph& g, const NodeRef& goal) {
  const auto i = g.index_of(goal);
  std::vector<DocumentGraph::Index> scope = g.preorder(i);
  if (auto p = g.parent(i))
    for (auto s : g.children(*p))
      if (s != i) scope.push_back(s);
  for (auto j : scope) {
    const Node& n = g.node(j);
    if (n.type != NodeType::see_more) continue;
    auto target = n.linked_node();
    if (target && g.contains(*target) && target->doc_id != goal.doc_id) return true;
  }
  return false;
}

// -- generation --------------------------------------------------------------------

std::string flow_id_for_seed(std::uint64_t seed) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "flow-%016llx", static_cast<unsigned long long>(seed));
  return buf;
}

Prompt goal_prompt(const DocumentGraph& graph, const NodeRef& goal, std::uint64_t flow_seed,
                   std::size_t goal_index, const TemplateSet& templates,
                   const PromptOptions& prompt_options) {
  SplitMix64 rng(split_seed(split_seed(flow_seed, kPromptStream), goal_index));
  return gen_prompt(graph, goal, rng, templates, prompt_options);
}

DialogFlow generate_flow(const DocumentGraph& g, const FlowParams& params,
                         const TemplateSet& templates, const PromptOptions& prompt_options) {
  params.rates.validate();
  if (params.n_goals < 1) throw Error(ErrorCode::InvalidArgument, "n_goals must be at least 1");

  DialogFlow flow;
  flow.flow_id = flow_id_for_seed(params.seed);
  flow.params = params;
  std::set<NodeRef> visited;

  if (flow.params.start_doc.empty()) {
    std::vector<std::string> eligible;
    for (const auto& d : g.documents())
      if (has_unvisited_leaves(g, d, visited)) eligible.push_back(d);
    if (eligible.empty()) throw Error(ErrorCode::NoSuperLeaves, "no document has super-leaves");
    SplitMix64 pick(split_seed(params.seed, kStartDocStream));
    flow.params.start_doc = eligible[pick.index(eligible.size())];
  }

  SplitMix64 rng(split_seed(params.seed, kAgendaStream));
  AgendaStack agenda(&flow.trace);

  const std::string& start = flow.params.start_doc;
  const NodeRef start_top = g.node(g.document_top(start)).ref;
  auto leaves = subtree_super_leaves(g, start_top, visited);
  if (leaves.empty())
    throw Error(ErrorCode::NoSuperLeaves, "document '" + start + "' has no super-leaves", start);
  agenda.push_path(get_path(g, start_top, leaves[rng.index(leaves.size())]));
  Transition transition = Transition::initial;

  while (flow.goals.size() < params.n_goals) {
    const NodeRef goal = agenda.pop("goal");
    visited.insert(goal);
    flow.goals.push_back(
        {goal, goal_prompt(g, goal, params.seed, flow.goals.size(), templates, prompt_options),
         transition});
    if (flow.goals.size() == params.n_goals) break;

    const std::string doc = goal.doc_id;
    auto candidates = jump_candidates(g, doc, visited);
    const ActionAvailability available{!agenda.empty(), !agenda.empty(), !candidates.empty()};
    const auto act = sample_transition(rng, params.rates, goal_has_outlink(g, goal), available);
    if (!act) {
      flow.truncated = true;
      flow.trace.push_back({TraceOp::exhausted, std::nullopt, {}});
      break;
    }
    flow.trace.push_back({TraceOp::act, std::nullopt, std::string(to_string(*act))});

    NodeRef subtree_root;
    std::string current_doc = doc;
    switch (*act) {
      case Transition::follow_up:
        subtree_root = agenda.pop("follow_up");
        break;
      case Transition::in_jump:
        subtree_root = agenda.pop_to(rng.index(agenda.size()), "in_jump");
        break;
      case Transition::out_jump:
        current_doc = candidates[rng.index(candidates.size())];
        flow.trace.push_back({TraceOp::jump, std::nullopt, current_doc});
        subtree_root = g.node(g.document_top(current_doc)).ref;
        break;
      case Transition::initial:
        break;
    }

    // A subtree without unvisited super-leaves hands over to the next agenda
    // entry; once the agenda is empty, to a linked document.
    leaves = subtree_super_leaves(g, subtree_root, visited);
    bool exhausted = false;
    while (leaves.empty()) {
      if (!agenda.empty()) {
        subtree_root = agenda.pop("fallback");
      } else {
        candidates = jump_candidates(g, current_doc, visited);
        if (candidates.empty()) {
          exhausted = true;
          break;
        }
        current_doc = candidates[rng.index(candidates.size())];
        flow.trace.push_back({TraceOp::jump, std::nullopt, current_doc});
        subtree_root = g.node(g.document_top(current_doc)).ref;
      }
      current_doc = subtree_root.doc_id;
      leaves = subtree_super_leaves(g, subtree_root, visited);
    }
    if (exhausted) {
      flow.truncated = true;
      flow.trace.push_back({TraceOp::exhausted, std::nullopt, {}});
      break;
    }
    agenda.push_path(get_path(g, subtree_root, leaves[rng.index(leaves.size())]));
    transition = *act;
  }
  return flow;
}

void rerender_prompts(const DocumentGraph& graph, DialogFlow& flow, const TemplateSet& templates,
                      const PromptOptions& prompt_options) {
  for (std::size_t k = 0; k < flow.goals.size(); ++k)
    flow.goals[k].prompt =
        goal_prompt(graph, flow.goals[k].node, flow.params.seed, k, templates, prompt_options);
}

std::vector<FlowResult> generate_batch(const DocumentGraph& graph, const FlowParams& params_template,
                                       std::size_t count, std::uint64_t base_seed,
                                       const TemplateSet& templates,
                                       const PromptOptions& prompt_options, unsigned threads) {
  if (count < 1) throw Error(ErrorCode::InvalidArgument, "batch count must be at least 1");
  std::vector<FlowResult> results(count);
  auto work = [&](std::size_t begin, std::size_t step) {
    for (std::size_t i = begin; i < count; i += step) {
      FlowParams p = params_template;
      p.seed = split_seed(base_seed, i);
      results[i].seed = p.seed;
      try {
        results[i].flow = generate_flow(graph, p, templates, prompt_options);
      } catch (const Error& e) {
        results[i].error = e;
      }
    }
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(count)));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
  }
  return results;
}

// -- serialization -----------------------------------------------------------------

json to_json(const DialogFlow& flow) {
  json goals = json::array();
  for (const auto& goal : flow.goals) {
    goals.push_back({{"node", to_json(goal.node)},
                     {"prompt", goal.prompt.guideline},
                     {"pattern", std::string(to_string(goal.prompt.pattern))},
                     {"slots", prompt_slots_to_json(goal.prompt.slots)},
                     {"transition_used", std::string(to_string(goal.transition_used))}});
  }
  json trace = json::array();
  for (const auto& t : flow.trace) {
    json e = {{"op", std::string(to_string(t.op))}};
    if (t.node) e["node"] = to_json(*t.node);
    if (!t.detail.empty()) e["detail"] = t.detail;
    trace.push_back(std::move(e));
  }
  return {{"v", 1},
          {"flow_id", flow.flow_id},
          {"params",
           {{"rates", rates_to_json(flow.params.rates)},
            {"n_goals", flow.params.n_goals},
            {"seed", flow.params.seed},
            {"start_doc", flow.params.start_doc}}},
          {"goals", std::move(goals)},
          {"truncated", flow.truncated},
          {"trace", std::move(trace)}};
}

DialogFlow flow_from_json(const json& j) {
  try {
    DialogFlow flow;
    flow.flow_id = j.at("flow_id").get<std::string>();
    const auto& p = j.at("params");
    const auto& r = p.at("rates");
    flow.params.rates = {r.at("follow_up").get<double>(), r.at("in_jump").get<double>(),
                         r.at("out_jump").get<double>(), r.at("out_jump_boost").get<double>()};
    flow.params.n_goals = p.at("n_goals").get<std::size_t>();
    flow.params.seed = p.at("seed").get<std::uint64_t>();
    flow.params.start_doc = p.at("start_doc").get<std::string>();
    for (const auto& jg : j.at("goals")) {
      Goal goal;
      goal.node = node_ref_from_json(jg.at("node"));
      goal.prompt.guideline = jg.at("prompt").get<std::string>();
      auto pattern = parse_prompt_pattern(jg.at("pattern").get<std::string>());
      auto transition = parse_transition(jg.at("transition_used").get<std::string>());
      if (!pattern || !transition)
        throw Error(ErrorCode::InvalidArgument, "unknown pattern or transition in flow");
      goal.prompt.pattern = *pattern;
      goal.transition_used = *transition;
      if (jg.contains("slots")) goal.prompt.slots = prompt_slots_from_json(jg.at("slots"));
      flow.goals.push_back(std::move(goal));
    }
    flow.truncated = j.at("truncated").get<bool>();
    for (const auto& jt : j.at("trace")) {
      TraceEntry t;
      const auto op = jt.at("op").get<std::string>();
      bool known = false;
      for (auto candidate :
           {TraceOp::push, TraceOp::pop, TraceOp::act, TraceOp::jump, TraceOp::exhausted}) {
        if (to_string(candidate) == op) {
          t.op = candidate;
          known = true;
        }
      }
      if (!known) throw Error(ErrorCode::InvalidArgument, "unknown trace op '" + op + "'");
      if (jt.contains("node")) t.node = node_ref_from_json(jt.at("node"));
      t.detail = jt.value("detail", "");
      flow.trace.push_back(std::move(t));
    }
    return flow;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("malformed flow json: ") + e.what());
  }
}

std::string serialize_flow(const DialogFlow& flow) { return to_json(flow).dump(2) + "\n"; }

}  // namespace dgkit
