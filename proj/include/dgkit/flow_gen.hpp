#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dgkit/document_graph.hpp"
#include "dgkit/prompt_gen.hpp"
#include "dgkit/rng.hpp"

namespace dgkit {

struct TransitionRates {
  double follow_up = 0.6;
  double in_jump = 0.25;
  double out_jump = 0.15;
  /// Multiplier on out_jump mass when the current goal links to another document.
  double out_jump_boost = 2.0;

  /// Throws InvalidRates unless all rates are non-negative, sum to 1 (1e-9)
  /// and the boost is at least 1.
  void validate() const;

  bool operator==(const TransitionRates&) const = default;
};

enum class Transition { initial, follow_up, in_jump, out_jump };

std::string_view to_string(Transition t);
std::optional<Transition> parse_transition(std::string_view s);

struct FlowParams {
  TransitionRates rates;
  std::size_t n_goals = 5;
  std::uint64_t seed = 0;
  /// Empty: drawn uniformly among documents holding at least one super-leaf.
  std::string start_doc;

  bool operator==(const FlowParams&) const = default;
};

struct Goal {
  NodeRef node;
  Prompt prompt;
  Transition transition_used = Transition::initial;
};

enum class TraceOp { push, pop, act, jump, exhausted };

std::string_view to_string(TraceOp op);

/// One agenda event. Pops carry the reason ("goal", "follow_up", "in_jump",
/// "fallback"); acts carry the sampled transition; jumps the target document.
struct TraceEntry {
  TraceOp op = TraceOp::push;
  std::optional<NodeRef> node;
  std::string detail;

  bool operator==(const TraceEntry&) const = default;
};

struct DialogFlow {
  std::string flow_id;
  FlowParams params;
  std::vector<Goal> goals;
  /// Set when the agenda and every reachable document ran out of unvisited
  /// super-leaves before n_goals goals were produced.
  bool truncated = false;
  std::vector<TraceEntry> trace;
};

/// Stack of candidate nodes; the most recent goal's neighbourhood sits on top.
/// Every push and pop is recorded in the attached trace.
class AgendaStack {
 public:
  explicit AgendaStack(std::vector<TraceEntry>* trace = nullptr) : trace_(trace) {}

  /// Pushes a root-first path so the goal end ends up on top.
  void push_path(const std::vector<NodeRef>& path);
  void push(const NodeRef& ref);
  NodeRef pop(std::string_view reason);
  /// Pops entries down to and including position `index` (0 = bottom);
  /// returns the node at that position.
  NodeRef pop_to(std::size_t index, std::string_view reason);

  bool empty() const { return items_.empty(); }
  std::size_t size() const { return items_.size(); }
  const NodeRef& top() const { return items_.back(); }
  const std::vector<NodeRef>& items() const { return items_; }

 private:
  std::vector<NodeRef> items_;
  std::vector<TraceEntry>* trace_;
};

struct ActionAvailability {
  bool follow_up = true;
  bool in_jump = true;
  bool out_jump = true;
};

/// Probabilities actually used for the next draw: out_jump mass is boosted for
/// out-linked goals, unavailable actions lose their mass, and the rest is
/// renormalized. All zeros when nothing is available.
std::array<double, 3> effective_rates(const TransitionRates& rates, bool goal_has_outlink,
                                      const ActionAvailability& available = {});

/// Categorical draw over {follow_up, in_jump, out_jump}; consumes exactly one
/// unit() from rng. nullopt when no action has mass. Throws InvalidRates.
std::optional<Transition> sample_transition(SplitMix64& rng, const TransitionRates& rates,
                                            bool goal_has_outlink,
                                            const ActionAvailability& available = {});

/// True when a see_more node in the goal's subtree, or among its siblings,
/// points into another document.
bool goal_has_outlink(const DocumentGraph& graph, const NodeRef& goal);

/// Agenda-based flow sampling. Seeds are split into independent streams:
/// 0 for the agenda walk, 1 for prompts (one sub-stream per goal), 2 for the
/// start document when none is given.
///
/// Throws InvalidRates, UnknownDoc, NoSuperLeaves, or prompt errors.
DialogFlow generate_flow(const DocumentGraph& graph, const FlowParams& params,
                         const TemplateSet& templates, const PromptOptions& prompt_options = {});

/// Prompt of goal k in a flow with the given seed. Re-rendering with another
/// locale keeps pattern and slots.
Prompt goal_prompt(const DocumentGraph& graph, const NodeRef& goal, std::uint64_t flow_seed,
                   std::size_t goal_index, const TemplateSet& templates,
                   const PromptOptions& prompt_options = {});

/// Re-renders every prompt in place.
void rerender_prompts(const DocumentGraph& graph, DialogFlow& flow, const TemplateSet& templates,
                      const PromptOptions& prompt_options = {});

std::string flow_id_for_seed(std::uint64_t seed);

struct FlowResult {
  std::uint64_t seed = 0;
  std::optional<DialogFlow> flow;
  std::optional<Error> error;
};

/// Flow i is generated with seed split_seed(base_seed, i). A failing flow is
/// reported in its slot and the batch carries on. Flows may be produced on
/// several threads; results do not depend on the thread count.
std::vector<FlowResult> generate_batch(const DocumentGraph& graph, const FlowParams& params_template,
                                       std::size_t count, std::uint64_t base_seed,
                                       const TemplateSet& templates,
                                       const PromptOptions& prompt_options = {},
                                       unsigned threads = 1);

nlohmann::json to_json(const DialogFlow& flow);
DialogFlow flow_from_json(const nlohmann::json& j);
/// Canonical ".flow.json" text (sorted keys, two-space indent, trailing newline).
std::string serialize_flow(const DialogFlow& flow);

}  // namespace dgkit
