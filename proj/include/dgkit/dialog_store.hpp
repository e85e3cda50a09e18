#pragma once

#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dgkit/document_graph.hpp"
#include "dgkit/flow_gen.hpp"

namespace dgkit {

enum class Role { user, system };
enum class GoalStatus { pending, active, completed, skipped };

std::string_view to_string(Role role);
std::optional<Role> parse_role(std::string_view s);
std::string_view to_string(GoalStatus status);
std::optional<GoalStatus> parse_goal_status(std::string_view s);

/// Dialog act labels per role. question_acts are the system acts that ask the
/// user something (clarifying or verifying questions).
struct ActTaxonomy {
  std::vector<std::string> user_acts;
  std::vector<std::string> system_acts;
  std::vector<std::string> question_acts;

  static ActTaxonomy defaults();
  /// Throws InvalidTaxonomy on duplicate labels or question acts that are not
  /// system acts.
  void validate() const;
  bool allows(Role role, std::string_view act) const;
  bool is_question(std::string_view act) const;
};

struct Turn {
  std::size_t index = 0;
  Role role = Role::user;
  std::string utterance;
  std::string act;
  /// User turns: nodes whose text the utterance draws on. System turns: nodes
  /// the response is grounded on.
  std::vector<NodeRef> grounding;
  std::size_t goal_index = 0;
  std::string created_at;
  /// 0 for the original; n for the n-th correction.
  std::size_t revision = 0;

  bool operator==(const Turn&) const = default;
};

struct Dialog {
  std::string dialog_id;
  std::string flow_id;
  std::string writer_id;
  FlowParams flow_params;
  std::vector<NodeRef> goals;
  std::vector<GoalStatus> goal_status;
  std::vector<Turn> turns;
  bool closed = false;
  std::string created_at;

  std::optional<std::size_t> active_goal() const;
  /// Closed without a single turn (every goal skipped up front).
  bool empty() const { return closed && turns.empty(); }

  bool operator==(const Dialog&) const = default;
};

struct GoalAdvance {
  std::optional<std::size_t> next_active;
  bool closed = false;
};

struct Assignment {
  std::string flow_id;
  std::string dialog_id;
};

/// Dialogs written against flows, persisted as an append-only JSON-lines
/// record log. Every acknowledged call has been flushed and fsync'ed; reopening
/// replays the log and drops a torn final record. Mutating calls accept an
/// optional client request id: repeating an id returns the first result and
/// writes nothing.
///
/// Calls are serialized internally, so one store may be shared by many
/// request threads.
class DialogStore {
 public:
  using Clock = std::function<std::string()>;

  struct Options {
    ActTaxonomy taxonomy = ActTaxonomy::defaults();
    /// ISO-8601 UTC timestamps; defaults to the system clock.
    Clock clock;
  };

  /// An empty path keeps everything in memory.
  DialogStore(const DocumentGraph& graph, std::filesystem::path log_path, Options options);
  explicit DialogStore(const DocumentGraph& graph, std::filesystem::path log_path = {})
      : DialogStore(graph, std::move(log_path), Options{}) {}
  ~DialogStore();

  DialogStore(const DialogStore&) = delete;
  DialogStore& operator=(const DialogStore&) = delete;

  /// Registers a flow for collection; re-adding an identical flow is a no-op.
  void add_flow(const DialogFlow& flow);
  std::optional<DialogFlow> flow(std::string_view flow_id) const;
  /// Registration order (the assignment queue).
  std::vector<std::string> flow_ids() const;

  /// Claims a flow for a writer. Re-entrant for the same writer.
  /// Throws UnknownFlow, FlowAlreadyClaimed.
  std::string create_dialog(const std::string& flow_id, const std::string& writer_id,
                            const std::string& request_id = {});

  /// The writer's open dialog if any, else the oldest unclaimed flow, claimed
  /// now. nullopt when nothing is left.
  std::optional<Assignment> next_flow(const std::string& writer_id,
                                      const std::string& request_id = {});

  /// Throws UnknownDialog, DialogClosed, WrongGoal, RoleOrderViolation,
  /// UnknownAct, DanglingGrounding.
  std::size_t append_turn(const std::string& dialog_id, Turn turn,
                          const std::string& request_id = {});

  /// Records a correction of an earlier turn. Role and goal stay fixed; the
  /// original stays in the log. Returns the new revision number.
  std::size_t revise_turn(const std::string& dialog_id, std::size_t turn_index, Turn turn,
                          const std::string& request_id = {});

  /// completed: only the active goal. skipped: the active goal or any pending
  /// goal after it. Throws UnknownDialog, NotActive, AlreadyClosed.
  GoalAdvance set_goal_status(const std::string& dialog_id, std::size_t goal_index,
                              GoalStatus status, const std::string& request_id = {});

  Dialog dialog(std::string_view dialog_id) const;
  std::optional<std::string> dialog_for_flow(std::string_view flow_id) const;
  /// Creation order.
  std::vector<Dialog> dialogs() const;

  const ActTaxonomy& taxonomy() const { return options_.taxonomy; }
  const DocumentGraph& graph() const { return graph_; }
  /// Number of records in the log.
  std::size_t record_count() const;

 private:
  void replay();
  void write(nlohmann::json record);
  void apply(const nlohmann::json& record);
  std::optional<nlohmann::json> replayed(const std::string& request_id) const;
  std::string now() const;
  Dialog& dialog_ref(std::string_view dialog_id);
  const Dialog& dialog_ref(std::string_view dialog_id) const;
  void validate_turn(const Dialog& d, const Turn& turn, bool check_order) const;
  std::string create_dialog_locked(const std::string& flow_id, const std::string& writer_id,
                                   const std::string& request_id);

  const DocumentGraph& graph_;
  std::filesystem::path path_;
  Options options_;
  std::FILE* log_ = nullptr;
  mutable std::mutex mutex_;
  std::size_t records_ = 0;

  std::vector<std::string> flow_order_;
  std::map<std::string, DialogFlow, std::less<>> flows_;
  std::vector<std::string> dialog_order_;
  std::map<std::string, Dialog, std::less<>> dialogs_;
  std::map<std::string, std::string, std::less<>> dialog_by_flow_;
  std::map<std::string, nlohmann::json, std::less<>> requests_;
};

// -- corpus ----------------------------------------------------------------------

struct SplitRatios {
  double train = 0.70;
  double validation = 0.10;
  double test = 0.20;
};

struct Splits {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
};

/// Dialog-level partition. Validation and test sizes are the rounded ratio
/// shares; train takes the remainder. Membership is a seeded shuffle of the
/// sorted ids, and each split is returned sorted. Throws BadRatios.
Splits split_dataset(std::vector<std::string> dialog_ids, const SplitRatios& ratios,
                     std::uint64_t seed);
Splits split_dataset(const std::vector<Dialog>& dialogs, const SplitRatios& ratios,
                     std::uint64_t seed);

/// Turn length in segments: runs of letters/digits count once, each CJK
/// character counts on its own, punctuation and spaces separate.
std::size_t segment_count(std::string_view utf8);

using LengthMetric = std::function<std::size_t(std::string_view)>;

struct DomainCounts {
  std::size_t docs = 0;
  std::size_t tables = 0;
  std::size_t sequences = 0;
  std::size_t conditions = 0;
  std::size_t sections = 0;

  bool operator==(const DomainCounts&) const = default;
};

struct GoalCounts {
  std::size_t ordinary = 0;
  std::size_t tables = 0;
  std::size_t sequences = 0;
  std::size_t conditions = 0;

  bool operator==(const GoalCounts&) const = default;
};

/// Corpus aggregates. Means are nullopt when their denominator is zero.
struct StatsReport {
  std::size_t n_dialogs = 0;
  std::size_t n_turns = 0;
  std::size_t n_user_turns = 0;
  std::size_t n_system_turns = 0;
  std::size_t n_system_questions = 0;
  /// Dialogs grounded on more than one document.
  std::size_t n_dialogs_multidoc = 0;
  std::optional<double> docs_per_dialog;
  std::optional<double> gr_per_user_turn;
  std::optional<double> gr_per_system_turn;
  std::optional<double> user_turn_len;
  std::optional<double> system_turn_len;
  /// Completed goals by the structural family of their node.
  GoalCounts goals_by_type;
  std::map<std::string, DomainCounts> domains;
};

/// Throws DanglingGrounding if a grounding ref is not in the graph.
StatsReport compute_stats(const std::vector<Dialog>& dialogs, const DocumentGraph& graph,
                          const ActTaxonomy& taxonomy = ActTaxonomy::defaults(),
                          const LengthMetric& length = segment_count);

/// Per-domain document and structure counts.
std::map<std::string, DomainCounts> domain_counts(const DocumentGraph& graph);

nlohmann::json to_json(const StatsReport& report);
nlohmann::json to_json(const Dialog& dialog);
Dialog dialog_from_json(const nlohmann::json& j);

/// One JSON object per line, keys sorted, each tagged with its split.
/// Throws OpenDialogPresent.
std::string export_corpus(const std::vector<Dialog>& dialogs, const Splits& splits);

struct ImportedCorpus {
  std::vector<Dialog> dialogs;
  Splits splits;
};

ImportedCorpus import_corpus(std::string_view jsonl);

/// Reads taxonomy and split ratios from a JSON config
/// ({"user_acts":[],"system_acts":[],"question_acts":[],"split_ratios":[0.7,0.1,0.2]}).
/// Missing keys keep their defaults.
struct StoreConfig {
  ActTaxonomy taxonomy = ActTaxonomy::defaults();
  SplitRatios ratios;
};
StoreConfig load_store_config(const std::filesystem::path& path);

}  // namespace dgkit
