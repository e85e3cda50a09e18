#include "dgkit/dialog_store.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include <unistd.h>

#include "dgkit/graph_json.hpp"

namespace dgkit {

using json = nlohmann::json;

std::string_view to_string(Role role) { return role == Role::user ? "user" : "system"; }

std::optional<Role> parse_role(std::string_view s) {
  if (s == "user") return Role::user;
  if (s == "system") return Role::system;
  return std::nullopt;
}

std::string_view to_string(GoalStatus status) {
  switch (status) {
    case GoalStatus::pending: return "pending";
    case GoalStatus::active: return "active";
    case GoalStatus::completed: return "completed";
    case GoalStatus::skipped: return "skipped";
  }
  return "?";
}

std::optional<GoalStatus> parse_goal_status(std::string_view s) {
  for (auto st : {GoalStatus::pending, GoalStatus::active, GoalStatus::completed,
                  GoalStatus::skipped})
    if (to_string(st) == s) return st;
  return std::nullopt;
}

// -- taxonomy ----------------------------------------------------------------

ActTaxonomy ActTaxonomy::defaults() {
  return {{"query", "answer_clarification", "chitchat_open", "chitchat_close"},
          {"answer", "clarify_choice", "verify_condition", "chitchat"},
          {"clarify_choice", "verify_condition"}};
}

void ActTaxonomy::validate() const {
  auto unique = [](const std::vector<std::string>& v) {
    return std::set<std::string>(v.begin(), v.end()).size() == v.size();
  };
  if (!unique(user_acts) || !unique(system_acts) || !unique(question_acts))
    throw Error(ErrorCode::InvalidTaxonomy, "act labels must be unique");
  if (user_acts.empty() || system_acts.empty())
    throw Error(ErrorCode::InvalidTaxonomy, "both roles need at least one act");
  for (const auto& q : question_acts)
    if (std::find(system_acts.begin(), system_acts.end(), q) == system_acts.end())
      throw Error(ErrorCode::InvalidTaxonomy, "question act '" + q + "' is not a system act");
}

bool ActTaxonomy::allows(Role role, std::string_view act) const {
  const auto& acts = role == Role::user ? user_acts : system_acts;
  return std::find(acts.begin(), acts.end(), act) != acts.end();
}

bool ActTaxonomy::is_question(std::string_view act) const {
  return std::find(question_acts.begin(), question_acts.end(), act) != question_acts.end();
}

std::optional<std::size_t> Dialog::active_goal() const {
  for (std::size_t k = 0; k < goal_status.size(); ++k)
    if (goal_status[k] == GoalStatus::active) return k;
  return std::nullopt;
}

// -- json --------------------------------------------------------------------

namespace {

json turn_to_json(const Turn& t) {
  json grounding = json::array();
  for (const auto& r : t.grounding) grounding.push_back(to_json(r));
  return {{"index", t.index},       {"role", std::string(to_string(t.role))},
          {"utterance", t.utterance}, {"act", t.act},
          {"grounding", grounding}, {"goal_index", t.goal_index},
          {"created_at", t.created_at}, {"revision", t.revision}};
}

Turn turn_from_json(const json& j) {
  Turn t;
  t.index = j.value("index", std::size_t{0});
  auto role = parse_role(j.at("role").get<std::string>());
  if (!role) throw Error(ErrorCode::BadRequest, "role must be user or system");
  t.role = *role;
  t.utterance = j.at("utterance").get<std::string>();
  t.act = j.at("act").get<std::string>();
  for (const auto& r : j.value("grounding", json::array())) t.grounding.push_back(node_ref_from_json(r));
  t.goal_index = j.at("goal_index").get<std::size_t>();
  t.created_at = j.value("created_at", "");
  t.revision = j.value("revision", std::size_t{0});
  return t;
}

json params_to_json(const FlowParams& p) {
  return {{"rates",
           {{"follow_up", p.rates.follow_up},
            {"in_jump", p.rates.in_jump},
            {"out_jump", p.rates.out_jump},
            {"out_jump_boost", p.rates.out_jump_boost}}},
          {"n_goals", p.n_goals},
          {"seed", p.seed},
          {"start_doc", p.start_doc}};
}

FlowParams params_from_json(const json& j) {
  FlowParams p;
  const auto& r = j.at("rates");
  p.rates = {r.at("follow_up").get<double>(), r.at("in_jump").get<double>(),
             r.at("out_jump").get<double>(), r.at("out_jump_boost").get<double>()};
  p.n_goals = j.at("n_goals").get<std::size_t>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.start_doc = j.at("start_doc").get<std::string>();
  return p;
}

/// Moves the active marker past goal k once it is completed or skipped.
void advance(Dialog& d, std::size_t k, GoalStatus status) {
  const bool was_active = d.goal_status[k] == GoalStatus::active;
  d.goal_status[k] = status;
  if (!was_active) return;
  for (std::size_t j = k + 1; j < d.goal_status.size(); ++j) {
    if (d.goal_status[j] == GoalStatus::pending) {
      d.goal_status[j] = GoalStatus::active;
      return;
    }
  }
  d.closed = true;
}

std::string system_clock_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

json to_json(const Dialog& d) {
  json goals = json::array();
  for (std::size_t k = 0; k < d.goals.size(); ++k)
    goals.push_back({{"node", to_json(d.goals[k])},
                     {"status", std::string(to_string(d.goal_status[k]))}});
  json turns = json::array();
  for (const auto& t : d.turns) turns.push_back(turn_to_json(t));
  return {{"v", 1},
          {"dialog_id", d.dialog_id},
          {"flow_id", d.flow_id},
          {"writer_id", d.writer_id},
          {"flow_params", params_to_json(d.flow_params)},
          {"goals", std::move(goals)},
          {"turns", std::move(turns)},
          {"closed", d.closed},
          {"empty", d.empty()},
          {"created_at", d.created_at}};
}

Dialog dialog_from_json(const json& j) {
  try {
    Dialog d;
    d.dialog_id = j.at("dialog_id").get<std::string>();
    d.flow_id = j.at("flow_id").get<std::string>();
    d.writer_id = j.at("writer_id").get<std::string>();
    d.flow_params = params_from_json(j.at("flow_params"));
    for (const auto& g : j.at("goals")) {
      d.goals.push_back(node_ref_from_json(g.at("node")));
      auto st = parse_goal_status(g.at("status").get<std::string>());
      if (!st) throw Error(ErrorCode::BadRequest, "unknown goal status");
      d.goal_status.push_back(*st);
    }
    for (const auto& t : j.at("turns")) d.turns.push_back(turn_from_json(t));
    d.closed = j.at("closed").get<bool>();
    d.created_at = j.value("created_at", "");
    return d;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadRequest, std::string("malformed dialog record: ") + e.what());
  }
}

// -- store ---------------------------------------------------------------------

DialogStore::DialogStore(const DocumentGraph& graph, std::filesystem::path log_path,
                         Options options)
    : graph_(graph), path_(std::move(log_path)), options_(std::move(options)) {
  options_.taxonomy.validate();
  if (!options_.clock) options_.clock = system_clock_now;
  if (path_.empty()) return;
  replay();
  log_ = std::fopen(path_.c_str(), "ab");
  if (!log_) throw Error(ErrorCode::IoError, "cannot open store log " + path_.string());
}

DialogStore::~DialogStore() {
  if (log_) std::fclose(log_);
}

void DialogStore::replay() {
  std::ifstream in(path_, std::ios::binary);
  if (!in) return;
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string data = ss.str();
  in.close();

  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < data.size()) {
    const auto nl = data.find('\n', pos);
    if (nl == std::string::npos) {
      // Torn final record from an interrupted write: never acknowledged.
      std::filesystem::resize_file(path_, pos);
      break;
    }
    ++line_no;
    const std::string_view line(data.data() + pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error&) {
      throw Error(ErrorCode::StoreCorrupt,
                  path_.string() + ": unreadable record on line " + std::to_string(line_no));
    }
    apply(record);
    ++records_;
  }
}

void DialogStore::write(json record) {
  record["seq"] = records_;
  if (log_) {
    const std::string line = record.dump() + "\n";
    if (std::fwrite(line.data(), 1, line.size(), log_) != line.size() || std::fflush(log_) != 0 ||
        ::fsync(::fileno(log_)) != 0)
      throw Error(ErrorCode::IoError, "failed to append to store log " + path_.string());
  }
  apply(record);
  ++records_;
}

void DialogStore::apply(const json& r) {
  const auto kind = r.at("kind").get<std::string>();
  if (kind == "flow") {
    DialogFlow f = flow_from_json(r.at("flow"));
    if (!flows_.contains(f.flow_id)) {
      flow_order_.push_back(f.flow_id);
      flows_.emplace(f.flow_id, std::move(f));
    }
  } else if (kind == "create") {
    const auto& f = flows_.at(r.at("flow_id").get<std::string>());
    Dialog d;
    d.dialog_id = r.at("dialog_id").get<std::string>();
    d.flow_id = f.flow_id;
    d.writer_id = r.at("writer_id").get<std::string>();
    d.flow_params = f.params;
    for (const auto& g : f.goals) d.goals.push_back(g.node);
    d.goal_status.assign(d.goals.size(), GoalStatus::pending);
    if (!d.goal_status.empty()) d.goal_status.front() = GoalStatus::active;
    d.closed = d.goals.empty();
    d.created_at = r.value("ts", "");
    dialog_by_flow_[d.flow_id] = d.dialog_id;
    dialog_order_.push_back(d.dialog_id);
    dialogs_.emplace(d.dialog_id, std::move(d));
  } else if (kind == "turn") {
    dialog_ref(r.at("dialog_id").get<std::string>()).turns.push_back(turn_from_json(r.at("turn")));
  } else if (kind == "revise") {
    Turn t = turn_from_json(r.at("turn"));
    auto& d = dialog_ref(r.at("dialog_id").get<std::string>());
    d.turns.at(t.index) = std::move(t);
  } else if (kind == "status") {
    auto& d = dialog_ref(r.at("dialog_id").get<std::string>());
    auto st = parse_goal_status(r.at("status").get<std::string>());
    if (!st) throw Error(ErrorCode::StoreCorrupt, "unknown goal status in log");
    advance(d, r.at("goal_index").get<std::size_t>(), *st);
  } else {
    throw Error(ErrorCode::StoreCorrupt, "unknown record kind '" + kind + "'");
  }
  if (auto rid = r.find("request_id"); rid != r.end() && r.contains("result"))
    requests_[rid->get<std::string>()] = r.at("result");
}

std::optional<json> DialogStore::replayed(const std::string& request_id) const {
  if (request_id.empty()) return std::nullopt;
  auto it = requests_.find(request_id);
  if (it == requests_.end()) return std::nullopt;
  return std::optional<json>(std::in_place, it->second);
}

std::string DialogStore::now() const { return options_.clock(); }

Dialog& DialogStore::dialog_ref(std::string_view id) {
  auto it = dialogs_.find(id);
  if (it == dialogs_.end())
    throw Error(ErrorCode::UnknownDialog, "unknown dialog '" + std::string(id) + "'",
                std::string(id));
  return it->second;
}

const Dialog& DialogStore::dialog_ref(std::string_view id) const {
  return const_cast<DialogStore*>(this)->dialog_ref(id);
}

void DialogStore::add_flow(const DialogFlow& flow) {
  std::lock_guard lock(mutex_);
  if (auto it = flows_.find(flow.flow_id); it != flows_.end()) {
    if (to_json(it->second) != to_json(flow))
      throw Error(ErrorCode::InvalidArgument,
                  "flow '" + flow.flow_id + "' already registered with different content");
    return;
  }
  for (const auto& g : flow.goals)
    if (!graph_.contains(g.node))
      throw Error(ErrorCode::UnknownRef, "flow goal " + to_string(g.node) + " is not in the graph");
  write({{"kind", "flow"}, {"flow", to_json(flow)}, {"ts", now()}});
}

std::optional<DialogFlow> DialogStore::flow(std::string_view flow_id) const {
  std::lock_guard lock(mutex_);
  auto it = flows_.find(flow_id);
  if (it == flows_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> DialogStore::flow_ids() const {
  std::lock_guard lock(mutex_);
  return flow_order_;
}

std::string DialogStore::create_dialog_locked(const std::string& flow_id,
                                              const std::string& writer_id,
                                              const std::string& request_id) {
  if (auto r = replayed(request_id)) return r->at("dialog_id").get<std::string>();
  if (!flows_.contains(flow_id))
    throw Error(ErrorCode::UnknownFlow, "unknown flow '" + flow_id + "'", flow_id);
  if (writer_id.empty()) throw Error(ErrorCode::InvalidArgument, "writer id must not be empty");
  if (auto it = dialog_by_flow_.find(flow_id); it != dialog_by_flow_.end()) {
    const Dialog& d = dialogs_.at(it->second);
    if (d.writer_id != writer_id)
      throw Error(ErrorCode::FlowAlreadyClaimed,
                  "flow '" + flow_id + "' is claimed by another writer", d.writer_id);
    return d.dialog_id;
  }
  char id[32];
  std::snprintf(id, sizeof id, "dlg-%06zu", dialogs_.size() + 1);
  json record{{"kind", "create"},
              {"dialog_id", id},
              {"flow_id", flow_id},
              {"writer_id", writer_id},
              {"ts", now()}};
  if (!request_id.empty()) {
    record["request_id"] = request_id;
    record["result"] = {{"dialog_id", id}};
  }
  write(std::move(record));
  return id;
}

std::string DialogStore::create_dialog(const std::string& flow_id, const std::string& writer_id,
                                       const std::string& request_id) {
  std::lock_guard lock(mutex_);
  return create_dialog_locked(flow_id, writer_id, request_id);
}

std::optional<Assignment> DialogStore::next_flow(const std::string& writer_id,
                                                 const std::string& request_id) {
  std::lock_guard lock(mutex_);
  for (const auto& id : dialog_order_) {
    const Dialog& d = dialogs_.at(id);
    if (d.writer_id == writer_id && !d.closed) return Assignment{d.flow_id, d.dialog_id};
  }
  for (const auto& flow_id : flow_order_) {
    if (dialog_by_flow_.contains(flow_id)) continue;
    return Assignment{flow_id, create_dialog_locked(flow_id, writer_id, request_id)};
  }
  return std::nullopt;
}

void DialogStore::validate_turn(const Dialog& d, const Turn& turn, bool check_order) const {
  if (d.closed)
    throw Error(ErrorCode::DialogClosed, "dialog '" + d.dialog_id + "' is closed", d.dialog_id);
  if (check_order) {
    const auto active = d.active_goal();
    if (!active || turn.goal_index != *active)
      throw Error(ErrorCode::WrongGoal,
                  "turn targets goal " + std::to_string(turn.goal_index) + " but the active goal is " +
                      (active ? std::to_string(*active) : std::string("none")),
                  std::to_string(turn.goal_index));
    const Role expected = d.turns.empty() || d.turns.back().role == Role::system ? Role::user
                                                                                 : Role::system;
    if (turn.role != expected)
      throw Error(ErrorCode::RoleOrderViolation,
                  "expected a " + std::string(to_string(expected)) + " turn",
                  std::string(to_string(expected)));
  }
  if (!options_.taxonomy.allows(turn.role, turn.act))
    throw Error(ErrorCode::UnknownAct,
                "act '" + turn.act + "' is not a " + std::string(to_string(turn.role)) + " act",
                turn.act);
  for (const auto& ref : turn.grounding)
    if (!graph_.contains(ref))
      throw Error(ErrorCode::DanglingGrounding, "grounding " + to_string(ref) + " is not in the graph",
                  to_string(ref));
  if (turn.utterance.empty())
    throw Error(ErrorCode::BadRequest, "utterance must not be empty");
}

std::size_t DialogStore::append_turn(const std::string& dialog_id, Turn turn,
                                     const std::string& request_id) {
  std::lock_guard lock(mutex_);
  if (auto r = replayed(request_id)) return r->at("turn_index").get<std::size_t>();
  const Dialog& d = dialog_ref(dialog_id);
  validate_turn(d, turn, true);
  turn.index = d.turns.size();
  turn.revision = 0;
  turn.created_at = now();
  json record{{"kind", "turn"}, {"dialog_id", dialog_id}, {"turn", turn_to_json(turn)}};
  if (!request_id.empty()) {
    record["request_id"] = request_id;
    record["result"] = {{"turn_index", turn.index}};
  }
  write(std::move(record));
  return turn.index;
}

std::size_t DialogStore::revise_turn(const std::string& dialog_id, std::size_t turn_index,
                                     Turn turn, const std::string& request_id) {
  std::lock_guard lock(mutex_);
  if (auto r = replayed(request_id)) return r->at("revision").get<std::size_t>();
  const Dialog& d = dialog_ref(dialog_id);
  if (turn_index >= d.turns.size())
    throw Error(ErrorCode::InvalidArgument, "no turn " + std::to_string(turn_index));
  const Turn& old = d.turns[turn_index];
  turn.index = turn_index;
  turn.role = old.role;
  turn.goal_index = old.goal_index;
  turn.revision = old.revision + 1;
  turn.created_at = now();
  validate_turn(d, turn, false);
  json record{{"kind", "revise"}, {"dialog_id", dialog_id}, {"turn", turn_to_json(turn)}};
  if (!request_id.empty()) {
    record["request_id"] = request_id;
    record["result"] = {{"revision", turn.revision}};
  }
  write(std::move(record));
  return turn.revision;
}

GoalAdvance DialogStore::set_goal_status(const std::string& dialog_id, std::size_t goal_index,
                                         GoalStatus status, const std::string& request_id) {
  std::lock_guard lock(mutex_);
  auto result_of = [](const Dialog& d) {
    return GoalAdvance{d.active_goal(), d.closed};
  };
  if (auto r = replayed(request_id)) {
    GoalAdvance a;
    a.closed = r->at("closed").get<bool>();
    if (!r->at("next_active").is_null()) a.next_active = r->at("next_active").get<std::size_t>();
    return a;
  }
  const Dialog& d = dialog_ref(dialog_id);
  if (d.closed)
    throw Error(ErrorCode::AlreadyClosed, "dialog '" + dialog_id + "' is closed", dialog_id);
  if (status != GoalStatus::completed && status != GoalStatus::skipped)
    throw Error(ErrorCode::InvalidArgument, "status must be completed or skipped");
  const auto active = d.active_goal();
  const bool is_active = active && goal_index == *active;
  const bool skippable_ahead = status == GoalStatus::skipped && active && goal_index > *active &&
                               goal_index < d.goal_status.size() &&
                               d.goal_status[goal_index] == GoalStatus::pending;
  if (!is_active && !skippable_ahead)
    throw Error(ErrorCode::NotActive,
                "goal " + std::to_string(goal_index) + " cannot be marked " +
                    std::string(to_string(status)),
                std::to_string(goal_index));

  Dialog preview = d;
  advance(preview, goal_index, status);
  const GoalAdvance out = result_of(preview);
  json record{{"kind", "status"},
              {"dialog_id", dialog_id},
              {"goal_index", goal_index},
              {"status", std::string(to_string(status))},
              {"ts", now()}};
  if (!request_id.empty()) {
    record["request_id"] = request_id;
    record["result"] = {{"closed", out.closed},
                        {"next_active", out.next_active ? json(*out.next_active) : json(nullptr)}};
  }
  write(std::move(record));
  return out;
}

Dialog DialogStore::dialog(std::string_view dialog_id) const {
  std::lock_guard lock(mutex_);
  return dialog_ref(dialog_id);
}

std::optional<std::string> DialogStore::dialog_for_flow(std::string_view flow_id) const {
  std::lock_guard lock(mutex_);
  auto it = dialog_by_flow_.find(flow_id);
  if (it == dialog_by_flow_.end()) return std::nullopt;
  return it->second;
}

std::vector<Dialog> DialogStore::dialogs() const {
  std::lock_guard lock(mutex_);
  std::vector<Dialog> out;
  out.reserve(dialog_order_.size());
  for (const auto& id : dialog_order_) out.push_back(dialogs_.at(id));
  return out;
}

std::size_t DialogStore::record_count() const {
  std::lock_guard lock(mutex_);
  return records_;
}

}  // namespace dgkit
