#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "dgkit/dialog_store.hpp"
#include "dgkit/rng.hpp"

namespace dgkit {

using json = nlohmann::json;

// -- splits -----------------------------------------------------------------------

Splits split_dataset(std::vector<std::string> ids, const SplitRatios& ratios, std::uint64_t seed) {
  const double parts[] = {ratios.train, ratios.validation, ratios.test};
  for (double p : parts)
    if (!std::isfinite(p) || p < 0.0)
      throw Error(ErrorCode::BadRatios, "split ratios must be finite and non-negative");
  if (std::abs(ratios.train + ratios.validation + ratios.test - 1.0) > 1e-9)
    throw Error(ErrorCode::BadRatios, "split ratios must sum to 1");

  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw Error(ErrorCode::InvalidArgument, "duplicate dialog id in split input");

  const std::size_t n = ids.size();
  const auto share = [n](double r) { return static_cast<std::size_t>(std::llround(r * n)); };
  const std::size_t n_val = std::min(share(ratios.validation), n);
  const std::size_t n_test = std::min(share(ratios.test), n - n_val);

  SplitMix64 rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(ids[i - 1], ids[rng.index(i)]);

  Splits out;
  const auto n_train = n - n_val - n_test;
  out.train.assign(ids.begin(), ids.begin() + n_train);
  out.validation.assign(ids.begin() + n_train, ids.begin() + n_train + n_val);
  out.test.assign(ids.begin() + n_train + n_val, ids.end());
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.validation.begin(), out.validation.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

Splits split_dataset(const std::vector<Dialog>& dialogs, const SplitRatios& ratios,
                     std::uint64_t seed) {
  std::vector<std::string> ids;
  ids.reserve(dialogs.size());
  for (const auto& d : dialogs) ids.push_back(d.dialog_id);
  return split_dataset(std::move(ids), ratios, seed);
}

// -- lengths ----------------------------------------------------------------------

namespace {

bool is_cjk(char32_t c) {
  return (c >= 0x3040 && c <= 0x30FF) || (c >= 0x3400 && c <= 0x4DBF) ||
         (c >= 0x4E00 && c <= 0x9FFF) || (c >= 0xAC00 && c <= 0xD7AF) ||
         (c >= 0xF900 && c <= 0xFAFF) || (c >= 0x20000 && c <= 0x2FFFF);
}

bool is_word_char(char32_t c) {
  if (c < 0x80) return std::isalnum(static_cast<unsigned char>(c)) != 0;
  // Fullwidth digits and Latin letters.
  if ((c >= 0xFF10 && c <= 0xFF19) || (c >= 0xFF21 && c <= 0xFF3A) ||
      (c >= 0xFF41 && c <= 0xFF5A))
    return true;
  // Punctuation blocks and spaces outside ASCII.
  if ((c >= 0x2000 && c <= 0x206F) || (c >= 0x3000 && c <= 0x303F) ||
      (c >= 0xFF00 && c <= 0xFFEF) || c == 0x00A0 || (c >= 0x00A1 && c <= 0x00BF) ||
      c == 0x00D7 || c == 0x00F7)
    return false;
  return true;
}

/// Next code point; malformed bytes decode as U+FFFD and advance by one.
char32_t next_code_point(std::string_view s, std::size_t& i) {
  const auto b = static_cast<unsigned char>(s[i]);
  int len = b < 0x80 ? 1 : (b >> 5) == 0x6 ? 2 : (b >> 4) == 0xE ? 3 : (b >> 3) == 0x1E ? 4 : 0;
  if (len == 0 || i + len > s.size()) {
    ++i;
    return 0xFFFD;
  }
  char32_t c = len == 1 ? b : b & (0x7F >> len);
  for (int k = 1; k < len; ++k) {
    const auto cb = static_cast<unsigned char>(s[i + k]);
    if ((cb & 0xC0) != 0x80) {
      ++i;
      return 0xFFFD;
    }
    c = (c << 6) | (cb & 0x3F);
  }
  i += len;
  return c;
}

}  // namespace

std::size_t segment_count(std::string_view utf8) {
  std::size_t count = 0;
  bool in_word = false;
  for (std::size_t i = 0; i < utf8.size();) {
    const char32_t c = next_code_point(utf8, i);
    if (is_cjk(c)) {
      ++count;
      in_word = false;
    } else if (is_word_char(c)) {
      if (!in_word) ++count;
      in_word = true;
    } else {
      in_word = false;
    }
  }
  return count;
}

// -- stats ------------------------------------------------------------------------

namespace {

/// Family of the goal node itself, else of the closest enclosing structure.
StructuralFamily goal_family(const DocumentGraph& g, DocumentGraph::Index i) {
  for (std::optional<DocumentGraph::Index> at = i; at; at = g.parent(*at)) {
    const auto t = g.node(*at).type;
    if (auto f = family_of(t); f && *f != StructuralFamily::ordinary) return *f;
  }
  return StructuralFamily::ordinary;
}

std::optional<double> mean(double sum, std::size_t n) {
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

}  // namespace

std::map<std::string, DomainCounts> domain_counts(const DocumentGraph& graph) {
  std::map<std::string, DomainCounts> out;
  for (const auto& [name, _] : graph.domains()) out[name];
  for (const auto& doc : graph.documents()) {
    auto& counts = out[graph.domain_of(doc)];
    ++counts.docs;
    for (auto i : graph.preorder(graph.document_top(doc))) {
      const auto t = graph.node(i).type;
      if (t == NodeType::table) ++counts.tables;
      if (t == NodeType::sequence) ++counts.sequences;
      if (t == NodeType::section) ++counts.sections;
      if (is_condition_group(t)) {
        const auto p = graph.parent(i);
        if (!p || !is_condition_group(graph.node(*p).type)) ++counts.conditions;
      }
    }
  }
  return out;
}

StatsReport compute_stats(const std::vector<Dialog>& dialogs, const DocumentGraph& graph,
                          const ActTaxonomy& taxonomy, const LengthMetric& length) {
  StatsReport r;
  r.n_dialogs = dialogs.size();
  double docs_sum = 0, user_gr = 0, system_gr = 0, user_len = 0, system_len = 0;
  for (const auto& d : dialogs) {
    std::set<std::string> docs;
    for (const auto& t : d.turns) {
      for (const auto& ref : t.grounding) {
        if (!graph.contains(ref))
          throw Error(ErrorCode::DanglingGrounding,
                      "dialog " + d.dialog_id + " grounds on unknown node " + to_string(ref),
                      to_string(ref));
        docs.insert(ref.doc_id);
      }
      ++r.n_turns;
      const auto len = static_cast<double>(length(t.utterance));
      if (t.role == Role::user) {
        ++r.n_user_turns;
        user_gr += static_cast<double>(t.grounding.size());
        user_len += len;
      } else {
        ++r.n_system_turns;
        system_gr += static_cast<double>(t.grounding.size());
        system_len += len;
        if (taxonomy.is_question(t.act)) ++r.n_system_questions;
      }
    }
    docs_sum += static_cast<double>(docs.size());
    if (docs.size() > 1) ++r.n_dialogs_multidoc;

    for (std::size_t k = 0; k < d.goals.size(); ++k) {
      if (d.goal_status[k] != GoalStatus::completed) continue;
      const auto i = graph.find(d.goals[k]);
      if (!i)
        throw Error(ErrorCode::UnknownRef,
                    "dialog " + d.dialog_id + " has unknown goal " + to_string(d.goals[k]),
                    to_string(d.goals[k]));
      switch (goal_family(graph, *i)) {
        case StructuralFamily::ordinary: ++r.goals_by_type.ordinary; break;
        case StructuralFamily::table: ++r.goals_by_type.tables; break;
        case StructuralFamily::sequence: ++r.goals_by_type.sequences; break;
        case StructuralFamily::condition: ++r.goals_by_type.conditions; break;
      }
    }
  }
  r.docs_per_dialog = mean(docs_sum, r.n_dialogs);
  r.gr_per_user_turn = mean(user_gr, r.n_user_turns);
  r.gr_per_system_turn = mean(system_gr, r.n_system_turns);
  r.user_turn_len = mean(user_len, r.n_user_turns);
  r.system_turn_len = mean(system_len, r.n_system_turns);
  r.domains = domain_counts(graph);
  return r;
}

json to_json(const StatsReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json domains = json::object();
  for (const auto& [name, c] : r.domains)
    domains[name] = {{"docs", c.docs},
                     {"tables", c.tables},
                     {"sequences", c.sequences},
                     {"conditions", c.conditions},
                     {"sections", c.sections}};
  return {{"v", 1},
          {"n_dialogs", r.n_dialogs},
          {"n_turns", r.n_turns},
          {"n_user_turns", r.n_user_turns},
          {"n_system_turns", r.n_system_turns},
          {"n_system_questions", r.n_system_questions},
          {"n_dialogs_multidoc", r.n_dialogs_multidoc},
          {"docs_per_dialog", opt(r.docs_per_dialog)},
          {"gr_per_user_turn", opt(r.gr_per_user_turn)},
          {"gr_per_system_turn", opt(r.gr_per_system_turn)},
          {"user_turn_len", opt(r.user_turn_len)},
          {"system_turn_len", opt(r.system_turn_len)},
          {"goals_by_type",
           {{"ordinary", r.goals_by_type.ordinary},
            {"tables", r.goals_by_type.tables},
            {"sequences", r.goals_by_type.sequences},
            {"conditions", r.goals_by_type.conditions}}},
          {"domains", std::move(domains)}};
}

// -- export / import --------------------------------------------------------------

std::string export_corpus(const std::vector<Dialog>& dialogs, const Splits& splits) {
  std::map<std::string, std::string, std::less<>> label;
  for (const auto& id : splits.train) label[id] = "train";
  for (const auto& id : splits.validation) label[id] = "validation";
  for (const auto& id : splits.test) label[id] = "test";

  std::string out;
  for (const auto& d : dialogs) {
    if (!d.closed)
      throw Error(ErrorCode::OpenDialogPresent, "dialog " + d.dialog_id + " is still open",
                  d.dialog_id);
    json j = to_json(d);
    auto it = label.find(d.dialog_id);
    j["split"] = it == label.end() ? json(nullptr) : json(it->second);
    out += j.dump();
    out += '\n';
  }
  return out;
}

ImportedCorpus import_corpus(std::string_view jsonl) {
  ImportedCorpus out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < jsonl.size()) {
    auto nl = jsonl.find('\n', pos);
    if (nl == std::string_view::npos) nl = jsonl.size();
    const auto line = jsonl.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::BadRequest, "line " + std::to_string(line_no) + ": " + e.what());
    }
    Dialog d = dialog_from_json(j);
    const auto split = j.value("split", json(nullptr));
    if (split == "train") out.splits.train.push_back(d.dialog_id);
    else if (split == "validation") out.splits.validation.push_back(d.dialog_id);
    else if (split == "test") out.splits.test.push_back(d.dialog_id);
    out.dialogs.push_back(std::move(d));
  }
  return out;
}

StoreConfig load_store_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot read config " + path.string());
  StoreConfig cfg;
  try {
    const json j = json::parse(in);
    if (j.contains("user_acts")) cfg.taxonomy.user_acts = j["user_acts"].get<std::vector<std::string>>();
    if (j.contains("system_acts"))
      cfg.taxonomy.system_acts = j["system_acts"].get<std::vector<std::string>>();
    if (j.contains("question_acts"))
      cfg.taxonomy.question_acts = j["question_acts"].get<std::vector<std::string>>();
    if (j.contains("split_ratios")) {
      const auto r = j["split_ratios"].get<std::vector<double>>();
      if (r.size() != 3) throw Error(ErrorCode::BadRatios, "split_ratios needs three entries");
      cfg.ratios = {r[0], r[1], r[2]};
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, path.string() + ": " + e.what());
  }
  cfg.taxonomy.validate();
  return cfg;
}

}  // namespace dgkit
