#include "dgkit/prompt_gen.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace dgkit {

namespace {

using Index = DocumentGraph::Index;

constexpr std::array<std::pair<PromptPattern, std::string_view>, 11> kPatternIds{{
    {PromptPattern::table_general, "TABLE_GENERAL"},
    {PromptPattern::object_general, "OBJECT_GENERAL"},
    {PromptPattern::value_lookup, "VALUE_LOOKUP"},
    {PromptPattern::seq_general, "SEQ_GENERAL"},
    {PromptPattern::step_general, "STEP_GENERAL"},
    {PromptPattern::step_detail, "STEP_DETAIL"},
    {PromptPattern::yes, "YES"},
    {PromptPattern::no, "NO"},
    {PromptPattern::conditional, "CONDITIONAL"},
    {PromptPattern::solution, "SOLUTION"},
    {PromptPattern::span, "SPAN"},
}};

std::vector<Index> children_of_type(const DocumentGraph& g, Index i, NodeType type) {
  std::vector<Index> out;
  for (Index c : g.children(i))
    if (g.node(c).type == type) out.push_back(c);
  return out;
}

std::vector<Index> descendants_of_type(const DocumentGraph& g, Index i, NodeType type) {
  std::vector<Index> out;
  for (Index d : g.preorder(i))
    if (d != i && g.node(d).type == type) out.push_back(d);
  return out;
}

/// Objects that have at least one attribute carrying a value.
std::vector<Index> objects_with_values(const DocumentGraph& g, Index table) {
  std::vector<Index> out;
  for (Index o : children_of_type(g, table, NodeType::object)) {
    for (Index a : children_of_type(g, o, NodeType::attribute)) {
      if (!children_of_type(g, a, NodeType::value).empty()) {
        out.push_back(o);
        break;
      }
    }
  }
  return out;
}

Slot slot_of(const DocumentGraph& g, Index i) { return Slot{g.node(i).text, {g.node(i).ref}}; }

StructuralFamily require_family(const DocumentGraph& g, Index goal) {
  const Node& n = g.node(goal);
  auto family = family_of(n.type);
  if (!family)
    throw Error(ErrorCode::UnsupportedFamily,
                "no prompt family for " + std::string(to_string(n.type)) + " goal " +
                    to_string(n.ref),
                to_string(n.ref));
  return *family;
}

}  // namespace

std::string_view to_string(PromptPattern pattern) {
  for (const auto& [p, id] : kPatternIds)
    if (p == pattern) return id;
  return "?";
}

std::optional<PromptPattern> parse_prompt_pattern(std::string_view id) {
  for (const auto& [p, s] : kPatternIds)
    if (s == id) return p;
  return std::nullopt;
}

StructuralFamily family_of(PromptPattern pattern) {
  switch (pattern) {
    case PromptPattern::table_general:
    case PromptPattern::object_general:
    case PromptPattern::value_lookup: return StructuralFamily::table;
    case PromptPattern::seq_general:
    case PromptPattern::step_general:
    case PromptPattern::step_detail: return StructuralFamily::sequence;
    case PromptPattern::yes:
    case PromptPattern::no:
    case PromptPattern::conditional:
    case PromptPattern::solution: return StructuralFamily::condition;
    case PromptPattern::span: return StructuralFamily::ordinary;
  }
  return StructuralFamily::ordinary;
}

// -- templates ---------------------------------------------------------------

void TemplateSet::load_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read template file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SyntaxError, path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::SyntaxError, path.string() + ": expected an object");
  // File stem names the locale ("en.json" -> "en").
  locales_.insert(path.stem().string());
  for (const auto& [key, value] : j.items()) {
    const auto dot = key.rfind('.');
    if (dot == std::string::npos)
      throw Error(ErrorCode::SyntaxError, path.string() + ": key '" + key + "' is not PATTERN.locale");
    auto pattern = parse_prompt_pattern(std::string_view(key).substr(0, dot));
    if (!pattern)
      throw Error(ErrorCode::SyntaxError, path.string() + ": unknown pattern in key '" + key + "'");
    set(*pattern, key.substr(dot + 1), value.get<std::string>());
  }
}

void TemplateSet::load_directory(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  std::error_code ec;
  for (const auto& entry : std::filesystem::directory_iterator(dir, ec))
    if (entry.path().extension() == ".json") files.push_back(entry.path());
  if (ec) throw Error(ErrorCode::IoError, "cannot list template directory " + dir.string());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) load_file(f);
}

void TemplateSet::set(PromptPattern pattern, const std::string& locale, std::string text) {
  locales_.insert(locale);
  templates_[{pattern, locale}] = std::move(text);
}

bool TemplateSet::has_locale(std::string_view locale) const {
  return locales_.find(locale) != locales_.end();
}

const std::string& TemplateSet::get(PromptPattern pattern, std::string_view locale) const {
  if (!has_locale(locale))
    throw Error(ErrorCode::UnknownLocale, "unknown locale '" + std::string(locale) + "'",
                std::string(locale));
  auto it = templates_.find({pattern, std::string(locale)});
  if (it == templates_.end())
    throw Error(ErrorCode::UnknownLocale,
                "locale '" + std::string(locale) + "' has no template for " +
                    std::string(to_string(pattern)),
                std::string(locale));
  return it->second;
}

std::string render_template(std::string_view tmpl, const std::map<std::string, Slot>& slots) {
  std::string out;
  out.reserve(tmpl.size() + 64);
  for (std::size_t i = 0; i < tmpl.size(); ++i) {
    const char c = tmpl[i];
    if (c == '{' && i + 1 < tmpl.size() && tmpl[i + 1] == '{') {
      out += '{';
      ++i;
    } else if (c == '}' && i + 1 < tmpl.size() && tmpl[i + 1] == '}') {
      out += '}';
      ++i;
    } else if (c == '{') {
      const auto close = tmpl.find('}', i + 1);
      if (close == std::string_view::npos)
        throw Error(ErrorCode::SyntaxError, "unterminated placeholder in template");
      const std::string name(tmpl.substr(i + 1, close - i - 1));
      auto it = slots.find(name);
      if (it == slots.end())
        throw Error(ErrorCode::MissingSlot, "template slot '" + name + "' is not filled", name);
      out += it->second.text;
      i = close;
    } else if (c == '}') {
      throw Error(ErrorCode::SyntaxError, "unbalanced '}' in template");
    } else {
      out += c;
    }
  }
  return out;
}

std::string render_template(const TemplateSet& templates, PromptPattern pattern,
                            const std::map<std::string, Slot>& slots, std::string_view locale) {
  return render_template(templates.get(pattern, locale), slots);
}

// -- selection -----------------------------------------------------------------

std::vector<PromptPattern> eligible_patterns(const DocumentGraph& g, const NodeRef& goal) {
  const Index i = g.index_of(goal);
  std::vector<PromptPattern> out;
  switch (require_family(g, i)) {
    case StructuralFamily::ordinary:
      out = {PromptPattern::span};
      break;
    case StructuralFamily::table:
      out.push_back(PromptPattern::table_general);
      if (!children_of_type(g, i, NodeType::object).empty())
        out.push_back(PromptPattern::object_general);
      if (!objects_with_values(g, i).empty()) out.push_back(PromptPattern::value_lookup);
      break;
    case StructuralFamily::sequence:
      out.push_back(PromptPattern::seq_general);
      if (!children_of_type(g, i, NodeType::sequence_step).empty()) {
        out.push_back(PromptPattern::step_general);
        out.push_back(PromptPattern::step_detail);
      }
      break;
    case StructuralFamily::condition:
      out = {PromptPattern::yes, PromptPattern::no};
      if (!descendants_of_type(g, i, NodeType::condition).empty() &&
          !group_solutions(g, i).empty()) {
        out.push_back(PromptPattern::conditional);
        out.push_back(PromptPattern::solution);
      }
      break;
  }
  return out;
}

PromptPattern select_pattern(const DocumentGraph& g, const NodeRef& goal, SplitMix64& rng) {
  const auto patterns = eligible_patterns(g, goal);
  return patterns[rng.index(patterns.size())];
}

std::map<std::string, Slot> fill_slots(const DocumentGraph& g, const NodeRef& goal,
                                       PromptPattern pattern, SplitMix64& rng,
                                       const PromptOptions& options) {
  const Index i = g.index_of(goal);
  const auto eligible = eligible_patterns(g, goal);
  if (std::find(eligible.begin(), eligible.end(), pattern) == eligible.end())
    throw Error(ErrorCode::UnsupportedFamily,
                std::string(to_string(pattern)) + " does not apply to " + to_string(goal),
                to_string(goal));

  std::map<std::string, Slot> slots;
  switch (pattern) {
    case PromptPattern::span:
      slots["node"] = slot_of(g, i);
      break;
    case PromptPattern::table_general:
      slots["table"] = slot_of(g, i);
      break;
    case PromptPattern::object_general: {
      const auto objects = children_of_type(g, i, NodeType::object);
      slots["table"] = slot_of(g, i);
      slots["object"] = slot_of(g, objects[rng.index(objects.size())]);
      break;
    }
    case PromptPattern::value_lookup: {
      const auto objects = objects_with_values(g, i);
      const Index object = objects[rng.index(objects.size())];
      std::vector<Index> attributes;
      for (Index a : children_of_type(g, object, NodeType::attribute))
        if (!children_of_type(g, a, NodeType::value).empty()) attributes.push_back(a);
      const Index attribute = attributes[rng.index(attributes.size())];
      const auto values = children_of_type(g, attribute, NodeType::value);
      const Index value = values[rng.index(values.size())];
      slots["table"] = slot_of(g, i);
      slots["object"] = slot_of(g, object);
      slots["attribute"] = slot_of(g, attribute);
      slots["value"] = slot_of(g, value);
      break;
    }
    case PromptPattern::seq_general:
      slots["sequence"] = slot_of(g, i);
      break;
    case PromptPattern::step_general:
    case PromptPattern::step_detail: {
      const auto steps = children_of_type(g, i, NodeType::sequence_step);
      slots["sequence"] = slot_of(g, i);
      slots["step"] = slot_of(g, steps[rng.index(steps.size())]);
      break;
    }
    case PromptPattern::yes:
    case PromptPattern::no:
      slots["group"] = slot_of(g, i);
      slots["verdict"] = Slot{pattern == PromptPattern::yes ? "YES" : "NO", {goal}};
      break;
    case PromptPattern::conditional:
      slots["group"] = slot_of(g, i);
      slots["solution"] = slot_of(g, group_solutions(g, i).front());
      break;
    case PromptPattern::solution: {
      const auto conditions = descendants_of_type(g, i, NodeType::condition);
      const std::size_t k = std::clamp<std::size_t>(options.precommitted_conditions, 1,
                                                    conditions.size());
      // Partial Fisher-Yates over positions, then restore document order.
      std::vector<std::size_t> pos(conditions.size());
      for (std::size_t j = 0; j < pos.size(); ++j) pos[j] = j;
      for (std::size_t j = 0; j < k; ++j)
        std::swap(pos[j], pos[j + rng.index(pos.size() - j)]);
      pos.resize(k);
      std::sort(pos.begin(), pos.end());
      Slot stated;
      for (std::size_t p : pos) {
        const Index c = conditions[p];
        if (!stated.text.empty()) stated.text += "; ";
        stated.text += g.node(c).text;
        stated.refs.push_back(g.node(c).ref);
      }
      slots["group"] = slot_of(g, i);
      slots["condition"] = std::move(stated);
      slots["solution"] = slot_of(g, group_solutions(g, i).front());
      break;
    }
  }
  return slots;
}

Prompt gen_prompt(const DocumentGraph& g, const NodeRef& goal, SplitMix64& rng,
                  const TemplateSet& templates, const PromptOptions& options) {
  const Index i = g.index_of(goal);
  const Node& n = g.node(i);
  const auto family = require_family(g, i);
  const bool empty = [&] {
    switch (family) {
      case StructuralFamily::ordinary: return n.text.empty();
      case StructuralFamily::table: return children_of_type(g, i, NodeType::object).empty();
      case StructuralFamily::sequence:
        return children_of_type(g, i, NodeType::sequence_step).empty();
      case StructuralFamily::condition:
        return descendants_of_type(g, i, NodeType::condition).empty();
    }
    return true;
  }();
  if (empty)
    throw Error(ErrorCode::EmptySubtree, "nothing to ask about under " + to_string(goal),
                to_string(goal));

  Prompt prompt;
  prompt.pattern = select_pattern(g, goal, rng);
  prompt.slots = fill_slots(g, goal, prompt.pattern, rng, options);
  prompt.guideline = render_template(templates, prompt.pattern, prompt.slots, options.locale);
  return prompt;
}

}  // namespace dgkit
