#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "dgkit/document_graph.hpp"
#include "dgkit/rng.hpp"

namespace dgkit {

enum class PromptPattern {
  // tables
  table_general,
  object_general,
  value_lookup,
  // sequences
  seq_general,
  step_general,
  step_detail,
  // condition groups
  yes,
  no,
  conditional,
  solution,
  // ordinary text
  span,
};

inline constexpr std::array<PromptPattern, 11> kAllPatterns{
    PromptPattern::table_general, PromptPattern::object_general, PromptPattern::value_lookup,
    PromptPattern::seq_general,   PromptPattern::step_general,   PromptPattern::step_detail,
    PromptPattern::yes,           PromptPattern::no,             PromptPattern::conditional,
    PromptPattern::solution,      PromptPattern::span};

/// Upper-case identifier used in template keys and flow files ("VALUE_LOOKUP").
std::string_view to_string(PromptPattern pattern);
std::optional<PromptPattern> parse_prompt_pattern(std::string_view id);
StructuralFamily family_of(PromptPattern pattern);

struct Slot {
  std::string text;
  /// Nodes the text was drawn from (several when conditions are pre-committed).
  std::vector<NodeRef> refs;

  bool operator==(const Slot&) const = default;
};

struct Prompt {
  PromptPattern pattern = PromptPattern::span;
  std::string guideline;
  std::map<std::string, Slot> slots;

  bool operator==(const Prompt&) const = default;
};

/// Locale-keyed guideline templates. Files are JSON objects mapping
/// "PATTERN.locale" to a template with `{slot}` placeholders; `{{` and `}}`
/// produce literal braces. Loading a file registers its locale even when it
/// holds no templates.
class TemplateSet {
 public:
  void load_file(const std::filesystem::path& path);
  /// Loads every *.json file in the directory.
  void load_directory(const std::filesystem::path& dir);
  void add_locale(const std::string& locale) { locales_.insert(locale); }
  void set(PromptPattern pattern, const std::string& locale, std::string text);

  bool has_locale(std::string_view locale) const;
  /// Throws UnknownLocale when the locale is unknown or lacks the pattern.
  const std::string& get(PromptPattern pattern, std::string_view locale) const;

 private:
  std::set<std::string, std::less<>> locales_;
  std::map<std::pair<PromptPattern, std::string>, std::string> templates_;
};

/// Pure `{slot}` interpolation. Throws MissingSlot for any placeholder without
/// a slot, and SyntaxError for an unbalanced brace.
std::string render_template(std::string_view tmpl, const std::map<std::string, Slot>& slots);
std::string render_template(const TemplateSet& templates, PromptPattern pattern,
                            const std::map<std::string, Slot>& slots, std::string_view locale);

/// Patterns a goal can take given what its subtree holds.
std::vector<PromptPattern> eligible_patterns(const DocumentGraph& graph, const NodeRef& goal);

/// Uniform draw over eligible_patterns. Throws UnsupportedFamily.
PromptPattern select_pattern(const DocumentGraph& graph, const NodeRef& goal, SplitMix64& rng);

struct PromptOptions {
  std::string locale = "en";
  /// Conditions the user states up front in SOLUTION prompts.
  std::size_t precommitted_conditions = 1;
};

/// Selects a pattern, samples its slots uniformly from the goal subtree and
/// renders the guideline. Throws UnsupportedFamily, EmptySubtree, MissingSlot
/// or UnknownLocale.
Prompt gen_prompt(const DocumentGraph& graph, const NodeRef& goal, SplitMix64& rng,
                  const TemplateSet& templates, const PromptOptions& options = {});

/// Fills slots for a given pattern (no pattern draw). Exposed for re-rendering
/// and tests.
std::map<std::string, Slot> fill_slots(const DocumentGraph& graph, const NodeRef& goal,
                                       PromptPattern pattern, SplitMix64& rng,
                                       const PromptOptions& options = {});

}  // namespace dgkit
