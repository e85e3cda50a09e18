#pragma once

#include <compare>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "dgkit/error.hpp"

namespace dgkit {

enum class NodeType {
  root,
  section,
  ordinary,
  disjunction,
  conjunction,
  condition,
  solution,
  negation,
  table,
  object,
  attribute,
  value,
  sequence,
  sequence_step,
  see_more,
};

inline constexpr std::size_t kNodeTypeCount = 15;

std::string_view to_string(NodeType type);
std::optional<NodeType> try_parse_node_type(std::string_view label);
/// Throws UnknownTypeLabel for anything outside the fixed label set.
NodeType parse_node_type(std::string_view label);

/// disjunction, conjunction and negation group conditions together.
constexpr bool is_condition_group(NodeType t) {
  return t == NodeType::disjunction || t == NodeType::conjunction || t == NodeType::negation;
}

/// Goal families. Prompt patterns and corpus statistics are keyed by these.
enum class StructuralFamily { ordinary, table, sequence, condition };

std::string_view to_string(StructuralFamily family);
std::optional<StructuralFamily> family_of(NodeType type);

struct NodeRef {
  std::string doc_id;
  std::string node_id;

  auto operator<=>(const NodeRef&) const = default;
  bool operator==(const NodeRef&) const = default;
};

/// "doc#node"; the form used inside string-valued node properties.
std::string to_string(const NodeRef& ref);
std::optional<NodeRef> parse_node_ref(std::string_view text);

namespace props {
inline constexpr std::string_view kIsSuperLeaf = "is_super_leaf";
inline constexpr std::string_view kLinkedNode = "linked_node";
}  // namespace props

struct Node {
  NodeRef ref;
  NodeType type = NodeType::ordinary;
  std::string text;
  std::map<std::string, std::string> properties;

  bool is_super_leaf() const;
  std::optional<NodeRef> linked_node() const;
};

/// Where the solution of a condition group hangs in the hierarchy.
enum class SolutionAttachment { child, sibling };

struct Violation {
  std::string rule;
  NodeRef node;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
  std::size_t count(std::string_view rule) const;
};

/// Reference kept by domain roots: they live in a reserved pseudo-document.
NodeRef domain_root_ref(std::string_view domain);

/// Directed property graph over every ingested document. Hierarchy edges form
/// a per-domain forest in document order; see_more nodes contribute link edges
/// across documents.
///
/// The graph is mutable only while it is being built (node/edge insertion and
/// super-leaf marking). Afterwards it is read-only and may be shared between
/// threads.
class DocumentGraph {
 public:
  using Index = std::size_t;

  explicit DocumentGraph(SolutionAttachment attachment = SolutionAttachment::child)
      : attachment_(attachment) {}

  // -- construction ---------------------------------------------------------

  Index add_node(Node node);
  /// Creates (or returns) the root node of a domain.
  Index add_domain(const std::string& domain);
  /// Appends child to parent's ordered child list. Unknown refs throw OrphanNode.
  void add_hierarchy_edge(const NodeRef& parent, const NodeRef& child);
  void set_super_leaf(Index i, bool value);
  /// Recomputes document order, document tops and link edges.
  void finalize();

  // -- access ---------------------------------------------------------------

  std::size_t size() const { return nodes_.size(); }
  const Node& node(Index i) const { return nodes_.at(i); }
  const Node& node(const NodeRef& ref) const { return nodes_.at(index_of(ref)); }
  std::optional<Index> find(const NodeRef& ref) const;
  /// Throws UnknownRef.
  Index index_of(const NodeRef& ref) const;
  bool contains(const NodeRef& ref) const { return find(ref).has_value(); }

  const std::vector<Index>& children(Index i) const { return children_.at(i); }
  const std::vector<Index>& parents(Index i) const { return parents_.at(i); }
  std::optional<Index> parent(Index i) const;

  const std::map<std::string, Index>& domains() const { return domains_; }
  /// Document ids in document order: domains by name, then ingestion order.
  const std::vector<std::string>& documents() const { return documents_; }
  bool has_document(std::string_view doc_id) const;
  /// Top (title) node of a document. Throws UnknownDoc.
  Index document_top(std::string_view doc_id) const;
  /// Domain the document hangs under. Throws UnknownDoc.
  const std::string& domain_of(std::string_view doc_id) const;
  /// Root of the domain containing node i (walks hierarchy parents).
  std::optional<Index> domain_root_of(Index i) const;

  /// (see_more node, target) pairs whose target exists, in document order.
  const std::vector<std::pair<Index, Index>>& link_edges() const { return link_edges_; }

  /// Pre-order walk of i's hierarchy subtree (i first). Follows the first
  /// parent convention, so it terminates even on malformed graphs.
  std::vector<Index> preorder(Index i) const;
  /// Every node in document order; nodes unreachable from any domain root
  /// follow in insertion order.
  std::vector<Index> document_order() const;

  SolutionAttachment solution_attachment() const { return attachment_; }

 private:
  SolutionAttachment attachment_;
  std::vector<Node> nodes_;
  std::map<NodeRef, Index> index_;
  std::vector<std::vector<Index>> children_;
  std::vector<std::vector<Index>> parents_;
  std::map<std::string, Index> domains_;

  std::vector<std::string> documents_;
  std::map<std::string, Index, std::less<>> document_tops_;
  std::map<std::string, std::string, std::less<>> document_domains_;
  std::vector<std::pair<Index, Index>> link_edges_;
};

/// Pure; never mutates. Every breach is listed with the offending node and the
/// rule name.
ValidationReport validate(const DocumentGraph& graph);

/// Rules that are structural (reported as ShapeViolation by build_graph).
bool is_shape_rule(std::string_view rule);

/// Hierarchy path from ancestor down to node, both inclusive.
/// Throws NotDescendant when node is outside ancestor's subtree.
std::vector<NodeRef> get_path(const DocumentGraph& graph, const NodeRef& ancestor,
                              const NodeRef& node);

/// Super-leaves in root's subtree (root included) not in excluded, in document order.
std::vector<NodeRef> subtree_super_leaves(const DocumentGraph& graph, const NodeRef& root,
                                          const std::set<NodeRef>& excluded = {});

struct MarkingRuleSet {
  /// Ordinary hierarchy leaves lying outside any table, sequence or condition structure.
  bool ordinary_leaves = false;
  /// Roots of table, sequence and condition-group substructures.
  bool structure_roots = false;

  static MarkingRuleSet defaults() { return {true, true}; }
  static MarkingRuleSet none() { return {}; }
};

/// Recomputes every is_super_leaf flag from rules, then applies overrides.
/// Sections, roots and see_more nodes are never marked by rules. Idempotent.
/// Returns the number of marked nodes. Throws UnknownOverrideRef.
std::size_t mark_super_leaves(DocumentGraph& graph, const MarkingRuleSet& rules,
                              const std::map<NodeRef, bool>& overrides = {});

struct Neighbors {
  std::optional<NodeRef> parent;
  std::vector<NodeRef> siblings;
  std::vector<NodeRef> children;
};

struct GoalContext {
  std::vector<NodeRef> path_from_root;
  Neighbors neighbors;
};

/// Path from the goal's domain root plus its hierarchy neighbours. Throws UnknownRef.
GoalContext goal_context(const DocumentGraph& graph, const NodeRef& goal);

/// Documents this one links to via see_more nodes; deduplicated, document
/// order, never itself. Throws UnknownDoc.
std::vector<std::string> connected_docs(const DocumentGraph& graph, std::string_view doc_id);

/// Solution nodes associated with a condition group under the graph's
/// attachment mode.
std::vector<DocumentGraph::Index> group_solutions(const DocumentGraph& graph,
                                                  DocumentGraph::Index group);

/// Thrown by build_graph; carries the complete report.
class GraphBuildError : public Error {
 public:
  GraphBuildError(ErrorCode code, const std::string& message, ValidationReport report)
      : Error(code, message), report_(std::move(report)) {}
  const ValidationReport& report() const { return report_; }

 private:
  ValidationReport report_;
};

}  // namespace dgkit
