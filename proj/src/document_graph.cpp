#include "dgkit/document_graph.hpp"

#include <algorithm>
#include <array>
#include <utility>

namespace dgkit {

namespace {

constexpr std::array<std::pair<NodeType, std::string_view>, kNodeTypeCount> kTypeLabels{{
    {NodeType::root, "root"},
    {NodeType::section, "section"},
    {NodeType::ordinary, "ordinary"},
    {NodeType::disjunction, "disjunction"},
    {NodeType::conjunction, "conjunction"},
    {NodeType::condition, "condition"},
    {NodeType::solution, "solution"},
    {NodeType::negation, "negation"},
    {NodeType::table, "table"},
    {NodeType::object, "object"},
    {NodeType::attribute, "attribute"},
    {NodeType::value, "value"},
    {NodeType::sequence, "sequence"},
    {NodeType::sequence_step, "sequence_step"},
    {NodeType::see_more, "see_more"},
}};

constexpr std::string_view kDomainDocPrefix = "@";

bool inside_structure(const DocumentGraph& g, DocumentGraph::Index i) {
  for (auto p = g.parent(i); p; p = g.parent(*p)) {
    const auto t = g.node(*p).type;
    if (t == NodeType::table || t == NodeType::sequence || is_condition_group(t) ||
        t == NodeType::condition || t == NodeType::solution)
      return true;
  }
  return false;
}

}  // namespace

std::string_view to_string(NodeType type) {
  for (const auto& [t, label] : kTypeLabels)
    if (t == type) return label;
  return "?";
}

std::optional<NodeType> try_parse_node_type(std::string_view label) {
  for (const auto& [t, l] : kTypeLabels)
    if (l == label) return t;
  return std::nullopt;
}

NodeType parse_node_type(std::string_view label) {
  if (auto t = try_parse_node_type(label)) return *t;
  throw Error(ErrorCode::UnknownTypeLabel, "unknown node type label '" + std::string(label) + "'");
}

std::string_view to_string(StructuralFamily family) {
  switch (family) {
    case StructuralFamily::ordinary: return "ordinary";
    case StructuralFamily::table: return "tables";
    case StructuralFamily::sequence: return "sequences";
    case StructuralFamily::condition: return "conditions";
  }
  return "?";
}

std::optional<StructuralFamily> family_of(NodeType type) {
  switch (type) {
    case NodeType::ordinary: return StructuralFamily::ordinary;
    case NodeType::table: return StructuralFamily::table;
    case NodeType::sequence: return StructuralFamily::sequence;
    case NodeType::disjunction:
    case NodeType::conjunction:
    case NodeType::negation: return StructuralFamily::condition;
    default: return std::nullopt;
  }
}

std::string to_string(const NodeRef& ref) { return ref.doc_id + "#" + ref.node_id; }

std::optional<NodeRef> parse_node_ref(std::string_view text) {
  const auto hash = text.find('#');
  if (hash == std::string_view::npos || hash == 0 || hash + 1 == text.size() ||
      text.find('#', hash + 1) != std::string_view::npos)
    return std::nullopt;
  return NodeRef{std::string(text.substr(0, hash)), std::string(text.substr(hash + 1))};
}

bool Node::is_super_leaf() const {
  auto it = properties.find(std::string(props::kIsSuperLeaf));
  return it != properties.end() && it->second == "true";
}

std::optional<NodeRef> Node::linked_node() const {
  auto it = properties.find(std::string(props::kLinkedNode));
  if (it == properties.end()) return std::nullopt;
  return parse_node_ref(it->second);
}

std::size_t ValidationReport::count(std::string_view rule) const {
  return static_cast<std::size_t>(std::count_if(violations.begin(), violations.end(),
                                                [&](const Violation& v) { return v.rule == rule; }));
}

NodeRef domain_root_ref(std::string_view domain) {
  return NodeRef{std::string(kDomainDocPrefix) + std::string(domain), "root"};
}

// ---------------------------------------------------------------------------

DocumentGraph::Index DocumentGraph::add_node(Node node) {
  if (index_.contains(node.ref))
    throw Error(ErrorCode::DuplicateNodeId, "duplicate node id " + to_string(node.ref),
                to_string(node.ref));
  const Index i = nodes_.size();
  index_.emplace(node.ref, i);
  nodes_.push_back(std::move(node));
  children_.emplace_back();
  parents_.emplace_back();
  return i;
}

DocumentGraph::Index DocumentGraph::add_domain(const std::string& domain) {
  if (auto it = domains_.find(domain); it != domains_.end()) return it->second;
  if (domain.empty()) throw Error(ErrorCode::UnknownDomain, "empty domain name");
  Node root{domain_root_ref(domain), NodeType::root, {}, {}};
  const Index i = add_node(std::move(root));
  domains_.emplace(domain, i);
  return i;
}

void DocumentGraph::add_hierarchy_edge(const NodeRef& parent, const NodeRef& child) {
  auto p = find(parent);
  auto c = find(child);
  if (!p || !c)
    throw Error(ErrorCode::OrphanNode,
                "hierarchy edge references unknown node " + to_string(p ? child : parent));
  children_[*p].push_back(*c);
  parents_[*c].push_back(*p);
}

void DocumentGraph::set_super_leaf(Index i, bool value) {
  nodes_.at(i).properties[std::string(props::kIsSuperLeaf)] = value ? "true" : "false";
}

void DocumentGraph::finalize() {
  documents_.clear();
  document_tops_.clear();
  document_domains_.clear();
  link_edges_.clear();
  for (const auto& [name, root] : domains_) {
    for (Index top : children_[root]) {
      const auto& doc = nodes_[top].ref.doc_id;
      if (document_tops_.contains(doc)) continue;
      documents_.push_back(doc);
      document_tops_.emplace(doc, top);
      document_domains_.emplace(doc, name);
    }
  }
  for (Index i : document_order()) {
    const Node& n = nodes_[i];
    if (n.type != NodeType::see_more) continue;
    if (auto target = n.linked_node()) {
      if (auto t = find(*target)) link_edges_.emplace_back(i, *t);
    }
  }
}

std::optional<DocumentGraph::Index> DocumentGraph::find(const NodeRef& ref) const {
  auto it = index_.find(ref);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

DocumentGraph::Index DocumentGraph::index_of(const NodeRef& ref) const {
  if (auto i = find(ref)) return *i;
  throw Error(ErrorCode::UnknownRef, "unknown node " + to_string(ref), to_string(ref));
}

std::optional<DocumentGraph::Index> DocumentGraph::parent(Index i) const {
  const auto& ps = parents_.at(i);
  if (ps.empty()) return std::nullopt;
  return ps.front();
}

bool DocumentGraph::has_document(std::string_view doc_id) const {
  return document_tops_.find(doc_id) != document_tops_.end();
}

DocumentGraph::Index DocumentGraph::document_top(std::string_view doc_id) const {
  auto it = document_tops_.find(doc_id);
  if (it == document_tops_.end())
    throw Error(ErrorCode::UnknownDoc, "unknown document '" + std::string(doc_id) + "'",
                std::string(doc_id));
  return it->second;
}

const std::string& DocumentGraph::domain_of(std::string_view doc_id) const {
  auto it = document_domains_.find(doc_id);
  if (it == document_domains_.end())
    throw Error(ErrorCode::UnknownDoc, "unknown document '" + std::string(doc_id) + "'",
                std::string(doc_id));
  return it->second;
}

std::optional<DocumentGraph::Index> DocumentGraph::domain_root_of(Index i) const {
  std::size_t guard = 0;
  for (std::optional<Index> cur = i; cur; cur = parent(*cur)) {
    if (nodes_[*cur].type == NodeType::root) return cur;
    if (++guard > nodes_.size()) break;
  }
  return std::nullopt;
}

std::vector<DocumentGraph::Index> DocumentGraph::preorder(Index i) const {
  std::vector<Index> out;
  std::vector<bool> seen(nodes_.size(), false);
  std::vector<Index> stack{i};
  while (!stack.empty()) {
    Index cur = stack.back();
    stack.pop_back();
    if (seen[cur]) continue;
    seen[cur] = true;
    out.push_back(cur);
    const auto& ch = children_[cur];
    for (auto it = ch.rbegin(); it != ch.rend(); ++it) {
      // Only descend along first-parent edges so a node with several parents
      // is visited once, under the parent that owns it.
      if (!parents_[*it].empty() && parents_[*it].front() == cur) stack.push_back(*it);
    }
  }
  return out;
}

std::vector<DocumentGraph::Index> DocumentGraph::document_order() const {
  std::vector<Index> out;
  out.reserve(nodes_.size());
  std::vector<bool> seen(nodes_.size(), false);
  for (const auto& [name, root] : domains_) {
    for (Index i : preorder(root)) {
      if (!seen[i]) {
        seen[i] = true;
        out.push_back(i);
      }
    }
  }
  for (Index i = 0; i < nodes_.size(); ++i)
    if (!seen[i]) out.push_back(i);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

using Index = DocumentGraph::Index;

void shape_rules(const DocumentGraph& g, Index i, std::vector<Violation>& out) {
  const Node& n = g.node(i);
  auto add = [&](std::string rule, std::string msg) {
    out.push_back({std::move(rule), n.ref, std::move(msg)});
  };
  auto child_types_only = [&](std::string rule, auto allowed) {
    for (Index c : g.children(i)) {
      if (!allowed(g.node(c).type))
        out.push_back({rule, g.node(c).ref,
                       std::string(to_string(g.node(c).type)) + " under " +
                           std::string(to_string(n.type))});
    }
  };
  const bool solution_is_child = g.solution_attachment() == SolutionAttachment::child;

  switch (n.type) {
    case NodeType::table:
      child_types_only("TableChild", [](NodeType t) { return t == NodeType::object; });
      break;
    case NodeType::object:
      child_types_only("ObjectChild", [](NodeType t) { return t == NodeType::attribute; });
      break;
    case NodeType::attribute:
      child_types_only("AttributeChild", [](NodeType t) { return t == NodeType::value; });
      break;
    case NodeType::value:
      if (!g.children(i).empty()) add("ValueLeaf", "value nodes are leaves");
      break;
    case NodeType::sequence:
      child_types_only("SequenceChild", [](NodeType t) { return t == NodeType::sequence_step; });
      break;
    case NodeType::disjunction:
    case NodeType::conjunction:
    case NodeType::negation:
      child_types_only("ConditionGroupChild", [&](NodeType t) {
        return t == NodeType::condition || is_condition_group(t) ||
               (solution_is_child && t == NodeType::solution);
      });
      break;
    case NodeType::see_more:
      if (!g.children(i).empty()) add("SeeMoreLeaf", "see_more nodes are leaves");
      break;
    case NodeType::root:
      child_types_only("DocumentTop", [](NodeType t) { return t == NodeType::section; });
      break;
    default:
      break;
  }

  // Parent-side constraints.
  const auto parent = g.parent(i);
  const auto parent_type = parent ? std::optional(g.node(*parent).type) : std::nullopt;
  auto require_parent = [&](std::string rule, NodeType expected) {
    if (parent && parent_type != expected)
      add(std::move(rule), std::string(to_string(n.type)) + " must sit under " +
                               std::string(to_string(expected)));
  };
  switch (n.type) {
    case NodeType::object: require_parent("ObjectParent", NodeType::table); break;
    case NodeType::attribute: require_parent("AttributeParent", NodeType::object); break;
    case NodeType::value: require_parent("ValueParent", NodeType::attribute); break;
    case NodeType::sequence_step: require_parent("StepParent", NodeType::sequence); break;
    case NodeType::condition:
      if (parent && !is_condition_group(*parent_type))
        add("ConditionParent", "condition must sit under a condition group");
      break;
    case NodeType::solution:
      if (!parent) break;
      if (solution_is_child) {
        if (!is_condition_group(*parent_type))
          add("SolutionAttachment", "solution must be a child of a condition group");
      } else {
        const auto& sibs = g.children(*parent);
        bool has_group = std::any_of(sibs.begin(), sibs.end(), [&](Index s) {
          return is_condition_group(g.node(s).type);
        });
        if (!has_group)
          add("SolutionAttachment", "solution must be a sibling of a condition group");
      }
      break;
    default:
      break;
  }

  // Hierarchy edges stay inside a document, except domain root -> document top.
  for (Index c : g.children(i)) {
    if (n.type != NodeType::root && g.node(c).ref.doc_id != n.ref.doc_id)
      out.push_back({"CrossDocumentEdge", g.node(c).ref,
                     "hierarchy edge crosses documents from " + to_string(n.ref)});
  }
}

}  // namespace

bool is_shape_rule(std::string_view rule) {
  static constexpr std::array<std::string_view, 16> kShape{
      "TableChild",      "ObjectChild",   "AttributeChild",     "ValueLeaf",
      "SequenceChild",   "ConditionGroupChild", "SeeMoreLeaf",  "DocumentTop",
      "ObjectParent",    "AttributeParent", "ValueParent",      "StepParent",
      "ConditionParent", "SolutionAttachment", "CrossDocumentEdge", "RootMisplaced"};
  return std::find(kShape.begin(), kShape.end(), rule) != kShape.end();
}

ValidationReport validate(const DocumentGraph& g) {
  ValidationReport report;
  auto& out = report.violations;
  const std::size_t n = g.size();

  std::set<Index> domain_roots;
  for (const auto& [name, root] : g.domains()) domain_roots.insert(root);

  for (Index i : g.document_order()) {
    const Node& node = g.node(i);
    const auto& ps = g.parents(i);
    const bool is_domain_root = domain_roots.contains(i);

    if (node.type == NodeType::root && !is_domain_root)
      out.push_back({"RootMisplaced", node.ref, "root type is reserved for domain roots"});
    if (is_domain_root && node.type != NodeType::root)
      out.push_back({"RootMisplaced", node.ref, "domain root must have type root"});

    if (is_domain_root) {
      if (!ps.empty()) out.push_back({"RootHasParent", node.ref, "domain roots have no parent"});
    } else if (ps.empty()) {
      out.push_back({"OrphanNode", node.ref, "node has no hierarchy parent"});
    } else if (ps.size() > 1) {
      out.push_back({"MultipleParents", node.ref,
                     "node has " + std::to_string(ps.size()) + " hierarchy parents"});
    }

    if (node.type != NodeType::root && node.text.empty())
      out.push_back({"EmptyText", node.ref, "only roots may have empty text"});

    if (auto it = node.properties.find(std::string(props::kIsSuperLeaf));
        it != node.properties.end() && it->second != "true" && it->second != "false")
      out.push_back({"MalformedProperty", node.ref, "is_super_leaf must be true or false"});

    if (node.type == NodeType::see_more) {
      auto it = node.properties.find(std::string(props::kLinkedNode));
      if (it == node.properties.end()) {
        out.push_back({"MissingLinkedNode", node.ref, "see_more node without linked_node"});
      } else if (auto target = parse_node_ref(it->second); !target) {
        out.push_back({"MalformedProperty", node.ref, "linked_node is not a doc#node reference"});
      } else if (!g.contains(*target)) {
        out.push_back({"DanglingLink", node.ref, "linked_node " + it->second + " does not exist"});
      }
    }

    shape_rules(g, i, out);
  }

  // Cycles: walk first parents; a walk longer than n revisits a node.
  for (Index i = 0; i < n; ++i) {
    std::size_t steps = 0;
    std::optional<Index> cur = i;
    while (cur && steps <= n) {
      cur = g.parent(*cur);
      ++steps;
      if (cur == i) break;
    }
    if (cur == i) out.push_back({"HierarchyCycle", g.node(i).ref, "node is its own ancestor"});
  }

  // Each document has exactly one top node, hanging under a domain root.
  std::map<std::string, std::size_t> tops;
  std::set<std::string> docs;
  for (Index i = 0; i < n; ++i) {
    const Node& node = g.node(i);
    if (domain_roots.contains(i)) continue;
    docs.insert(node.ref.doc_id);
    const auto p = g.parent(i);
    if (p && domain_roots.contains(*p)) ++tops[node.ref.doc_id];
  }
  for (const auto& doc : docs) {
    const auto k = tops[doc];
    if (k != 1) {
      // Report against the first node of the document.
      for (Index i = 0; i < n; ++i) {
        if (g.node(i).ref.doc_id == doc && !domain_roots.contains(i)) {
          out.push_back({"DocumentTop", g.node(i).ref,
                         "document '" + doc + "' has " + std::to_string(k) +
                             " top nodes under domain roots"});
          break;
        }
      }
    }
  }
  return report;
}

std::vector<NodeRef> get_path(const DocumentGraph& g, const NodeRef& ancestor,
                              const NodeRef& node) {
  const Index a = g.index_of(ancestor);
  const Index target = g.index_of(node);
  std::vector<NodeRef> path;
  std::optional<Index> cur = target;
  std::size_t guard = 0;
  while (cur) {
    path.push_back(g.node(*cur).ref);
    if (*cur == a) {
      std::reverse(path.begin(), path.end());
      return path;
    }
    cur = g.parent(*cur);
    if (++guard > g.size()) break;
  }
  throw Error(ErrorCode::NotDescendant,
              to_string(node) + " is not a descendant of " + to_string(ancestor));
}

std::vector<NodeRef> subtree_super_leaves(const DocumentGraph& g, const NodeRef& root,
                                          const std::set<NodeRef>& excluded) {
  std::vector<NodeRef> out;
  for (Index i : g.preorder(g.index_of(root))) {
    const Node& n = g.node(i);
    if (n.is_super_leaf() && !excluded.contains(n.ref)) out.push_back(n.ref);
  }
  return out;
}

std::size_t mark_super_leaves(DocumentGraph& g, const MarkingRuleSet& rules,
                              const std::map<NodeRef, bool>& overrides) {
  for (const auto& [ref, _] : overrides) {
    const auto i = g.find(ref);
    if (!i || g.node(*i).type == NodeType::root)
      throw Error(ErrorCode::UnknownOverrideRef, "override for unknown node " + to_string(ref),
                  to_string(ref));
  }
  for (Index i = 0; i < g.size(); ++i) {
    const Node& n = g.node(i);
    // Domain roots carry no properties at all.
    if (n.type == NodeType::root) continue;
    bool mark = false;
    switch (n.type) {
      case NodeType::section:
      case NodeType::root:
      case NodeType::see_more:
        break;
      case NodeType::table:
      case NodeType::sequence:
        mark = rules.structure_roots;
        break;
      case NodeType::disjunction:
      case NodeType::conjunction:
      case NodeType::negation: {
        auto p = g.parent(i);
        mark = rules.structure_roots && !(p && is_condition_group(g.node(*p).type));
        break;
      }
      case NodeType::ordinary:
        mark = rules.ordinary_leaves && g.children(i).empty() && !inside_structure(g, i);
        break;
      default:
        break;
    }
    g.set_super_leaf(i, mark);
  }
  for (const auto& [ref, value] : overrides) g.set_super_leaf(g.index_of(ref), value);

  std::size_t count = 0;
  for (Index i = 0; i < g.size(); ++i) count += g.node(i).is_super_leaf() ? 1 : 0;
  return count;
}

GoalContext goal_context(const DocumentGraph& g, const NodeRef& goal) {
  const Index i = g.index_of(goal);
  GoalContext ctx;
  const auto root = g.domain_root_of(i);
  ctx.path_from_root = root ? get_path(g, g.node(*root).ref, goal) : std::vector<NodeRef>{goal};
  if (auto p = g.parent(i)) {
    ctx.neighbors.parent = g.node(*p).ref;
    for (Index s : g.children(*p))
      if (s != i) ctx.neighbors.siblings.push_back(g.node(s).ref);
  }
  for (Index c : g.children(i)) ctx.neighbors.children.push_back(g.node(c).ref);
  return ctx;
}

std::vector<std::string> connected_docs(const DocumentGraph& g, std::string_view doc_id) {
  const Index top = g.document_top(doc_id);
  std::vector<std::string> out;
  // Link edges are already in document order; keep the ones leaving this doc.
  std::set<Index> in_doc;
  for (Index i : g.preorder(top)) in_doc.insert(i);
  for (const auto& [from, to] : g.link_edges()) {
    if (!in_doc.contains(from)) continue;
    const auto& target_doc = g.node(to).ref.doc_id;
    if (target_doc == doc_id) continue;
    if (std::find(out.begin(), out.end(), target_doc) == out.end()) out.push_back(target_doc);
  }
  return out;
}

std::vector<Index> group_solutions(const DocumentGraph& g, Index group) {
  std::vector<Index> out;
  if (g.solution_attachment() == SolutionAttachment::child) {
    for (Index c : g.children(group))
      if (g.node(c).type == NodeType::solution) out.push_back(c);
  } else if (auto p = g.parent(group)) {
    for (Index s : g.children(*p))
      if (g.node(s).type == NodeType::solution) out.push_back(s);
  }
  return out;
}

}  // namespace dgkit
