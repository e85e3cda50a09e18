#include "dgkit/graph_builder.hpp"

#include <set>

namespace dgkit {

namespace {

void attach(DocumentGraph& g, const std::string& doc_id, const NodeRef& parent,
            const IRNode& ir) {
  Node node{{doc_id, ir.node_id}, parse_node_type(ir.type_label), ir.text, ir.properties};
  const NodeRef ref = node.ref;
  g.add_node(std::move(node));
  g.add_hierarchy_edge(parent, ref);
  for (const auto& child : ir.children) attach(g, doc_id, ref, child);
}

bool tolerated(const Violation& v, const BuildOptions& options) {
  return options.allow_dangling_links && v.rule == "DanglingLink";
}

}  // namespace

std::size_t DocumentIR::node_count() const {
  std::size_t n = 1;
  std::vector<const IRNode*> stack;
  for (const auto& b : body) stack.push_back(&b);
  while (!stack.empty()) {
    const IRNode* cur = stack.back();
    stack.pop_back();
    ++n;
    for (const auto& c : cur->children) stack.push_back(&c);
  }
  return n;
}

DocumentGraph build_graph(const std::vector<DocumentIR>& documents,
                          const std::map<std::string, std::string>& domain_assignments,
                          const BuildOptions& options) {
  DocumentGraph g(options.solution_attachment);
  std::set<std::string> seen_docs;
  for (const auto& doc : documents) {
    if (!seen_docs.insert(doc.doc_id).second)
      throw Error(ErrorCode::DuplicateNodeId, "document '" + doc.doc_id + "' ingested twice",
                  doc.doc_id);
    if (doc.doc_id.empty() || doc.doc_id.front() == '@')
      throw Error(ErrorCode::InvalidArgument, "invalid document id '" + doc.doc_id + "'");

    std::string domain;
    if (auto it = domain_assignments.find(doc.doc_id); it != domain_assignments.end())
      domain = it->second;
    else if (doc.domain)
      domain = *doc.domain;
    if (domain.empty())
      throw Error(ErrorCode::UnknownDomain, "no domain assigned to document '" + doc.doc_id + "'",
                  doc.doc_id);

    const auto root = g.add_domain(domain);
    Node top{{doc.doc_id, doc.title_id}, NodeType::section, doc.title, {}};
    const NodeRef top_ref = top.ref;
    g.add_node(std::move(top));
    g.add_hierarchy_edge(g.node(root).ref, top_ref);
    for (const auto& b : doc.body) attach(g, doc.doc_id, top_ref, b);
  }
  for (const auto& [doc, domain] : domain_assignments) {
    if (!seen_docs.contains(doc))
      throw Error(ErrorCode::UnknownDomain,
                  "domain assignment for unknown document '" + doc + "'", doc);
  }
  g.finalize();

  ValidationReport report = validate(g);
  std::erase_if(report.violations, [&](const Violation& v) { return tolerated(v, options); });
  if (!report.ok()) {
    const Violation& first = report.violations.front();
    const ErrorCode code = first.rule == "OrphanNode" ? ErrorCode::OrphanNode
                                                      : ErrorCode::ShapeViolation;
    throw GraphBuildError(code,
                          "graph validation failed: " + first.rule + " at " +
                              to_string(first.node) + " (" + first.message + ")",
                          std::move(report));
  }
  return g;
}

}  // namespace dgkit
