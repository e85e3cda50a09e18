#include "dgkit/graph_json.hpp"

#include <fstream>
#include <sstream>

namespace dgkit {

using json = nlohmann::json;

json to_json(const NodeRef& ref) { return {{"doc_id", ref.doc_id}, {"node_id", ref.node_id}}; }

NodeRef node_ref_from_json(const json& j) {
  return {j.at("doc_id").get<std::string>(), j.at("node_id").get<std::string>()};
}

json graph_to_json(const DocumentGraph& g) {
  json domains = json::object();
  for (const auto& [name, root] : g.domains()) domains[name] = to_json(g.node(root).ref);

  const auto order = g.document_order();
  json nodes = json::array();
  json edges = json::array();
  for (auto i : order) {
    const Node& n = g.node(i);
    nodes.push_back({{"doc_id", n.ref.doc_id},
                     {"node_id", n.ref.node_id},
                     {"type", std::string(to_string(n.type))},
                     {"text", n.text},
                     {"properties", n.properties}});
  }
  for (auto i : order) {
    for (auto c : g.children(i))
      edges.push_back({{"parent", to_json(g.node(i).ref)},
                       {"child", to_json(g.node(c).ref)},
                       {"kind", "hierarchy"}});
  }
  for (const auto& [from, to] : g.link_edges())
    edges.push_back({{"parent", to_json(g.node(from).ref)},
                     {"child", to_json(g.node(to).ref)},
                     {"kind", "link"}});

  return {{"v", 1},
          {"solution_attachment",
           g.solution_attachment() == SolutionAttachment::child ? "child" : "sibling"},
          {"domains", std::move(domains)},
          {"nodes", std::move(nodes)},
          {"edges", std::move(edges)}};
}

std::string export_graph(const DocumentGraph& g) { return graph_to_json(g).dump(2) + "\n"; }

DocumentGraph graph_from_json(const json& j) {
  try {
    const auto mode = j.value("solution_attachment", "child");
    if (mode != "child" && mode != "sibling")
      throw Error(ErrorCode::CorpusLoadError, "unknown solution_attachment '" + mode + "'");
    DocumentGraph g(mode == "child" ? SolutionAttachment::child : SolutionAttachment::sibling);

    std::map<NodeRef, std::string> domain_of_root;
    for (const auto& [name, ref] : j.at("domains").items())
      domain_of_root.emplace(node_ref_from_json(ref), name);

    for (const auto& jn : j.at("nodes")) {
      Node n;
      n.ref = node_ref_from_json(jn);
      n.type = parse_node_type(jn.at("type").get<std::string>());
      n.text = jn.value("text", "");
      n.properties = jn.value("properties", std::map<std::string, std::string>{});
      if (auto it = domain_of_root.find(n.ref); it != domain_of_root.end()) {
        if (n.ref != domain_root_ref(it->second))
          throw Error(ErrorCode::CorpusLoadError, "domain root id mismatch for " + it->second);
        if (n.type != NodeType::root || !n.text.empty() || !n.properties.empty())
          throw Error(ErrorCode::CorpusLoadError,
                      "domain root " + to_string(n.ref) + " must be an empty root node");
        g.add_domain(it->second);
      } else {
        g.add_node(std::move(n));
      }
    }
    for (const auto& [name, ref] : j.at("domains").items()) {
      if (!g.domains().contains(name))
        throw Error(ErrorCode::CorpusLoadError, "domain '" + name + "' has no root node");
    }
    for (const auto& e : j.at("edges")) {
      const auto kind = e.at("kind").get<std::string>();
      const auto parent = node_ref_from_json(e.at("parent"));
      const auto child = node_ref_from_json(e.at("child"));
      if (kind == "hierarchy") {
        g.add_hierarchy_edge(parent, child);
      } else if (kind == "link") {
        // Link edges are derived from linked_node; only check consistency.
        if (!g.contains(parent) || g.node(parent).linked_node() != child)
          throw Error(ErrorCode::CorpusLoadError,
                      "link edge " + to_string(parent) + " -> " + to_string(child) +
                          " disagrees with linked_node");
      } else {
        throw Error(ErrorCode::CorpusLoadError, "unknown edge kind '" + kind + "'");
      }
    }
    g.finalize();
    return g;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorpusLoadError, std::string("malformed graph json: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::CorpusLoadError || e.code() == ErrorCode::DuplicateNodeId ||
        e.code() == ErrorCode::OrphanNode)
      throw;
    throw Error(ErrorCode::CorpusLoadError, e.what(), e.detail());
  }
}

DocumentGraph import_graph(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::CorpusLoadError, std::string("graph json: ") + e.what());
  }
  return graph_from_json(j);
}

DocumentGraph load_graph(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::CorpusLoadError, "cannot read graph " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return import_graph(ss.str());
}

void save_graph(const DocumentGraph& graph, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << export_graph(graph);
}

}  // namespace dgkit
