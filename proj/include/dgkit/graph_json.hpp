#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "dgkit/document_graph.hpp"

namespace dgkit {

nlohmann::json to_json(const NodeRef& ref);
NodeRef node_ref_from_json(const nlohmann::json& j);

/// Canonical graph document:
///   {v, solution_attachment, domains:{name:ref},
///    nodes:[{doc_id,node_id,type,text,properties}],
///    edges:[{parent,child,kind:"hierarchy"|"link"}]}
/// Nodes and hierarchy edges are emitted in document order, link edges after
/// them; object keys are sorted. Export of an imported export is byte-identical.
nlohmann::json graph_to_json(const DocumentGraph& graph);
std::string export_graph(const DocumentGraph& graph);

/// Rebuilds the graph exactly as described, without validating it; run
/// validate() on the result. Throws CorpusLoadError on malformed input.
DocumentGraph graph_from_json(const nlohmann::json& j);
DocumentGraph import_graph(std::string_view text);

DocumentGraph load_graph(const std::filesystem::path& path);
void save_graph(const DocumentGraph& graph, const std::filesystem::path& path);

}  // namespace dgkit
