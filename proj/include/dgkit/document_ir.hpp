#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace dgkit {

/// Source-level node: the type is still a label, mapped onto NodeType when the
/// document is attached to a graph.
struct IRNode {
  std::string node_id;
  std::string type_label;
  std::string text;
  std::map<std::string, std::string> properties;
  std::vector<IRNode> children;

  bool operator==(const IRNode&) const = default;
};

/// One parsed document. The title becomes the document's top (section) node
/// and body nodes hang below it.
struct DocumentIR {
  std::string doc_id;
  std::string title;
  std::string title_id = "title";
  std::optional<std::string> domain;
  std::vector<IRNode> body;

  std::size_t node_count() const;
  bool operator==(const DocumentIR&) const = default;
};

}  // namespace dgkit
