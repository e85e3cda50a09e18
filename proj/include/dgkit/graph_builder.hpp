#pragma once

#include <map>
#include <string>
#include <vector>

#include "dgkit/document_graph.hpp"
#include "dgkit/document_ir.hpp"

namespace dgkit {

struct BuildOptions {
  SolutionAttachment solution_attachment = SolutionAttachment::child;
  /// Keep see_more nodes whose target is missing instead of failing the build.
  bool allow_dangling_links = false;
};

/// Assembles documents under per-domain roots and validates the result.
/// The domain of a document comes from domain_assignments, falling back to the
/// document's own declaration.
///
/// Throws DuplicateNodeId, UnknownDomain, or GraphBuildError (code OrphanNode
/// or ShapeViolation) carrying the full validation report.
DocumentGraph build_graph(const std::vector<DocumentIR>& documents,
                          const std::map<std::string, std::string>& domain_assignments = {},
                          const BuildOptions& options = {});

}  // namespace dgkit
