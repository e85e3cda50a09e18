#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "dgkit/document_graph.hpp"
#include "dgkit/document_ir.hpp"

namespace dgkit {

/// Line-oriented markup (".docmk"):
///
///     # comment
///     @doc pension-guide
///     @domain public
///     @title[N0] Pension application guide
///     @section[N1] Who can apply
///       @disjunction[N2] Eligibility
///         @condition[c1] You are over 60
///         @solution[s1] Apply online
///       @see_more[l1]{linked_node=rules#title} Detailed rules
///
/// Header lines come first. Each block is `@type[id]{key=value,...} text`,
/// nested by two-space indentation. Inside text, `\n` and `\\` are escapes;
/// property values additionally escape `,`, `}` and `=`.
DocumentIR parse_docmk(std::string_view source);
std::string serialize_docmk(const DocumentIR& doc);

/// JSON alternative (".docir.json") compiling to the same IR.
DocumentIR parse_docir_json(std::string_view source);
std::string serialize_docir_json(const DocumentIR& doc);

/// Picks the front-end from the file extension.
DocumentIR load_document(const std::filesystem::path& path);

struct LinkReport {
  std::size_t resolved = 0;
  std::vector<NodeRef> dangling;
};

/// Checks every see_more node's target; dangling links are listed, not removed.
LinkReport resolve_links(const DocumentGraph& graph);

struct RankingWeights {
  double structural = 1.0;
  double links = 1.0;
};

struct RankingScore {
  std::string doc_id;
  /// Distinct structure kinds present (tables, sequences, conditions).
  std::size_t structural_richness = 0;
  /// see_more nodes pointing to another document.
  std::size_t link_degree = 0;
  double score = 0.0;
};

/// Descending by score, ties by doc_id. Throws InvalidArgument unless both
/// weights are positive.
std::vector<RankingScore> rank_documents(const std::vector<DocumentIR>& docs,
                                         const RankingWeights& weights = {});

}  // namespace dgkit
