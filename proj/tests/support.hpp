#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dgkit/dialog_store.hpp"
#include "dgkit/document_graph.hpp"
#include "dgkit/prompt_gen.hpp"
#include "dgkit/rng.hpp"

namespace dgkit::testing {

std::filesystem::path data_dir();
std::filesystem::path test_data_dir();
/// Built CLI binary.
std::filesystem::path cli_path();

nlohmann::json read_json(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);

/// Builds and marks (default rules) a graph from source files or directories.
DocumentGraph fixture_graph(const std::vector<std::filesystem::path>& sources);
DocumentGraph figure1_graph();
DocumentGraph mini_graph();
DocumentGraph corpus_graph();
const TemplateSet& default_templates();

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Random closed dialogs written through a DialogStore: alternating turns with
/// random acts, groundings and whitespace-separated ASCII utterances, goals
/// completed or skipped at random.
std::vector<Dialog> random_corpus(const DocumentGraph& graph, std::uint64_t seed,
                                  std::size_t max_dialogs);

/// Corpus statistics recomputed from exported JSON lines and the graph JSON
/// alone. Utterance length is the whitespace token count.
nlohmann::json brute_force_stats(const std::string& jsonl, const nlohmann::json& graph_json);

/// True when both stats documents agree: integers exactly, means within tol.
bool stats_match(const nlohmann::json& a, const nlohmann::json& b, double tol, std::string* why);

}  // namespace dgkit::testing
