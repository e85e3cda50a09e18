#include "dgkit/cli.hpp"

#include <algorithm>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "dgkit/dialog_store.hpp"
#include "dgkit/flow_gen.hpp"
#include "dgkit/graph_builder.hpp"
#include "dgkit/graph_json.hpp"
#include "dgkit/ingest.hpp"
#include "dgkit/service.hpp"

namespace dgkit::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

/// Signals a bad flag value detected after parsing; maps to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in || fs::is_directory(path)) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, std::string_view text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
  if (!out.flush()) throw Error(ErrorCode::IoError, "cannot write " + path.string());
}

/// Expands directories into their .flow.json files, sorted.
std::vector<fs::path> expand_flow_files(const std::vector<std::string>& inputs) {
  std::vector<fs::path> out;
  for (const auto& in : inputs) {
    if (!fs::is_directory(in)) {
      out.emplace_back(in);
      continue;
    }
    std::vector<fs::path> found;
    for (const auto& e : fs::directory_iterator(in))
      if (e.path().filename().string().ends_with(".flow.json")) found.push_back(e.path());
    std::sort(found.begin(), found.end());
    out.insert(out.end(), found.begin(), found.end());
  }
  return out;
}

bool is_source_file(const fs::path& p) {
  const auto name = p.filename().string();
  return name.ends_with(".docmk") || name.ends_with(".docir.json");
}

/// Source files named directly or found (non-recursively) in directories, sorted per directory.
std::vector<fs::path> expand_sources(const std::vector<std::string>& inputs) {
  std::vector<fs::path> out;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(in))
        if (e.is_regular_file() && is_source_file(e.path())) found.push_back(e.path());
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else {
      out.emplace_back(in);
    }
  }
  return out;
}

std::vector<DocumentIR> load_documents(const std::vector<std::string>& inputs) {
  std::vector<DocumentIR> docs;
  for (const auto& p : expand_sources(inputs)) docs.push_back(load_document(p));
  return docs;
}

std::map<std::string, std::string> load_domain_map(const std::string& path) {
  if (path.empty()) return {};
  try {
    return json::parse(read_file(path)).get<std::map<std::string, std::string>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, path + ": " + e.what());
  }
}

std::vector<double> parse_csv_doubles(const std::string& text, std::size_t expected,
                                      const char* flag) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError(std::string(flag) + ": '" + item + "' is not a number");
    }
  }
  if (out.size() != expected)
    throw UsageError(std::string(flag) + " expects " + std::to_string(expected) +
                     " comma-separated values");
  return out;
}

json report_json(const ValidationReport& report) {
  json v = json::array();
  for (const auto& x : report.violations)
    v.push_back({{"rule", x.rule}, {"node", to_json(x.node)}, {"message", x.message}});
  return {{"v", 1}, {"ok", report.ok()}, {"violations", std::move(v)}};
}

void print_report(const ValidationReport& report, std::ostream& os) {
  for (const auto& x : report.violations)
    os << x.rule << " " << to_string(x.node) << ": " << x.message << "\n";
}

std::map<NodeRef, bool> load_overrides(const std::string& path) {
  std::map<NodeRef, bool> out;
  if (path.empty()) return out;
  try {
    for (const auto& [key, value] : json::parse(read_file(path)).items()) {
      auto ref = parse_node_ref(key);
      if (!ref) throw Error(ErrorCode::InvalidArgument, path + ": bad node ref '" + key + "'");
      out[*ref] = value.get<bool>();
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, path + ": " + e.what());
  }
  return out;
}

/// Flags present in the sources act as manual overrides of the rules.
std::map<NodeRef, bool> source_flags(const DocumentGraph& g) {
  std::map<NodeRef, bool> out;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto& props = g.node(i).properties;
    if (auto it = props.find(std::string(props::kIsSuperLeaf)); it != props.end())
      out[g.node(i).ref] = it->second == "true";
  }
  return out;
}

std::string resolve_store(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv(kStoreEnv); env && *env) return env;
  return {};
}

std::vector<Dialog> load_dialogs(const std::string& corpus, const std::string& store_path,
                                 const DocumentGraph& graph, const DialogStore::Options& opts) {
  if (!corpus.empty()) return import_corpus(read_file(corpus)).dialogs;
  if (store_path.empty())
    throw UsageError("one of --corpus or --store (or " + std::string(kStoreEnv) + ") is required");
  if (!fs::exists(store_path)) throw Error(ErrorCode::IoError, "no store at " + store_path);
  DialogStore store(graph, store_path, opts);
  return store.dialogs();
}

void print_stats(const StatsReport& r, std::ostream& os) {
  auto opt = [](const std::optional<double>& v) {
    if (!v) return std::string("n/a");
    std::ostringstream ss;
    ss.precision(4);
    ss << std::fixed << *v;
    return ss.str();
  };
  os << "dialogs              " << r.n_dialogs << "\n"
     << "turns                " << r.n_turns << " (user " << r.n_user_turns << ", system "
     << r.n_system_turns << ")\n"
     << "system questions     " << r.n_system_questions << "\n"
     << "multi-doc dialogs    " << r.n_dialogs_multidoc << "\n"
     << "docs per dialog      " << opt(r.docs_per_dialog) << "\n"
     << "gr per user turn     " << opt(r.gr_per_user_turn) << "\n"
     << "gr per system turn   " << opt(r.gr_per_system_turn) << "\n"
     << "user turn length     " << opt(r.user_turn_len) << "\n"
     << "system turn length   " << opt(r.system_turn_len) << "\n"
     << "goals                ordinary " << r.goals_by_type.ordinary << ", tables "
     << r.goals_by_type.tables << ", sequences " << r.goals_by_type.sequences << ", conditions "
     << r.goals_by_type.conditions << "\n";
  for (const auto& [name, c] : r.domains)
    os << "domain " << name << ": docs " << c.docs << ", tables " << c.tables << ", sequences "
       << c.sequences << ", conditions " << c.conditions << ", sections " << c.sections << "\n";
}

volatile std::sig_atomic_t g_stop = 0;

extern "C" void on_signal(int) { g_stop = 1; }

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Document graph toolkit: ingest, validate, generate dialog flows, collect dialogs.",
               "dgkit"};
  app.require_subcommand(1);
  std::string format = "text";
  auto add_format = [&format](CLI::App* sub) {
    sub->add_option("--format", format, "Output format")->check(CLI::IsMember({"text", "json"}));
  };

  // ingest
  std::vector<std::string> sources;
  std::string output, domain_map, overrides_path;
  bool allow_dangling = false, sibling = false, no_mark = false;
  auto* ingest = app.add_subcommand("ingest", "Build a graph JSON from .docmk/.docir.json sources");
  ingest->add_option("sources", sources, "Source files or directories")->required();
  ingest->add_option("-o,--output", output, "Graph JSON to write")->required();
  ingest->add_option("--domain-map", domain_map, "JSON object doc_id -> domain");
  ingest->add_flag("--allow-dangling", allow_dangling, "Keep see_more links to missing nodes");
  ingest->add_flag("--sibling-solutions", sibling, "Solutions sit beside their condition group");
  ingest->add_flag("--no-mark", no_mark, "Skip default super-leaf marking");

  // validate
  std::vector<std::string> validate_inputs;
  auto* validate_cmd = app.add_subcommand("validate", "Validate a graph JSON or a set of sources");
  validate_cmd->add_option("inputs", validate_inputs, "Graph JSON, or source files/directories")
      ->required();
  validate_cmd->add_option("--domain-map", domain_map, "JSON object doc_id -> domain");
  validate_cmd->add_flag("--sibling-solutions", sibling, "Solutions sit beside their condition group");
  add_format(validate_cmd);

  // rank
  double w_struct = 1.0, w_links = 1.0;
  auto* rank = app.add_subcommand("rank", "Rank source documents by structure and links");
  rank->add_option("sources", sources, "Source files or directories")->required();
  rank->add_option("--w-structural", w_struct, "Weight of structural richness");
  rank->add_option("--w-links", w_links, "Weight of link degree");
  add_format(rank);

  // mark
  std::string graph_path, rules = "default";
  auto* mark = app.add_subcommand("mark", "Recompute super-leaf flags on a graph JSON");
  mark->add_option("graph", graph_path, "Graph JSON")->required();
  mark->add_option("-o,--output", output, "Graph JSON to write (default: in place)");
  mark->add_option("--rules", rules, "Marking rules")->check(CLI::IsMember({"default", "none"}));
  mark->add_option("--overrides", overrides_path, "JSON object \"doc#node\" -> bool");
  add_format(mark);

  // gen-flows
  std::uint64_t seed = 0;
  std::size_t count = 1, n_goals = 5;
  std::string rates_text = "0.6,0.25,0.15", start_doc, templates_dir = DGKIT_DEFAULT_TEMPLATES,
              locale = "en", out_dir;
  double boost = 2.0;
  unsigned threads = 0;
  std::size_t precommit = 1;
  auto* gen_flows = app.add_subcommand("gen-flows", "Sample dialog flows from a graph");
  gen_flows->add_option("--graph", graph_path, "Graph JSON")->required();
  gen_flows->add_option("-o,--out-dir", out_dir, "Directory for .flow.json files")->required();
  gen_flows->add_option("--seed", seed, "Base seed");
  gen_flows->add_option("--count", count, "Number of flows")->check(CLI::PositiveNumber);
  gen_flows->add_option("--n-goals", n_goals, "Goals per flow")->check(CLI::PositiveNumber);
  gen_flows->add_option("--rates", rates_text, "follow_up,in_jump,out_jump");
  gen_flows->add_option("--boost", boost, "out_jump boost for out-linked goals");
  gen_flows->add_option("--start-doc", start_doc, "Start document (default: drawn per flow)");
  gen_flows->add_option("--templates", templates_dir, "Prompt template directory");
  gen_flows->add_option("--locale", locale, "Prompt locale");
  gen_flows->add_option("--precommit", precommit, "Conditions stated up front in SOLUTION prompts");
  gen_flows->add_option("--threads", threads, "Worker threads (0 = hardware)");

  // gen-prompts
  std::vector<std::string> flow_files;
  auto* gen_prompts = app.add_subcommand("gen-prompts", "Re-render flow prompts in another locale");
  gen_prompts->add_option("flows", flow_files, ".flow.json files")->required();
  gen_prompts->add_option("--graph", graph_path, "Graph JSON")->required();
  gen_prompts->add_option("-o,--out-dir", out_dir, "Directory for rewritten flows")->required();
  gen_prompts->add_option("--templates", templates_dir, "Prompt template directory");
  gen_prompts->add_option("--locale", locale, "Prompt locale");
  gen_prompts->add_option("--precommit", precommit, "Conditions stated up front in SOLUTION prompts");

  // serve
  ServeConfig serve_cfg;
  serve_cfg.templates_dir = DGKIT_DEFAULT_TEMPLATES;
  std::string store_flag, config_path;
  std::vector<std::string> serve_flows;
  std::string tokens_path;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP annotation service");
  serve_cmd->add_option("--graph", graph_path, "Graph JSON")->required();
  serve_cmd->add_option("--store", store_flag, "Store log path");
  serve_cmd->add_option("--tokens", tokens_path, "Token file")->required();
  serve_cmd->add_option("--flows", serve_flows, ".flow.json files or directories to register");
  serve_cmd->add_option("--templates", templates_dir, "Prompt template directory");
  serve_cmd->add_option("--config", config_path, "Taxonomy and split ratio config");
  serve_cmd->add_option("--host", serve_cfg.host, "Bind address");
  serve_cmd->add_option("--port", serve_cfg.port, "Port (0 = any)")->check(CLI::Range(0, 65535));

  // stats / split / export
  std::string corpus_path, ratios_text = "0.7,0.1,0.2";
  auto* stats = app.add_subcommand("stats", "Corpus statistics");
  stats->add_option("--graph", graph_path, "Graph JSON")->required();
  stats->add_option("--store", store_flag, "Store log path");
  stats->add_option("--corpus", corpus_path, "Exported .dialogs.jsonl");
  stats->add_option("--config", config_path, "Taxonomy and split ratio config");
  add_format(stats);

  auto* split = app.add_subcommand("split", "Train/validation/test partition of dialogs");
  split->add_option("--graph", graph_path, "Graph JSON (needed with --store)");
  split->add_option("--store", store_flag, "Store log path");
  split->add_option("--corpus", corpus_path, "Exported .dialogs.jsonl");
  split->add_option("--ratios", ratios_text, "train,validation,test");
  split->add_option("--seed", seed, "Shuffle seed");
  add_format(split);

  auto* export_cmd = app.add_subcommand("export", "Write the closed dialogs as .dialogs.jsonl");
  export_cmd->add_option("--graph", graph_path, "Graph JSON")->required();
  export_cmd->add_option("--store", store_flag, "Store log path");
  export_cmd->add_option("-o,--output", output, "Output file")->required();
  export_cmd->add_option("--ratios", ratios_text, "train,validation,test");
  export_cmd->add_option("--seed", seed, "Split seed");
  export_cmd->add_option("--config", config_path, "Taxonomy and split ratio config");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  const bool as_json = format == "json";
  try {
    if (ingest->parsed()) {
      BuildOptions opts{sibling ? SolutionAttachment::sibling : SolutionAttachment::child,
                        allow_dangling};
      const auto docs = load_documents(sources);
      DocumentGraph g = build_graph(docs, load_domain_map(domain_map), opts);
      if (!no_mark) mark_super_leaves(g, MarkingRuleSet::defaults(), source_flags(g));
      save_graph(g, output);
      err << "ingested " << docs.size() << " documents, " << g.size() << " nodes -> " << output
          << "\n";
      return kExitOk;
    }

    if (validate_cmd->parsed()) {
      ValidationReport report;
      const bool graph_input = validate_inputs.size() == 1 &&
                               validate_inputs[0].ends_with(".json") &&
                               !validate_inputs[0].ends_with(".docir.json");
      if (graph_input) {
        report = validate(load_graph(validate_inputs[0]));
      } else {
        try {
          BuildOptions opts{sibling ? SolutionAttachment::sibling : SolutionAttachment::child, false};
          report = validate(build_graph(load_documents(validate_inputs), load_domain_map(domain_map), opts));
        } catch (const GraphBuildError& e) {
          report = e.report();
        }
      }
      if (as_json) out << report_json(report).dump(2) << "\n";
      else if (report.ok()) out << "ok\n";
      else print_report(report, out);
      return report.ok() ? kExitOk : kExitFailure;
    }

    if (rank->parsed()) {
      if (!(w_struct > 0) || !(w_links > 0)) throw UsageError("ranking weights must be positive");
      const auto scores = rank_documents(load_documents(sources), {w_struct, w_links});
      if (as_json) {
        json arr = json::array();
        for (const auto& s : scores)
          arr.push_back({{"doc_id", s.doc_id},
                         {"structural_richness", s.structural_richness},
                         {"link_degree", s.link_degree},
                         {"score", s.score}});
        out << json{{"v", 1}, {"ranking", arr}}.dump(2) << "\n";
      } else {
        for (const auto& s : scores)
          out << s.doc_id << "\t" << s.score << "\tstructure=" << s.structural_richness
              << "\tlinks=" << s.link_degree << "\n";
      }
      return kExitOk;
    }

    if (mark->parsed()) {
      const auto overrides = load_overrides(overrides_path);
      DocumentGraph g = load_graph(graph_path);
      const auto n = mark_super_leaves(
          g, rules == "none" ? MarkingRuleSet::none() : MarkingRuleSet::defaults(), overrides);
      save_graph(g, output.empty() ? graph_path : output);
      if (as_json) out << json{{"v", 1}, {"super_leaves", n}}.dump() << "\n";
      else out << n << " super-leaves\n";
      return kExitOk;
    }

    if (gen_flows->parsed()) {
      const auto r = parse_csv_doubles(rates_text, 3, "--rates");
      FlowParams params;
      params.rates = {r[0], r[1], r[2], boost};
      try {
        params.rates.validate();
      } catch (const Error& e) {
        throw UsageError(e.what());
      }
      params.n_goals = n_goals;
      params.start_doc = start_doc;
      TemplateSet templates;
      templates.load_directory(templates_dir);
      if (!templates.has_locale(locale)) throw UsageError("unknown locale '" + locale + "'");
      const DocumentGraph g = load_graph(graph_path);
      const unsigned workers = threads ? threads : std::max(1u, std::thread::hardware_concurrency());
      const auto results =
          generate_batch(g, params, count, seed, templates, {locale, precommit}, workers);
      int failures = 0;
      for (const auto& res : results) {
        if (res.flow) {
          write_file(fs::path(out_dir) / (res.flow->flow_id + ".flow.json"), serialize_flow(*res.flow));
        } else {
          ++failures;
          err << "flow seed " << res.seed << ": " << to_string(res.error->code()) << ": "
              << res.error->what() << "\n";
        }
      }
      err << results.size() - failures << " flows written to " << out_dir << "\n";
      return failures ? kExitFailure : kExitOk;
    }

    if (gen_prompts->parsed()) {
      TemplateSet templates;
      templates.load_directory(templates_dir);
      if (!templates.has_locale(locale)) throw UsageError("unknown locale '" + locale + "'");
      const DocumentGraph g = load_graph(graph_path);
      for (const auto& f : expand_flow_files(flow_files)) {
        DialogFlow flow = flow_from_json(json::parse(read_file(f)));
        rerender_prompts(g, flow, templates, {locale, precommit});
        write_file(fs::path(out_dir) / f.filename(), serialize_flow(flow));
      }
      return kExitOk;
    }

    if (serve_cmd->parsed()) {
      serve_cfg.corpus_path = graph_path;
      serve_cfg.store_path = resolve_store(store_flag);
      serve_cfg.tokens_path = tokens_path;
      serve_cfg.templates_dir = templates_dir;
      serve_cfg.store_config_path = config_path;
      for (const auto& f : serve_flows) serve_cfg.flow_paths.emplace_back(f);
      auto handle = serve(serve_cfg);
      out << "listening on " << serve_cfg.host << ":" << handle->port() << std::endl;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
      handle->stop();
      return kExitOk;
    }

    DialogStore::Options store_opts;
    SplitRatios ratios;
    if (!config_path.empty()) {
      const auto cfg = load_store_config(config_path);
      store_opts.taxonomy = cfg.taxonomy;
      ratios = cfg.ratios;
    }
    auto ratios_from_flag = [&](CLI::App* sub) {
      if (sub->count("--ratios") || config_path.empty()) {
        const auto r = parse_csv_doubles(ratios_text, 3, "--ratios");
        ratios = {r[0], r[1], r[2]};
      }
      try {
        split_dataset(std::vector<std::string>{}, ratios, 0);
      } catch (const Error& e) {
        throw UsageError(e.what());
      }
    };

    if (stats->parsed()) {
      const DocumentGraph g = load_graph(graph_path);
      const auto dialogs = load_dialogs(corpus_path, resolve_store(store_flag), g, store_opts);
      const auto report = compute_stats(dialogs, g, store_opts.taxonomy);
      if (as_json) out << to_json(report).dump(2) << "\n";
      else print_stats(report, out);
      return kExitOk;
    }

    if (split->parsed()) {
      ratios_from_flag(split);
      std::vector<std::string> ids;
      if (!corpus_path.empty()) {
        for (const auto& d : import_corpus(read_file(corpus_path)).dialogs) ids.push_back(d.dialog_id);
      } else {
        if (graph_path.empty()) throw UsageError("--graph is required with --store");
        const DocumentGraph g = load_graph(graph_path);
        for (const auto& d : load_dialogs({}, resolve_store(store_flag), g, store_opts))
          ids.push_back(d.dialog_id);
      }
      const auto s = split_dataset(ids, ratios, seed);
      if (as_json) {
        out << json{{"v", 1},
                    {"train", s.train},
                    {"validation", s.validation},
                    {"test", s.test}}
                   .dump(2)
            << "\n";
      } else {
        out << "train " << s.train.size() << "\nvalidation " << s.validation.size() << "\ntest "
            << s.test.size() << "\n";
      }
      return kExitOk;
    }

    if (export_cmd->parsed()) {
      ratios_from_flag(export_cmd);
      const DocumentGraph g = load_graph(graph_path);
      const auto dialogs = load_dialogs({}, resolve_store(store_flag), g, store_opts);
      write_file(output, export_corpus(dialogs, split_dataset(dialogs, ratios, seed)));
      err << dialogs.size() << " dialogs exported to " << output << "\n";
      return kExitOk;
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const GraphBuildError& e) {
    err << "error: " << to_string(e.code()) << ": " << e.what() << "\n";
    print_report(e.report(), err);
    return kExitFailure;
  } catch (const Error& e) {
    err << "error: " << to_string(e.code()) << ": " << e.what();
    if (!e.detail().empty()) err << " (" << e.detail() << ")";
    err << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace dgkit::cli
