#include "dgkit/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace dgkit {

namespace {

using json = nlohmann::json;

[[noreturn]] void syntax_error(std::size_t line, std::size_t col, const std::string& what) {
  throw Error(ErrorCode::SyntaxError,
              "line " + std::to_string(line) + ", col " + std::to_string(col) + ": " + what,
              std::to_string(line) + ":" + std::to_string(col));
}

bool valid_id(std::string_view id) {
  if (id.empty()) return false;
  return std::all_of(id.begin(), id.end(), [](unsigned char c) {
    return c > 0x20 && c != '#' && c != '[' && c != ']' && c != '{' && c != '}' && c != '@' &&
           c != 0x7f;
  });
}

bool valid_key(std::string_view key) {
  return !key.empty() && std::all_of(key.begin(), key.end(), [](unsigned char c) {
    return std::isalnum(c) || c == '_' || c == '-' || c == '.';
  });
}

std::string escape_text(std::string_view text, bool in_property) {
  std::string out;
  out.reserve(text.size());
  for (char c : text) {
    if (c == '\\') out += "\\\\";
    else if (c == '\n') out += "\\n";
    else if (in_property && (c == ',' || c == '}' || c == '=')) {
      out += '\\';
      out += c;
    } else out += c;
  }
  return out;
}

class LineParser {
 public:
  LineParser(std::string_view line, std::size_t line_no, std::size_t col0)
      : line_(line), line_no_(line_no), col0_(col0) {}

  bool done() const { return pos_ >= line_.size(); }
  char peek() const { return line_[pos_]; }
  std::size_t col() const { return col0_ + pos_ + 1; }

  [[noreturn]] void fail(const std::string& what) const { syntax_error(line_no_, col(), what); }

  void expect(char c) {
    if (done() || peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  std::string_view take_while(auto pred) {
    const auto start = pos_;
    while (!done() && pred(peek())) ++pos_;
    return line_.substr(start, pos_ - start);
  }

  /// Reads an escaped run up to an unescaped stop character (or end of line).
  std::string take_escaped(std::string_view stops) {
    std::string out;
    while (!done() && stops.find(peek()) == std::string_view::npos) {
      char c = line_[pos_++];
      if (c != '\\') {
        out += c;
        continue;
      }
      if (done()) fail("dangling escape");
      char e = line_[pos_++];
      out += (e == 'n') ? '\n' : e;
    }
    return out;
  }

  std::string rest_as_text() {
    if (done()) return {};
    if (peek() != ' ') fail("expected a space before the text");
    ++pos_;
    return take_escaped({});
  }

 private:
  std::string_view line_;
  std::size_t line_no_;
  std::size_t col0_;
  std::size_t pos_ = 0;
};

struct Block {
  std::string label;
  std::string id;
  std::map<std::string, std::string> properties;
  std::string text;
};

Block parse_block(LineParser& p) {
  Block b;
  p.expect('@');
  b.label = std::string(p.take_while([](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }));
  if (b.label.empty()) p.fail("expected a type label after '@'");
  if (!p.done() && p.peek() == '[') {
    p.expect('[');
    b.id = std::string(p.take_while([](char c) { return c != ']'; }));
    p.expect(']');
    if (!valid_id(b.id)) p.fail("invalid node id '" + b.id + "'");
  }
  if (!p.done() && p.peek() == '{') {
    p.expect('{');
    while (true) {
      if (!p.done() && p.peek() == '}') break;
      std::string key(p.take_while([](char c) { return c != '=' && c != ',' && c != '}'; }));
      if (!valid_key(key)) p.fail("invalid property key '" + key + "'");
      p.expect('=');
      std::string value = p.take_escaped(",}");
      if (!b.properties.emplace(key, std::move(value)).second)
        p.fail("duplicate property '" + key + "'");
      if (!p.done() && p.peek() == ',') {
        p.expect(',');
        continue;
      }
      break;
    }
    p.expect('}');
  }
  b.text = p.rest_as_text();
  return b;
}

void write_props(std::ostream& os, const std::map<std::string, std::string>& props) {
  if (props.empty()) return;
  os << '{';
  bool first = true;
  for (const auto& [k, v] : props) {
    if (!first) os << ',';
    first = false;
    os << k << '=' << escape_text(v, true);
  }
  os << '}';
}

void write_block(std::ostream& os, const IRNode& n, std::size_t depth) {
  os << std::string(depth * 2, ' ') << '@' << n.type_label << '[' << n.node_id << ']';
  write_props(os, n.properties);
  if (!n.text.empty()) os << ' ' << escape_text(n.text, false);
  os << '\n';
  for (const auto& c : n.children) write_block(os, c, depth + 1);
}

// -- JSON ------------------------------------------------------------------

IRNode node_from_json(const json& j, std::set<std::string>& ids) {
  IRNode n;
  n.node_id = j.at("node_id").get<std::string>();
  n.type_label = j.at("type").get<std::string>();
  if (!try_parse_node_type(n.type_label))
    throw Error(ErrorCode::UnknownTypeLabel, "unknown node type label '" + n.type_label + "'",
                n.type_label);
  if (!valid_id(n.node_id))
    throw Error(ErrorCode::SyntaxError, "invalid node id '" + n.node_id + "'");
  if (!ids.insert(n.node_id).second)
    throw Error(ErrorCode::DuplicateId, "duplicate node id '" + n.node_id + "'", n.node_id);
  n.text = j.value("text", "");
  if (j.contains("properties"))
    n.properties = j.at("properties").get<std::map<std::string, std::string>>();
  if (j.contains("children"))
    for (const auto& c : j.at("children")) n.children.push_back(node_from_json(c, ids));
  return n;
}

json node_to_json(const IRNode& n) {
  json j;
  j["node_id"] = n.node_id;
  j["type"] = n.type_label;
  j["text"] = n.text;
  j["properties"] = n.properties;
  json children = json::array();
  for (const auto& c : n.children) children.push_back(node_to_json(c));
  j["children"] = std::move(children);
  return j;
}

void count_structures(const IRNode& n, std::set<StructuralFamily>& kinds, std::size_t& links,
                      const std::string& doc_id) {
  if (auto t = try_parse_node_type(n.type_label)) {
    if (*t == NodeType::table) kinds.insert(StructuralFamily::table);
    if (*t == NodeType::sequence) kinds.insert(StructuralFamily::sequence);
    if (is_condition_group(*t) || *t == NodeType::condition)
      kinds.insert(StructuralFamily::condition);
    if (*t == NodeType::see_more) {
      auto it = n.properties.find(std::string(props::kLinkedNode));
      if (it != n.properties.end()) {
        auto target = parse_node_ref(it->second);
        if (target && target->doc_id != doc_id) ++links;
      }
    }
  }
  for (const auto& c : n.children) count_structures(c, kinds, links, doc_id);
}

}  // namespace

DocumentIR parse_docmk(std::string_view source) {
  DocumentIR doc;
  bool have_doc = false;
  bool have_title = false;
  bool in_body = false;
  std::set<std::string> ids;
  // Stack of open blocks: (depth, node pointer into doc.body tree).
  std::vector<IRNode*> open;

  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= source.size()) {
    auto end = source.find('\n', start);
    if (end == std::string_view::npos) end = source.size();
    std::string_view line = source.substr(start, end - start);
    ++line_no;
    const bool last = end == source.size();
    start = end + 1;

    std::size_t indent = 0;
    while (indent < line.size() && line[indent] == ' ') ++indent;
    if (indent < line.size() && line[indent] == '\t') syntax_error(line_no, indent + 1, "tab in indentation");
    std::string_view content = line.substr(indent);
    if (content.empty() || content.front() == '#') {
      if (last) break;
      continue;
    }

    LineParser p(content, line_no, indent);
    if (!in_body && indent == 0 &&
        (content.starts_with("@doc") || content.starts_with("@title") ||
         content.starts_with("@domain"))) {
      Block b = parse_block(p);
      if (b.label == "doc" || b.label == "domain") {
        if (!b.id.empty() || !b.properties.empty())
          syntax_error(line_no, 1, "@" + b.label + " takes a bare value");
        if (b.label == "doc") {
          if (have_doc) syntax_error(line_no, 1, "duplicate @doc");
          if (!valid_id(b.text)) syntax_error(line_no, 6, "invalid document id '" + b.text + "'");
          doc.doc_id = b.text;
          have_doc = true;
        } else {
          if (doc.domain) syntax_error(line_no, 1, "duplicate @domain");
          if (!valid_id(b.text)) syntax_error(line_no, 9, "invalid domain '" + b.text + "'");
          doc.domain = b.text;
        }
      } else if (b.label == "title") {
        if (have_title) syntax_error(line_no, 1, "duplicate @title");
        if (!b.properties.empty()) syntax_error(line_no, 1, "@title takes no properties");
        if (!b.id.empty()) doc.title_id = b.id;
        doc.title = b.text;
        have_title = true;
        ids.insert(doc.title_id);
      } else {
        syntax_error(line_no, 1, "unknown header '@" + b.label + "'");
      }
      if (last) break;
      continue;
    }

    if (!have_doc) syntax_error(line_no, 1, "@doc header must precede the body");
    if (!have_title) syntax_error(line_no, 1, "@title header must precede the body");
    in_body = true;
    if (indent % 2 != 0) syntax_error(line_no, 1, "indentation must be a multiple of two spaces");
    const std::size_t depth = indent / 2;
    if (depth > open.size()) syntax_error(line_no, 1, "indentation skips a level");

    Block b = parse_block(p);
    if (b.id.empty()) syntax_error(line_no, indent + 1, "block is missing its [id]");
    if (!try_parse_node_type(b.label))
      throw Error(ErrorCode::UnknownTypeLabel,
                  "line " + std::to_string(line_no) + ": unknown node type label '" + b.label + "'",
                  b.label);
    if (!ids.insert(b.id).second)
      throw Error(ErrorCode::DuplicateId,
                  "line " + std::to_string(line_no) + ": duplicate node id '" + b.id + "'", b.id);

    open.resize(depth);
    IRNode node{b.id, b.label, std::move(b.text), std::move(b.properties), {}};
    auto& siblings = depth == 0 ? doc.body : open.back()->children;
    siblings.push_back(std::move(node));
    open.push_back(&siblings.back());
    if (last) break;
  }
  if (!have_doc) syntax_error(line_no, 1, "missing @doc header");
  if (!have_title) syntax_error(line_no, 1, "missing @title header");
  return doc;
}

std::string serialize_docmk(const DocumentIR& doc) {
  std::ostringstream os;
  os << "@doc " << doc.doc_id << '\n';
  if (doc.domain) os << "@domain " << *doc.domain << '\n';
  os << "@title[" << doc.title_id << ']';
  if (!doc.title.empty()) os << ' ' << escape_text(doc.title, false);
  os << '\n';
  for (const auto& n : doc.body) write_block(os, n, 0);
  return os.str();
}

DocumentIR parse_docir_json(std::string_view source) {
  json j;
  try {
    j = json::parse(source);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::SyntaxError, e.what(), std::to_string(e.byte));
  }
  try {
    DocumentIR doc;
    doc.doc_id = j.at("doc_id").get<std::string>();
    if (!valid_id(doc.doc_id))
      throw Error(ErrorCode::SyntaxError, "invalid document id '" + doc.doc_id + "'");
    if (j.contains("domain")) doc.domain = j.at("domain").get<std::string>();
    const auto& title = j.at("title");
    doc.title_id = title.value("node_id", "title");
    doc.title = title.value("text", "");
    std::set<std::string> ids{doc.title_id};
    for (const auto& b : j.value("body", json::array())) doc.body.push_back(node_from_json(b, ids));
    return doc;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SyntaxError, e.what());
  }
}

std::string serialize_docir_json(const DocumentIR& doc) {
  json j;
  j["v"] = 1;
  j["doc_id"] = doc.doc_id;
  if (doc.domain) j["domain"] = *doc.domain;
  j["title"] = {{"node_id", doc.title_id}, {"text", doc.title}};
  json body = json::array();
  for (const auto& n : doc.body) body.push_back(node_to_json(n));
  j["body"] = std::move(body);
  return j.dump(2) + "\n";
}

DocumentIR load_document(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string name = path.filename().string();
  try {
    if (name.ends_with(".docir.json")) return parse_docir_json(ss.str());
    return parse_docmk(ss.str());
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what(), e.detail());
  }
}

LinkReport resolve_links(const DocumentGraph& graph) {
  LinkReport report;
  for (auto i : graph.document_order()) {
    const Node& n = graph.node(i);
    if (n.type != NodeType::see_more) continue;
    auto target = n.linked_node();
    if (target && graph.contains(*target)) ++report.resolved;
    else report.dangling.push_back(n.ref);
  }
  return report;
}

std::vector<RankingScore> rank_documents(const std::vector<DocumentIR>& docs,
                                         const RankingWeights& weights) {
  if (!(weights.structural > 0.0) || !(weights.links > 0.0))
    throw Error(ErrorCode::InvalidArgument, "ranking weights must be positive");
  std::vector<RankingScore> out;
  out.reserve(docs.size());
  for (const auto& d : docs) {
    std::set<StructuralFamily> kinds;
    std::size_t links = 0;
    for (const auto& b : d.body) count_structures(b, kinds, links, d.doc_id);
    RankingScore s{d.doc_id, kinds.size(), links, 0.0};
    s.score = weights.structural * static_cast<double>(s.structural_richness) +
              weights.links * static_cast<double>(s.link_degree);
    out.push_back(std::move(s));
  }
  std::stable_sort(out.begin(), out.end(), [](const RankingScore& a, const RankingScore& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.doc_id < b.doc_id;
  });
  return out;
}

}  // namespace dgkit
