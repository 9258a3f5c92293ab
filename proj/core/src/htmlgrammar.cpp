#include "tabrec/htmlgrammar.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace tabrec::grammar {

namespace {

constexpr std::string_view kSos = "<sos>";
constexpr std::string_view kEos = "<eos>";
constexpr std::string_view kPad = "<pad>";
constexpr std::string_view kSep = "<sep>";
constexpr std::string_view kUnk = "<unk>";

constexpr std::string_view kAlphabet = "abcdefghijklmnopqrstuvwxyz0123456789 .,-%$()";

std::string span_token(std::string_view attr, int value) {
  return " " + std::string(attr) + "=\"" + std::to_string(value) + "\"";
}

std::vector<std::string> structure_tokens() {
  std::vector<std::string> t = {std::string(kSos), std::string(kEos), std::string(kPad),
                                "<thead>", "</thead>", "<tbody>", "</tbody>",
                                "<tr>", "</tr>", "<td></td>", "<td", ">", "</td>"};
  for (int v = kMinSpan; v <= kMaxSpan; ++v) t.push_back(span_token("colspan", v));
  for (int v = kMinSpan; v <= kMaxSpan; ++v) t.push_back(span_token("rowspan", v));
  return t;
}

std::vector<std::string> content_tokens() {
  std::vector<std::string> t = {std::string(kSos), std::string(kEos), std::string(kPad),
                                std::string(kSep), std::string(kUnk)};
  for (char c : kAlphabet) t.emplace_back(1, c);
  return t;
}

class HtmlScanner {
 public:
  explicit HtmlScanner(std::string_view s) : s_(s) {}

  bool done() {
    skip_ws();
    return pos_ >= s_.size();
  }
  std::size_t pos() const { return pos_; }

  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }

  // Reads "<name" or "</name" and returns the name (prefixed with '/' for close tags).
  std::string tag_name() {
    skip_ws();
    if (pos_ >= s_.size() || s_[pos_] != '<') throw ParseError("expected '<'", pos_);
    ++pos_;
    std::string name;
    if (pos_ < s_.size() && s_[pos_] == '/') {
      name.push_back('/');
      ++pos_;
    }
    while (pos_ < s_.size() && std::isalnum(static_cast<unsigned char>(s_[pos_]))) {
      name.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(s_[pos_]))));
      ++pos_;
    }
    if (name.empty() || name == "/") throw ParseError("empty tag name", pos_);
    return name;
  }

  void expect_gt() {
    skip_ws();
    if (pos_ >= s_.size() || s_[pos_] != '>') throw ParseError("expected '>'", pos_);
    ++pos_;
  }

  // Parses attributes up to and including '>'.
  std::vector<std::pair<std::string, std::string>> attributes() {
    std::vector<std::pair<std::string, std::string>> out;
    for (;;) {
      skip_ws();
      if (pos_ >= s_.size()) throw ParseError("unterminated tag", pos_);
      if (s_[pos_] == '>') {
        ++pos_;
        return out;
      }
      std::string name;
      const std::size_t start = pos_;
      while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '-')) {
        name.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(s_[pos_]))));
        ++pos_;
      }
      if (name.empty()) throw ParseError("malformed attribute", start);
      skip_ws();
      if (pos_ >= s_.size() || s_[pos_] != '=') throw ParseError("attribute without value", pos_);
      ++pos_;
      skip_ws();
      std::string value;
      if (pos_ < s_.size() && (s_[pos_] == '"' || s_[pos_] == '\'')) {
        const char quote = s_[pos_++];
        while (pos_ < s_.size() && s_[pos_] != quote) value.push_back(s_[pos_++]);
        if (pos_ >= s_.size()) throw ParseError("unterminated attribute value", start);
        ++pos_;
      } else {
        while (pos_ < s_.size() && std::isalnum(static_cast<unsigned char>(s_[pos_]))) value.push_back(s_[pos_++]);
      }
      out.emplace_back(std::move(name), std::move(value));
    }
  }

 private:
  std::string_view s_;
  std::size_t pos_ = 0;
};

int parse_span(const std::string& value, std::size_t pos) {
  if (value.empty() || !std::all_of(value.begin(), value.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
    throw ParseError("span value is not a number", pos);
  const int v = std::stoi(value);
  if (v < kMinSpan || v > kMaxSpan) throw ParseError("span value out of range: " + value, pos);
  return v;
}

}  // namespace

ParseError::ParseError(const std::string& what, std::size_t position)
    : std::runtime_error(what + " at offset " + std::to_string(position)), position_(position) {}

Vocab::Vocab(VocabKind kind, std::vector<std::string> tokens) : kind_(kind), tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second)
      throw std::invalid_argument("duplicate vocabulary token: '" + tokens_[i] + "'");
  }
  auto need = [&](std::string_view t) {
    auto id = find(t);
    if (!id) throw std::invalid_argument("vocabulary lacks reserved token " + std::string(t));
    return *id;
  };
  sos_ = need(kSos);
  eos_ = need(kEos);
  pad_ = need(kPad);
  if (kind_ == VocabKind::kContent) {
    sep_ = need(kSep);
    unk_ = need(kUnk);
  }
}

const Vocab& Vocab::structure() {
  static const Vocab v(VocabKind::kStructure, structure_tokens());
  return v;
}

const Vocab& Vocab::content() {
  static const Vocab v(VocabKind::kContent, content_tokens());
  return v;
}

Vocab Vocab::load(const std::filesystem::path& path, VocabKind kind) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocabulary file " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) tokens.push_back(line);
  return Vocab(kind, std::move(tokens));
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write vocabulary file " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

std::optional<TokenId> Vocab::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocab::id(std::string_view token) const {
  auto found = find(token);
  if (!found) throw std::out_of_range("token not in vocabulary: '" + std::string(token) + "'");
  return *found;
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw std::out_of_range("token id out of range: " + std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}

bool Vocab::is_reserved(TokenId id) const {
  return id == sos_ || id == eos_ || id == pad_ || (sep_ >= 0 && id == sep_) || (unk_ >= 0 && id == unk_);
}

std::string_view content_alphabet() { return kAlphabet; }

TokenId StructureIds::colspan(int value) const {
  if (value < kMinSpan || value > kMaxSpan) throw std::out_of_range("colspan value");
  return colspan_base + (value - kMinSpan);
}

TokenId StructureIds::rowspan(int value) const {
  if (value < kMinSpan || value > kMaxSpan) throw std::out_of_range("rowspan value");
  return rowspan_base + (value - kMinSpan);
}

bool StructureIds::is_colspan(TokenId id) const {
  return id >= colspan_base && id < colspan_base + (kMaxSpan - kMinSpan + 1);
}

bool StructureIds::is_rowspan(TokenId id) const {
  return id >= rowspan_base && id < rowspan_base + (kMaxSpan - kMinSpan + 1);
}

int StructureIds::span_value(TokenId id) const {
  if (is_colspan(id)) return id - colspan_base + kMinSpan;
  if (is_rowspan(id)) return id - rowspan_base + kMinSpan;
  return 0;
}

const StructureIds& structure_ids() {
  static const StructureIds ids = [] {
    const Vocab& v = Vocab::structure();
    StructureIds s{};
    s.thead_open = v.id("<thead>");
    s.thead_close = v.id("</thead>");
    s.tbody_open = v.id("<tbody>");
    s.tbody_close = v.id("</tbody>");
    s.tr_open = v.id("<tr>");
    s.tr_close = v.id("</tr>");
    s.td_merged = v.id("<td></td>");
    s.td_open = v.id("<td");
    s.close_bracket = v.id(">");
    s.td_end = v.id("</td>");
    s.colspan_base = v.id(span_token("colspan", kMinSpan));
    s.rowspan_base = v.id(span_token("rowspan", kMinSpan));
    return s;
  }();
  return ids;
}

TokenSeq reversed(const TokenSeq& seq) {
  TokenSeq out = seq;
  std::reverse(out.ids.begin(), out.ids.end());
  if (seq.direction == Direction::kLtoR) out.direction = Direction::kRtoL;
  else if (seq.direction == Direction::kRtoL) out.direction = Direction::kLtoR;
  return out;
}

void check_token_seq(const TokenSeq& seq, std::size_t cap) {
  if (seq.ids.size() > cap) throw ParseError("sequence exceeds length cap " + std::to_string(cap), cap);
  const Vocab& v = seq.vocab == VocabKind::kStructure ? Vocab::structure() : Vocab::content();
  bool after_eos = false;
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    const TokenId t = seq.ids[i];
    if (t < 0 || static_cast<std::size_t>(t) >= v.size()) throw ParseError("token id out of range", i);
    if (after_eos && t != v.pad()) throw ParseError("token after EOS", i);
    if (t == v.eos()) after_eos = true;
  }
}

TokenSeq tokenize_structure(std::string_view html) {
  const StructureIds& ids = structure_ids();
  TokenSeq out;
  out.vocab = VocabKind::kStructure;

  enum class Ctx { kBody, kSection, kRow };
  std::vector<Ctx> stack{Ctx::kBody};
  std::vector<std::string> sections;

  HtmlScanner sc(html);
  while (!sc.done()) {
    const std::size_t at = sc.pos();
    const std::string name = sc.tag_name();
    if (name == "thead" || name == "tbody") {
      if (stack.back() != Ctx::kBody) throw ParseError("<" + name + "> must not be nested", at);
      sc.expect_gt();
      stack.push_back(Ctx::kSection);
      sections.push_back(name);
      out.ids.push_back(name == "thead" ? ids.thead_open : ids.tbody_open);
    } else if (name == "/thead" || name == "/tbody") {
      if (stack.back() != Ctx::kSection || sections.back() != name.substr(1))
        throw ParseError("unbalanced <" + name + ">", at);
      sc.expect_gt();
      stack.pop_back();
      sections.pop_back();
      out.ids.push_back(name == "/thead" ? ids.thead_close : ids.tbody_close);
    } else if (name == "tr") {
      if (stack.back() == Ctx::kRow) throw ParseError("nested <tr>", at);
      sc.expect_gt();
      stack.push_back(Ctx::kRow);
      out.ids.push_back(ids.tr_open);
    } else if (name == "/tr") {
      if (stack.back() != Ctx::kRow) throw ParseError("unbalanced </tr>", at);
      sc.expect_gt();
      stack.pop_back();
      out.ids.push_back(ids.tr_close);
    } else if (name == "td") {
      if (stack.back() != Ctx::kRow) throw ParseError("<td> outside of <tr>", at);
      int colspan = 0, rowspan = 0;
      for (const auto& [attr, value] : sc.attributes()) {
        if (attr == "colspan") {
          if (colspan) throw ParseError("duplicate colspan", at);
          colspan = parse_span(value, at);
        } else if (attr == "rowspan") {
          if (rowspan) throw ParseError("duplicate rowspan", at);
          rowspan = parse_span(value, at);
        } else {
          throw ParseError("unknown attribute '" + attr + "'", at);
        }
      }
      const std::size_t close_at = sc.pos();
      if (sc.tag_name() != "/td") throw ParseError("expected </td>", close_at);
      sc.expect_gt();
      if (!colspan && !rowspan) {
        out.ids.push_back(ids.td_merged);
      } else {
        out.ids.push_back(ids.td_open);
        if (colspan) out.ids.push_back(ids.colspan(colspan));
        if (rowspan) out.ids.push_back(ids.rowspan(rowspan));
        out.ids.push_back(ids.close_bracket);
        out.ids.push_back(ids.td_end);
      }
    } else {
      throw ParseError("unknown tag <" + name + ">", at);
    }
  }
  if (stack.size() != 1) throw ParseError("unclosed element", html.size());
  return out;
}

namespace {

std::string render(std::span<const TokenId> ids, std::span<const std::string> contents) {
  const Vocab& v = Vocab::structure();
  const StructureIds& s = structure_ids();
  std::string html;
  std::size_t cell = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const TokenId t = ids[i];
    if (t == v.eos()) break;
    if (t == v.sos() || t == v.pad()) continue;
    if (!contents.empty() && t == s.td_merged) {
      html += "<td>";
      html += contents[cell++];
      html += "</td>";
      continue;
    }
    if (!contents.empty() && t == s.td_end) {
      // Spanned cell: the content goes between ">" and "</td>".
      html += contents[cell++];
    }
    html += v.token(t);
  }
  return html;
}

}  // namespace

std::string detokenize_structure(const TokenSeq& seq) {
  if (seq.vocab != VocabKind::kStructure) throw std::invalid_argument("not a structure sequence");
  return render(seq.ids, {});
}

std::string render_html(const TokenSeq& structure, std::span<const std::string> contents) {
  const std::size_t cells = count_cells(structure.ids);
  if (cells != contents.size())
    throw std::invalid_argument("render_html: " + std::to_string(cells) + " cells but " +
                                std::to_string(contents.size()) + " contents");
  if (cells == 0) return "<table>" + render(structure.ids, {}) + "</table>";
  return "<table>" + render(structure.ids, contents) + "</table>";
}

std::vector<std::size_t> cell_anchors(std::span<const TokenId> structure) {
  const StructureIds& s = structure_ids();
  const TokenId eos = Vocab::structure().eos();
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < structure.size(); ++i) {
    if (structure[i] == eos) break;
    if (structure[i] == s.td_merged || structure[i] == s.td_end) out.push_back(i);
  }
  return out;
}

std::size_t count_cells(std::span<const TokenId> structure) { return cell_anchors(structure).size(); }

bool has_spans(std::span<const TokenId> structure) {
  const StructureIds& s = structure_ids();
  return std::any_of(structure.begin(), structure.end(),
                     [&](TokenId t) { return s.is_colspan(t) || s.is_rowspan(t); });
}

TokenSeq tokenize_content(std::string_view text) {
  const Vocab& v = Vocab::content();
  TokenSeq out;
  out.vocab = VocabKind::kContent;
  out.ids.reserve(text.size());
  char buf[2] = {0, 0};
  for (char c : text) {
    buf[0] = c;
    auto id = v.find(std::string_view(buf, 1));
    out.ids.push_back(id && !v.is_reserved(*id) ? *id : v.unk());
  }
  return out;
}

std::string detokenize_content(const TokenSeq& seq) {
  if (seq.vocab != VocabKind::kContent) throw std::invalid_argument("not a content sequence");
  const Vocab& v = Vocab::content();
  std::string out;
  for (TokenId t : seq.ids) {
    if (t == v.eos()) break;
    if (t == v.unk()) {
      out.push_back('?');
    } else if (!v.is_reserved(t)) {
      out += v.token(t);
    }
  }
  return out;
}

TokenSeq concat_cells(std::span<const TokenSeq> cells) {
  const TokenId sep = Vocab::content().sep();
  TokenSeq out;
  out.vocab = VocabKind::kContent;
  for (const auto& cell : cells) {
    if (cell.vocab != VocabKind::kContent) throw std::invalid_argument("concat_cells: structure sequence given");
    if (std::find(cell.ids.begin(), cell.ids.end(), sep) != cell.ids.end())
      throw std::invalid_argument("concat_cells: cell already contains SEP");
    out.ids.insert(out.ids.end(), cell.ids.begin(), cell.ids.end());
    out.ids.push_back(sep);
  }
  return out;
}

std::vector<TokenSeq> split_cells(const TokenSeq& concatenated) {
  const TokenId sep = Vocab::content().sep();
  std::vector<TokenSeq> out;
  TokenSeq cur;
  cur.vocab = VocabKind::kContent;
  for (TokenId t : concatenated.ids) {
    if (t == sep) {
      out.push_back(std::move(cur));
      cur = TokenSeq{};
      cur.vocab = VocabKind::kContent;
    } else {
      cur.ids.push_back(t);
    }
  }
  if (!cur.ids.empty()) throw ParseError("trailing tokens without SEP", concatenated.ids.size());
  return out;
}

std::vector<int> cell_layout(std::span<const TokenId> concatenated) {
  const TokenId sep = Vocab::content().sep();
  std::vector<int> out;
  out.reserve(concatenated.size());
  int seps = 0;
  for (TokenId t : concatenated) {
    out.push_back(seps);
    if (t == sep) ++seps;
  }
  return out;
}

}  // namespace tabrec::grammar
