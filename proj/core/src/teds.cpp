#include "tabrec/teds.hpp"

#include <algorithm>
#include <cctype>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <unordered_map>

#include "tabrec/htmlgrammar.hpp"

namespace tabrec::teds {

using grammar::ParseError;

int NodeTree::add(std::string label, int parent, std::string content) {
  const int id = static_cast<int>(nodes.size());
  nodes.push_back({std::move(label), std::move(content), {}, parent});
  if (parent >= 0) nodes.at(static_cast<std::size_t>(parent)).children.push_back(id);
  return id;
}

bool NodeTree::operator==(const NodeTree& o) const {
  if (nodes.size() != o.nodes.size()) return false;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto& a = nodes[i];
    const auto& b = o.nodes[i];
    if (a.label != b.label || a.content != b.content || a.children != b.children || a.parent != b.parent) return false;
  }
  return true;
}

namespace {

bool is_cell(std::string_view label) {
  const std::string_view tag = label.substr(0, label.find(' '));
  return tag == "td" || tag == "th";
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string decode_entities(std::string_view s) {
  static const std::pair<std::string_view, char> table[] = {
      {"&amp;", '&'}, {"&lt;", '<'}, {"&gt;", '>'}, {"&quot;", '"'}, {"&#39;", '\''}, {"&nbsp;", ' '}};
  std::string out;
  for (std::size_t i = 0; i < s.size();) {
    bool hit = false;
    if (s[i] == '&')
      for (const auto& [ent, ch] : table)
        if (s.substr(i).starts_with(ent)) {
          out.push_back(ch);
          i += ent.size();
          hit = true;
          break;
        }
    if (!hit) out.push_back(s[i++]);
  }
  return out;
}

struct Tag {
  bool closing = false;
  bool self_closing = false;
  std::string name;
  std::map<std::string, std::string> attrs;
  std::size_t begin = 0, end = 0;  // [begin, end) in the source
};

class Scanner {
 public:
  explicit Scanner(std::string_view s) : s_(s) {}

  bool done() const { return pos_ >= s_.size(); }
  std::size_t pos() const { return pos_; }
  bool at_tag() const { return !done() && s_[pos_] == '<'; }

  /// Text up to the next '<'.
  std::string_view text() {
    const std::size_t b = pos_;
    while (!done() && s_[pos_] != '<') ++pos_;
    return s_.substr(b, pos_ - b);
  }

  Tag tag() {
    Tag t;
    t.begin = pos_;
    ++pos_;  // '<'
    if (peek() == '/') {
      t.closing = true;
      ++pos_;
    }
    t.name = lower(ident());
    if (t.name.empty()) throw ParseError("expected a tag name", pos_);
    for (;;) {
      skip_space();
      if (done()) throw ParseError("unterminated tag <" + t.name, t.begin);
      if (s_[pos_] == '>') {
        ++pos_;
        break;
      }
      if (s_[pos_] == '/' && pos_ + 1 < s_.size() && s_[pos_ + 1] == '>') {
        t.self_closing = true;
        pos_ += 2;
        break;
      }
      if (t.closing) throw ParseError("attributes on a closing tag", pos_);
      const std::size_t at = pos_;
      std::string name = lower(ident());
      if (name.empty()) throw ParseError("malformed attribute", pos_);
      std::string value;
      skip_space();
      if (peek() == '=') {
        ++pos_;
        skip_space();
        const char q = peek();
        if (q == '"' || q == '\'') {
          ++pos_;
          const std::size_t b = pos_;
          while (!done() && s_[pos_] != q) ++pos_;
          if (done()) throw ParseError("unterminated attribute value", b);
          value = std::string(s_.substr(b, pos_ - b));
          ++pos_;
        } else {
          const std::size_t b = pos_;
          while (!done() && !std::isspace(static_cast<unsigned char>(s_[pos_])) && s_[pos_] != '>') ++pos_;
          value = std::string(s_.substr(b, pos_ - b));
        }
      }
      if (!t.attrs.emplace(name, value).second) throw ParseError("duplicate attribute " + name, at);
    }
    t.end = pos_;
    return t;
  }

 private:
  char peek() const { return done() ? '\0' : s_[pos_]; }
  void skip_space() {
    while (!done() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  std::string_view ident() {
    const std::size_t b = pos_;
    while (!done() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '-' || s_[pos_] == '_'))
      ++pos_;
    return s_.substr(b, pos_ - b);
  }

  std::string_view s_;
  std::size_t pos_ = 0;
};

std::string cell_label(const Tag& t) {
  std::string label = t.name;
  for (const char* key : {"colspan", "rowspan"}) {
    auto it = t.attrs.find(key);
    if (it == t.attrs.end()) continue;
    const std::string v = trim(it->second);
    int n = 0;
    try {
      std::size_t used = 0;
      n = std::stoi(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
    } catch (const std::exception&) {
      throw ParseError(std::string("bad ") + key + " value '" + v + "'", t.begin);
    }
    if (n < 1) throw ParseError(std::string(key) + " must be >= 1", t.begin);
    if (n != 1) label += " " + std::string(key) + "=" + std::to_string(n);
  }
  return label;
}

bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); });
}

}  // namespace

NodeTree html_to_tree(std::string_view html, Mode mode) {
  NodeTree tree;
  Scanner sc(html);
  std::vector<int> stack;
  bool closed_root = false;

  while (!sc.done()) {
    if (!sc.at_tag()) {
      const std::size_t at = sc.pos();
      if (!blank(sc.text())) throw ParseError("text outside a cell", at);
      continue;
    }
    const std::size_t at = sc.pos();
    Tag t = sc.tag();
    if (closed_root) throw ParseError("markup after the closing </table>", at);
    if (t.closing) {
      if (stack.empty() || tree.nodes[static_cast<std::size_t>(stack.back())].label != t.name)
        throw ParseError("unexpected </" + t.name + ">", at);
      stack.pop_back();
      if (stack.empty()) closed_root = true;
      continue;
    }
    if (stack.empty() && !tree.nodes.empty()) throw ParseError("more than one root element", at);
    if (tree.nodes.empty() && t.name != "table") throw ParseError("root element must be <table>", at);

    if (t.name == "td" || t.name == "th") {
      const int id = tree.add(cell_label(t), stack.back());
      if (t.self_closing) continue;
      // Collect text up to the matching close; inline markup is ignored.
      std::string text;
      for (;;) {
        if (sc.done()) throw ParseError("unterminated <" + t.name + ">", t.begin);
        if (!sc.at_tag()) {
          text += sc.text();
          continue;
        }
        const std::size_t inner_at = sc.pos();
        Tag inner = sc.tag();
        if (inner.closing && inner.name == t.name) break;
        if (inner.name == "td" || inner.name == "th" || inner.name == "tr" || inner.name == "table")
          throw ParseError("<" + inner.name + "> inside a cell", inner_at);
      }
      if (mode == Mode::kTotal) tree.nodes[static_cast<std::size_t>(id)].content = trim(decode_entities(text));
      continue;
    }
    const int id = tree.add(t.name, stack.empty() ? -1 : stack.back());
    if (!t.self_closing) stack.push_back(id);
  }
  if (tree.nodes.empty()) throw ParseError("no <table> element", html.size());
  if (!stack.empty()) throw ParseError("unclosed <" + tree.nodes[static_cast<std::size_t>(stack.back())].label + ">",
                                       html.size());
  return tree;
}

double normalized_edit_distance(std::string_view a, std::string_view b) {
  if (a.empty() && b.empty()) return 0.0;
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return static_cast<double>(prev[b.size()]) / static_cast<double>(std::max(a.size(), b.size()));
}

double rename_cost(const NodeTree::Node& a, const NodeTree::Node& b) {
  if (a.label != b.label) return 1.0;
  if (is_cell(a.label)) return normalized_edit_distance(a.content, b.content);
  return 0.0;
}

namespace {

struct Postorder {
  std::vector<int> node;  // postorder index -> tree node
  std::vector<int> lml;   // leftmost leaf descendant, postorder indices
  std::vector<int> keyroots;
};

Postorder postorder(const NodeTree& t) {
  Postorder p;
  const std::size_t n = t.size();
  p.node.reserve(n);
  p.lml.assign(n, 0);
  std::vector<int> post_of(n, -1);
  // Iterative postorder.
  std::vector<std::pair<int, std::size_t>> stack{{0, 0}};
  while (!stack.empty()) {
    auto& [v, next] = stack.back();
    const auto& ch = t.nodes[static_cast<std::size_t>(v)].children;
    if (next < ch.size()) {
      const int c = ch[next++];
      stack.push_back({c, 0});
    } else {
      const int idx = static_cast<int>(p.node.size());
      post_of[static_cast<std::size_t>(v)] = idx;
      p.node.push_back(v);
      p.lml[static_cast<std::size_t>(idx)] = ch.empty() ? idx : p.lml[static_cast<std::size_t>(post_of[static_cast<std::size_t>(ch.front())])];
      stack.pop_back();
    }
  }
  // Keyroots: the highest node for each distinct leftmost leaf.
  std::vector<int> last(n, -1);
  for (std::size_t i = 0; i < n; ++i) last[static_cast<std::size_t>(p.lml[i])] = static_cast<int>(i);
  for (std::size_t i = 0; i < n; ++i)
    if (last[i] >= 0) p.keyroots.push_back(last[i]);
  std::sort(p.keyroots.begin(), p.keyroots.end());
  return p;
}

}  // namespace

double ted(const NodeTree& a, const NodeTree& b) {
  if (a.size() == 0) return static_cast<double>(b.size());
  if (b.size() == 0) return static_cast<double>(a.size());
  const Postorder pa = postorder(a), pb = postorder(b);
  const std::size_t n = a.size(), m = b.size();
  std::vector<double> td(n * m, 0.0);
  std::vector<double> fd((n + 1) * (m + 1), 0.0);
  auto TD = [&](std::size_t i, std::size_t j) -> double& { return td[i * m + j]; };

  for (int ki : pa.keyroots) {
    for (int kj : pb.keyroots) {
      const int li = pa.lml[static_cast<std::size_t>(ki)];
      const int lj = pb.lml[static_cast<std::size_t>(kj)];
      const std::size_t rows = static_cast<std::size_t>(ki - li + 2);
      const std::size_t cols = static_cast<std::size_t>(kj - lj + 2);
      auto FD = [&](std::size_t x, std::size_t y) -> double& { return fd[x * cols + y]; };
      FD(0, 0) = 0;
      for (std::size_t x = 1; x < rows; ++x) FD(x, 0) = FD(x - 1, 0) + 1;
      for (std::size_t y = 1; y < cols; ++y) FD(0, y) = FD(0, y - 1) + 1;
      for (std::size_t x = 1; x < rows; ++x) {
        const int i = li + static_cast<int>(x) - 1;
        for (std::size_t y = 1; y < cols; ++y) {
          const int j = lj + static_cast<int>(y) - 1;
          const double del = FD(x - 1, y) + 1;
          const double ins = FD(x, y - 1) + 1;
          if (pa.lml[static_cast<std::size_t>(i)] == li && pb.lml[static_cast<std::size_t>(j)] == lj) {
            const double ren = FD(x - 1, y - 1) + rename_cost(a.nodes[static_cast<std::size_t>(pa.node[static_cast<std::size_t>(i)])],
                                                             b.nodes[static_cast<std::size_t>(pb.node[static_cast<std::size_t>(j)])]);
            FD(x, y) = std::min({del, ins, ren});
            TD(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = FD(x, y);
          } else {
            const std::size_t px = static_cast<std::size_t>(pa.lml[static_cast<std::size_t>(i)] - li);
            const std::size_t py = static_cast<std::size_t>(pb.lml[static_cast<std::size_t>(j)] - lj);
            FD(x, y) = std::min({del, ins, FD(px, py) + TD(static_cast<std::size_t>(i), static_cast<std::size_t>(j))});
          }
        }
      }
    }
  }
  return TD(n - 1, m - 1);
}

namespace {

struct Relations {
  std::vector<std::vector<std::uint8_t>> ancestor;  // ancestor[u][v]: u is a proper ancestor of v
  std::vector<int> pre;                             // preorder rank
};

Relations relations(const NodeTree& t) {
  Relations r;
  const std::size_t n = t.size();
  r.ancestor.assign(n, std::vector<std::uint8_t>(n, 0));
  r.pre.resize(n);
  int counter = 0;
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    r.pre[static_cast<std::size_t>(v)] = counter++;
    const auto& ch = t.nodes[static_cast<std::size_t>(v)].children;
    for (auto it = ch.rbegin(); it != ch.rend(); ++it) stack.push_back(*it);
  }
  for (std::size_t v = 0; v < n; ++v)
    for (int u = t.nodes[v].parent; u >= 0; u = t.nodes[static_cast<std::size_t>(u)].parent)
      r.ancestor[static_cast<std::size_t>(u)][v] = 1;
  return r;
}

}  // namespace

double ted_bruteforce(const NodeTree& a, const NodeTree& b, std::size_t max_nodes) {
  if (a.size() > max_nodes || b.size() > max_nodes)
    throw std::invalid_argument("ted_bruteforce: trees larger than " + std::to_string(max_nodes) + " nodes");
  const Relations ra = relations(a), rb = relations(b);
  const std::size_t n = a.size(), m = b.size();
  std::vector<std::pair<int, int>> pairs;
  std::vector<std::uint8_t> used(m, 0);
  double best = static_cast<double>(n + m);

  auto consistent = [&](int i, int j) {
    for (const auto& [pi, pj] : pairs) {
      const auto ui = static_cast<std::size_t>(i), uj = static_cast<std::size_t>(j);
      const auto upi = static_cast<std::size_t>(pi), upj = static_cast<std::size_t>(pj);
      if (ra.ancestor[upi][ui] != rb.ancestor[upj][uj]) return false;
      if (ra.ancestor[ui][upi] != rb.ancestor[uj][upj]) return false;
      if ((ra.pre[upi] < ra.pre[ui]) != (rb.pre[upj] < rb.pre[uj])) return false;
    }
    return true;
  };

  // Each node of a is either deleted or mapped to an unused node of b.
  auto search = [&](auto&& self, std::size_t i, double cost) -> void {
    if (i == n) {
      best = std::min(best, cost + static_cast<double>(m - pairs.size()));
      return;
    }
    self(self, i + 1, cost + 1.0);
    for (std::size_t j = 0; j < m; ++j) {
      if (used[j] || !consistent(static_cast<int>(i), static_cast<int>(j))) continue;
      used[j] = 1;
      pairs.emplace_back(static_cast<int>(i), static_cast<int>(j));
      self(self, i + 1, cost + rename_cost(a.nodes[i], b.nodes[j]));
      pairs.pop_back();
      used[j] = 0;
    }
  };
  search(search, 0, 0.0);
  return best;
}

double teds(const NodeTree& a, const NodeTree& b) {
  const double denom = static_cast<double>(std::max(a.size(), b.size()));
  if (denom == 0) return 1.0;
  return std::clamp(1.0 - ted(a, b) / denom, 0.0, 1.0);
}

double teds_html(std::string_view pred, std::string_view truth, Mode mode) {
  const NodeTree t = html_to_tree(truth, mode);
  NodeTree p;
  try {
    p = html_to_tree(pred, mode);
  } catch (const ParseError&) {
    return 0.0;
  }
  return teds(p, t);
}

TableClass classify(const NodeTree& tree) {
  for (const auto& n : tree.nodes)
    if (is_cell(n.label) && n.label.find("span=") != std::string::npos) return TableClass::kComplex;
  return TableClass::kSimple;
}

EvalReport evaluate(const std::vector<HtmlRecord>& predictions, const std::vector<HtmlRecord>& truth,
                    unsigned workers) {
  std::unordered_map<std::string, const HtmlRecord*> by_id;
  for (const auto& p : predictions) by_id[p.id] = &p;
  EvalReport rep;
  rep.samples.resize(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i)
    if (!by_id.count(truth[i].id)) throw std::invalid_argument("no prediction for id '" + truth[i].id + "'");

  auto work = [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const HtmlRecord& gt = truth[i];
      const HtmlRecord& pr = *by_id.at(gt.id);
      SampleScore& s = rep.samples[i];
      s.id = gt.id;
      const NodeTree gs = html_to_tree(gt.html, Mode::kStructural);
      const NodeTree gtot = html_to_tree(gt.html, Mode::kTotal);
      s.table_class = classify(gs);
      try {
        s.structural = teds(html_to_tree(pr.html, Mode::kStructural), gs);
        s.total = teds(html_to_tree(pr.html, Mode::kTotal), gtot);
      } catch (const ParseError&) {
        s.parse_error = true;
        s.structural = s.total = 0.0;
      }
    }
  };
  workers = std::max(1u, workers);
  if (workers == 1 || truth.size() < 2) {
    work(0, truth.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (truth.size() + workers - 1) / workers;
    for (unsigned w = 0; w < workers; ++w) {
      const std::size_t b = w * chunk, e = std::min(truth.size(), b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
    for (auto& t : pool) t.join();
  }

  auto add = [](Aggregate& a, const SampleScore& s) {
    ++a.count;
    a.structural += s.structural;
    a.total += s.total;
  };
  for (const auto& s : rep.samples) {
    add(rep.all, s);
    add(s.table_class == TableClass::kComplex ? rep.complex : rep.simple, s);
  }
  for (Aggregate* a : {&rep.simple, &rep.complex, &rep.all})
    if (a->count) {
      a->structural /= static_cast<double>(a->count);
      a->total /= static_cast<double>(a->count);
    }
  return rep;
}

std::string format_report(const EvalReport& r) {
  std::ostringstream os;
  auto cell = [&](const Aggregate& a, bool total) {
    os << std::setw(10);
    if (a.count == 0)
      os << "-";
    else
      os << std::fixed << std::setprecision(2) << 100.0 * (total ? a.total : a.structural);
  };
  os << "TEDS (%)  " << std::setw(10) << "Simple" << std::setw(10) << "Complex" << std::setw(10) << "All" << '\n';
  os << "Structure ";
  cell(r.simple, false);
  cell(r.complex, false);
  cell(r.all, false);
  os << '\n' << "Total     ";
  cell(r.simple, true);
  cell(r.complex, true);
  cell(r.all, true);
  os << '\n'
     << "Samples   " << std::setw(10) << r.simple.count << std::setw(10) << r.complex.count << std::setw(10)
     << r.all.count << '\n';
  return os.str();
}

}  // namespace tabrec::teds
