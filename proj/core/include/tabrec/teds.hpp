#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace tabrec::teds {

enum class Mode { kStructural, kTotal };

/// Ordered labelled tree stored in preorder; node 0 is the root.
struct NodeTree {
  struct Node {
    std::string label;    // tag name, td labels carry span attributes
    std::string content;  // td text in total mode, otherwise empty
    std::vector<int> children;
    int parent = -1;
  };
  std::vector<Node> nodes;

  std::size_t size() const { return nodes.size(); }
  /// Appends a node under `parent` (-1 for the root) and returns its index.
  int add(std::string label, int parent, std::string content = {});
  bool operator==(const NodeTree& o) const;
};

/// Parses table HTML. Throws grammar::ParseError (position = byte offset)
/// when the markup is not a single well-nested table.
NodeTree html_to_tree(std::string_view html, Mode mode);

/// Normalized Levenshtein distance: edits / max length, 0 for two empty strings.
double normalized_edit_distance(std::string_view a, std::string_view b);

/// Rename cost between two nodes.
double rename_cost(const NodeTree::Node& a, const NodeTree::Node& b);

/// Exact ordered tree edit distance with unit insert/delete costs.
double ted(const NodeTree& a, const NodeTree& b);

/// Exhaustive search over all valid node mappings; only for small trees.
/// Throws std::invalid_argument when either tree has more than `max_nodes` nodes.
double ted_bruteforce(const NodeTree& a, const NodeTree& b, std::size_t max_nodes = 8);

/// 1 - ted / max(|a|, |b|).
double teds(const NodeTree& a, const NodeTree& b);

/// Parses both documents in the given mode and compares them. A prediction
/// that does not parse scores 0.
double teds_html(std::string_view pred, std::string_view truth, Mode mode);

enum class TableClass { kSimple, kComplex };
/// Complex iff some td spans more than one row or column.
TableClass classify(const NodeTree& tree);

struct SampleScore {
  std::string id;
  TableClass table_class = TableClass::kSimple;
  double structural = 0;
  double total = 0;
  bool parse_error = false;
};

struct Aggregate {
  std::size_t count = 0;
  double structural = 0;  // mean
  double total = 0;       // mean
};

struct EvalReport {
  std::vector<SampleScore> samples;
  Aggregate simple, complex, all;
};

struct HtmlRecord {
  std::string id;
  std::string html;
};

/// Scores predictions against ground truth matched by id; the class comes
/// from the ground truth. Throws std::invalid_argument for ids missing from
/// the predictions.
EvalReport evaluate(const std::vector<HtmlRecord>& predictions, const std::vector<HtmlRecord>& truth,
                    unsigned workers = 1);

/// Text table in percent with two decimals, rows for structure and total,
/// columns Simple, Complex, All.
std::string format_report(const EvalReport& report);

}  // namespace tabrec::teds
