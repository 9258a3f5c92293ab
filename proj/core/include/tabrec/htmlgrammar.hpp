#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace tabrec::grammar {

using TokenId = std::int32_t;

enum class VocabKind { kStructure, kContent };
enum class Direction { kNone, kLtoR, kRtoL };

/// Raised when HTML or a token sequence cannot be parsed; carries the byte
/// (or token) offset where parsing stopped.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t position);
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

// Span attribute values that have a dedicated token.
inline constexpr int kMinSpan = 2;
inline constexpr int kMaxSpan = 10;

/// Closed id <-> string table. Reserved tokens occupy the lowest ids.
class Vocab {
 public:
  Vocab(VocabKind kind, std::vector<std::string> tokens);

  /// Built-in vocabularies. Both are immutable singletons.
  static const Vocab& structure();
  static const Vocab& content();

  /// Reads a vocabulary file: one token per line, line number = id.
  static Vocab load(const std::filesystem::path& path, VocabKind kind);
  void save(const std::filesystem::path& path) const;

  VocabKind kind() const { return kind_; }
  std::size_t size() const { return tokens_.size(); }

  std::optional<TokenId> find(std::string_view token) const;
  /// Throws std::out_of_range for unknown tokens.
  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;

  TokenId sos() const { return sos_; }
  TokenId eos() const { return eos_; }
  TokenId pad() const { return pad_; }
  /// Content vocabulary only; -1 in the structure vocabulary.
  TokenId sep() const { return sep_; }
  TokenId unk() const { return unk_; }

  bool is_reserved(TokenId id) const;

  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  VocabKind kind_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  TokenId sos_ = -1;
  TokenId eos_ = -1;
  TokenId pad_ = -1;
  TokenId sep_ = -1;
  TokenId unk_ = -1;
};

/// Characters that have a content token (and a glyph in the renderer).
std::string_view content_alphabet();

/// Named ids into the structure vocabulary.
struct StructureIds {
  TokenId thead_open, thead_close, tbody_open, tbody_close;
  TokenId tr_open, tr_close;
  TokenId td_merged;      // "<td></td>"
  TokenId td_open;        // "<td"
  TokenId close_bracket;  // ">"
  TokenId td_end;         // "</td>"

  TokenId colspan(int value) const;
  TokenId rowspan(int value) const;
  bool is_colspan(TokenId id) const;
  bool is_rowspan(TokenId id) const;
  /// Returns the span value carried by a colspan/rowspan token, or 0.
  int span_value(TokenId id) const;

  TokenId colspan_base, rowspan_base;
};

const StructureIds& structure_ids();

struct TokenSeq {
  VocabKind vocab = VocabKind::kStructure;
  std::vector<TokenId> ids;
  Direction direction = Direction::kNone;

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
  bool operator==(const TokenSeq&) const = default;
};

/// Returns the sequence reversed, with the direction tag flipped.
TokenSeq reversed(const TokenSeq& seq);

/// Throws ParseError (position = token index) when the sequence breaks the
/// EOS rule or the length cap.
void check_token_seq(const TokenSeq& seq, std::size_t cap);

TokenSeq tokenize_structure(std::string_view html);
std::string detokenize_structure(const TokenSeq& seq);
/// Same as detokenize_structure but renders each cell's content inside it.
/// Throws std::invalid_argument when the number of contents and cells differ.
std::string render_html(const TokenSeq& structure, std::span<const std::string> contents);

/// Token indices of the cell anchors: the merged token for plain cells, the
/// td end token for spanned cells. Strictly increasing.
std::vector<std::size_t> cell_anchors(std::span<const TokenId> structure);
std::size_t count_cells(std::span<const TokenId> structure);
/// True if any cell carries a span token.
bool has_spans(std::span<const TokenId> structure);

TokenSeq tokenize_content(std::string_view text);
std::string detokenize_content(const TokenSeq& seq);

/// cell1 SEP cell2 SEP ... cellN SEP.
TokenSeq concat_cells(std::span<const TokenSeq> cells);
std::vector<TokenSeq> split_cells(const TokenSeq& concatenated);
/// Cell index of every token: the number of SEP tokens strictly before it.
std::vector<int> cell_layout(std::span<const TokenId> concatenated);

}  // namespace tabrec::grammar
