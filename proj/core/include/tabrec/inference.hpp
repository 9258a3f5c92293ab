#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tabrec/netgraph.hpp"

namespace tabrec::infer {

using attn::Mat;
using grammar::TokenId;

/// Index of the largest entry; ties go to the lowest index.
template <typename T>
TokenId argmax_row(const Mat<T>& m, Eigen::Index row) {
  TokenId best = 0;
  T best_v = m(row, 0);
  for (Eigen::Index j = 1; j < m.cols(); ++j)
    if (m(row, j) > best_v) {
      best_v = m(row, j);
      best = static_cast<TokenId>(j);
    }
  return best;
}

/// Drops tokens that break the table grammar and closes whatever is still
/// open, so the result always renders to well-formed HTML. `kept` receives
/// the source index of every surviving token (closing tokens appended at the
/// end get index npos).
std::vector<TokenId> repair_structure(std::span<const TokenId> tokens, std::vector<std::size_t>* kept = nullptr);

template <typename T>
struct HtmlDecodeResult {
  grammar::TokenSeq structure;  // LtoR, no SOS/EOS
  Mat<T> hidden;                // final pass hidden states, row 0 is SOS
  std::size_t passes = 0;
  bool truncated = false;
};

/// Greedy left-to-right structure decoding until EOS or the structure cap.
template <typename T>
HtmlDecodeResult<T> decode_html(const net::TableModel<T>& model, const net::MemoryValues<T>& memory);

/// Next-token oracle for the cell decoders: for each read row of `in`,
/// the greedy next token.
class CellScorer {
 public:
  virtual ~CellScorer() = default;
  virtual std::vector<TokenId> next_tokens(const net::CellInputs& in, std::span<const int> read_rows) = 0;
};

/// Scores with the cell decoder of a model for one image.
template <typename T>
class ModelCellScorer : public CellScorer {
 public:
  ModelCellScorer(const net::TableModel<T>& model, const net::MemoryValues<T>& memory, Mat<T> cell_features)
      : model_(&model), memory_(&memory), features_(std::move(cell_features)) {}

  std::vector<TokenId> next_tokens(const net::CellInputs& in, std::span<const int> read_rows) override;

 private:
  const net::TableModel<T>* model_;
  const net::MemoryValues<T>* memory_;
  Mat<T> features_;
};

/// Interleaved buffer SOS (cell_1 SEP) ... (cell_n SEP) of the parallel decoder.
class DecodeState {
 public:
  explicit DecodeState(std::size_t cells);

  const std::vector<TokenId>& buffer() const { return buffer_; }
  std::size_t cells() const { return cursor_.size(); }
  /// Buffer index of the cell's trailing SEP.
  std::size_t cursor(std::size_t cell) const { return cursor_[cell]; }
  bool frozen(std::size_t cell) const { return frozen_[cell] != 0; }
  std::size_t length(std::size_t cell) const { return length_[cell]; }
  std::size_t passes() const { return passes_; }
  bool all_frozen() const;

  /// Inserts token before the cell's SEP and shifts later cursors. Throws
  /// std::logic_error for a frozen cell or a SEP token.
  void insert(std::size_t cell, TokenId token);
  void freeze(std::size_t cell);
  void count_pass() { ++passes_; }

  /// Decoder input: the buffer without its final SEP, with owners and
  /// per-cell offsets.
  net::CellInputs inputs() const;
  /// Position whose output predicts the cell's next token.
  int read_row(std::size_t cell) const { return static_cast<int>(cursor_[cell]) - 1; }

  std::vector<std::vector<TokenId>> contents() const;
  /// Throws std::logic_error when the buffer breaks the pattern or disagrees
  /// with the cursors and lengths.
  void check() const;

 private:
  std::vector<TokenId> buffer_;
  std::vector<std::size_t> cursor_;
  std::vector<std::uint8_t> frozen_;
  std::vector<std::size_t> length_;
  std::size_t passes_ = 0;
};

struct CellDecodeResult {
  std::vector<std::vector<TokenId>> cells;
  std::size_t passes = 0;
  bool truncated = false;
};

/// All unfrozen cells advance by one token per pass. `cap` bounds the buffer
/// length; when it binds every cell is frozen and the result is flagged.
/// `on_pass` sees the state after every pass.
CellDecodeResult decode_cells_parallel(CellScorer& scorer, std::size_t cells, std::size_t cap,
                                       const std::function<void(const DecodeState&)>& on_pass = {});

/// One token per pass over the single concatenated sequence.
CellDecodeResult decode_cells_sequential(CellScorer& scorer, std::size_t cells, std::size_t cap);

/// Cumulative wall time in seconds after each stage.
struct StageTimes {
  double html = 0;
  double bbox = 0;
  double cell = 0;
};

struct Recognition {
  std::string html;
  grammar::TokenSeq structure;
  std::vector<std::string> contents;
  std::vector<std::vector<TokenId>> cell_tokens;
  std::vector<net::CellBox> boxes;
  StageTimes times;
  std::size_t html_passes = 0;
  std::size_t cell_passes = 0;
  bool structure_truncated = false;
  bool content_truncated = false;
};

/// encode, decode structure, fetch, refine, boxes, decode contents, render.
/// The image is padded to a square and resized to the model side.
template <typename T>
Recognition recognize(const net::TableModel<T>& model, const Image& image, bool parallel);

/// Structure features for decoded tokens: refined cell features and boxes.
template <typename T>
struct CellStage {
  Mat<T> features;  // cell decoder conditioning, one row per cell
  std::vector<net::CellBox> boxes;
};

template <typename T>
CellStage<T> cell_stage(const net::TableModel<T>& model, const Mat<T>& hidden, std::span<const std::size_t> anchors);

}  // namespace tabrec::infer
