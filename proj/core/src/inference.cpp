#include "tabrec/inference.hpp"

#include <algorithm>
#include <chrono>
#include <limits>
#include <stdexcept>

namespace tabrec::infer {

using attn::Graph;
using attn::Var;

std::vector<TokenId> repair_structure(std::span<const TokenId> tokens, std::vector<std::size_t>* kept) {
  const auto& v = grammar::Vocab::structure();
  const auto& s = grammar::structure_ids();
  constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

  std::vector<TokenId> out;
  std::vector<std::size_t> src;
  TokenId section = -1;  // open thead/tbody, if any
  bool in_tr = false;
  enum class Td { kNone, kTag, kBody } td = Td::kNone;
  std::size_t td_start = 0;  // index into out of the open "<td"
  bool has_col = false, has_row = false;

  auto keep = [&](TokenId t, std::size_t i) {
    out.push_back(t);
    src.push_back(i);
  };
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const TokenId t = tokens[i];
    if (t == v.eos()) break;
    if (td == Td::kTag) {
      if (s.is_colspan(t) && !has_col && !has_row) {
        has_col = true;
        keep(t, i);
      } else if (s.is_rowspan(t) && !has_row) {
        has_row = true;
        keep(t, i);
      } else if (t == s.close_bracket) {
        td = Td::kBody;
        keep(t, i);
      }
      continue;
    }
    if (td == Td::kBody) {
      if (t == s.td_end) {
        td = Td::kNone;
        keep(t, i);
      }
      continue;
    }
    if (t == s.td_merged && in_tr) {
      keep(t, i);
    } else if (t == s.td_open && in_tr) {
      td = Td::kTag;
      td_start = out.size();
      has_col = has_row = false;
      keep(t, i);
    } else if (t == s.tr_open && !in_tr) {
      in_tr = true;
      keep(t, i);
    } else if (t == s.tr_close && in_tr) {
      in_tr = false;
      keep(t, i);
    } else if ((t == s.thead_open || t == s.tbody_open) && section < 0 && !in_tr) {
      section = t;
      keep(t, i);
    } else if (((t == s.thead_close && section == s.thead_open) || (t == s.tbody_close && section == s.tbody_open)) &&
               !in_tr) {
      section = -1;
      keep(t, i);
    }
  }
  if (td != Td::kNone) {
    out.resize(td_start);
    src.resize(td_start);
  }
  if (in_tr) keep(s.tr_close, npos);
  if (section == s.thead_open) keep(s.thead_close, npos);
  if (section == s.tbody_open) keep(s.tbody_close, npos);
  if (kept) *kept = std::move(src);
  return out;
}

template <typename T>
HtmlDecodeResult<T> decode_html(const net::TableModel<T>& model, const net::MemoryValues<T>& memory) {
  const auto eos = grammar::Vocab::structure().eos();
  const auto cap = static_cast<std::size_t>(model.config().structure_cap);
  HtmlDecodeResult<T> r;
  r.structure.vocab = grammar::VocabKind::kStructure;
  r.structure.direction = grammar::Direction::kLtoR;
  std::vector<TokenId> tokens;
  for (;;) {
    Graph<T> g = model.inference_graph();
    const net::Memory<T> mem = model.memory_constants(g, memory);
    const net::HtmlOutput out = model.html_decoder(g, mem, tokens, grammar::Direction::kLtoR);
    ++r.passes;
    const Mat<T>& logits = g.value(out.logits);
    const TokenId next = argmax_row(logits, logits.rows() - 1);
    if (next == eos || tokens.size() >= cap) {
      r.truncated = next != eos;
      r.hidden = g.value(out.hidden);
      break;
    }
    tokens.push_back(next);
  }
  r.structure.ids = std::move(tokens);
  return r;
}

template <typename T>
std::vector<TokenId> ModelCellScorer<T>::next_tokens(const net::CellInputs& in, std::span<const int> read_rows) {
  Graph<T> g = model_->inference_graph();
  const net::Memory<T> mem = model_->memory_constants(g, *memory_);
  Var feat = g.constant(features_);
  Var logits = model_->cell_decoder(g, mem, in, feat, read_rows);
  const Mat<T>& lv = g.value(logits);
  std::vector<TokenId> out(read_rows.size());
  for (std::size_t i = 0; i < read_rows.size(); ++i) out[i] = argmax_row(lv, static_cast<Eigen::Index>(i));
  return out;
}

DecodeState::DecodeState(std::size_t cells)
    : cursor_(cells), frozen_(cells, 0), length_(cells, 0) {
  const auto& v = grammar::Vocab::content();
  buffer_.push_back(v.sos());
  for (std::size_t c = 0; c < cells; ++c) {
    cursor_[c] = buffer_.size();
    buffer_.push_back(v.sep());
  }
}

bool DecodeState::all_frozen() const {
  return std::all_of(frozen_.begin(), frozen_.end(), [](std::uint8_t f) { return f != 0; });
}

void DecodeState::insert(std::size_t cell, TokenId token) {
  if (cell >= cells()) throw std::out_of_range("DecodeState::insert: no such cell");
  if (frozen_[cell]) throw std::logic_error("DecodeState::insert: cell is frozen");
  if (token == grammar::Vocab::content().sep()) throw std::logic_error("DecodeState::insert: SEP is not content");
  buffer_.insert(buffer_.begin() + static_cast<std::ptrdiff_t>(cursor_[cell]), token);
  for (std::size_t c = cell; c < cells(); ++c) ++cursor_[c];
  ++length_[cell];
}

void DecodeState::freeze(std::size_t cell) { frozen_.at(cell) = 1; }

net::CellInputs DecodeState::inputs() const {
  const TokenId sep = grammar::Vocab::content().sep();
  const std::size_t n = buffer_.size() - 1;
  net::CellInputs in;
  in.tokens.assign(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(n));
  in.cells.resize(n);
  in.rel.resize(n);
  int seps = 0;
  for (std::size_t p = 0; p < n; ++p) {
    if (buffer_[p] == sep) ++seps;
    in.cells[p] = seps;
    in.rel[p] = (p > 0 && in.cells[p] == in.cells[p - 1]) ? in.rel[p - 1] + 1 : 0;
  }
  return in;
}

std::vector<std::vector<TokenId>> DecodeState::contents() const {
  std::vector<std::vector<TokenId>> out(cells());
  for (std::size_t c = 0; c < cells(); ++c) {
    const std::size_t end = cursor_[c];
    const std::size_t begin = end - length_[c];
    out[c].assign(buffer_.begin() + static_cast<std::ptrdiff_t>(begin), buffer_.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

void DecodeState::check() const {
  const auto& v = grammar::Vocab::content();
  if (buffer_.empty() || buffer_[0] != v.sos()) throw std::logic_error("DecodeState: buffer must start with SOS");
  std::size_t pos = 1;
  for (std::size_t c = 0; c < cells(); ++c) {
    for (std::size_t k = 0; k < length_[c]; ++k, ++pos) {
      if (pos >= buffer_.size()) throw std::logic_error("DecodeState: buffer too short");
      const TokenId t = buffer_[pos];
      if (t == v.sep() || t == v.sos()) throw std::logic_error("DecodeState: separator inside a cell");
    }
    if (pos >= buffer_.size() || buffer_[pos] != v.sep() || cursor_[c] != pos)
      throw std::logic_error("DecodeState: cell " + std::to_string(c) + " is not closed by SEP at its cursor");
    ++pos;
  }
  if (pos != buffer_.size()) throw std::logic_error("DecodeState: trailing tokens after the last SEP");
}

CellDecodeResult decode_cells_parallel(CellScorer& scorer, std::size_t cells, std::size_t cap,
                                       const std::function<void(const DecodeState&)>& on_pass) {
  const TokenId sep = grammar::Vocab::content().sep();
  CellDecodeResult r;
  DecodeState st(cells);
  if (cells > 0 && st.buffer().size() > cap) {
    for (std::size_t c = 0; c < cells; ++c) st.freeze(c);
    r.truncated = true;
  }
  while (!st.all_frozen()) {
    std::vector<std::size_t> active;
    std::vector<int> rows;
    for (std::size_t c = 0; c < cells; ++c)
      if (!st.frozen(c)) {
        active.push_back(c);
        rows.push_back(st.read_row(c));
      }
    const std::vector<TokenId> next = scorer.next_tokens(st.inputs(), rows);
    st.count_pass();
    for (std::size_t k = 0; k < active.size(); ++k) {
      const std::size_t c = active[k];
      if (next[k] == sep) {
        st.freeze(c);
      } else if (st.buffer().size() >= cap) {
        for (std::size_t all = 0; all < cells; ++all) st.freeze(all);
        r.truncated = true;
        break;
      } else {
        st.insert(c, next[k]);
      }
    }
    if (on_pass) on_pass(st);
  }
  r.cells = st.contents();
  r.passes = st.passes();
  return r;
}

CellDecodeResult decode_cells_sequential(CellScorer& scorer, std::size_t cells, std::size_t cap) {
  const auto& v = grammar::Vocab::content();
  CellDecodeResult r;
  r.cells.resize(cells);
  if (cells == 0) return r;
  net::CellInputs in;
  in.tokens = {v.sos()};
  in.cells = {0};
  in.rel = {0};
  std::size_t cell = 0;
  while (cell < cells) {
    // The buffer so far is the input plus the pending SEPs of the remaining cells.
    if (in.tokens.size() + (cells - cell) > cap) {
      r.truncated = true;
      break;
    }
    const int read = static_cast<int>(in.tokens.size()) - 1;
    const TokenId next = scorer.next_tokens(in, std::span<const int>(&read, 1)).at(0);
    ++r.passes;
    const bool close = next == v.sep();
    if (!close && in.tokens.size() + (cells - cell) >= cap) {
      r.truncated = true;
      break;
    }
    if (close) {
      ++cell;
      if (cell == cells) break;
    } else {
      r.cells[cell].push_back(next);
    }
    in.tokens.push_back(next);
    in.cells.push_back(static_cast<int>(cell));
    in.rel.push_back(close ? 0 : in.rel.back() + 1);
  }
  return r;
}

template <typename T>
CellStage<T> cell_stage(const net::TableModel<T>& model, const Mat<T>& hidden, std::span<const std::size_t> anchors) {
  CellStage<T> out;
  const int d = model.config().channels;
  if (anchors.empty()) {
    out.features = Mat<T>(0, d);
    return out;
  }
  Graph<T> g = model.inference_graph();
  Var h = g.constant(hidden);
  Var refined = model.refine(g, model.fetch_cells(g, h, anchors));
  Var boxes = model.bbox_head(g, refined);
  out.features = g.value(model.cell_conditioning(g, refined, boxes));
  const Mat<T>& bv = g.value(boxes);
  for (Eigen::Index i = 0; i < bv.rows(); ++i)
    out.boxes.push_back({double(bv(i, 0)), double(bv(i, 1)), double(bv(i, 2)), double(bv(i, 3))});
  return out;
}

template <typename T>
Recognition recognize(const net::TableModel<T>& model, const Image& image, bool parallel) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  auto since = [&] { return std::chrono::duration<double>(clock::now() - t0).count(); };

  Recognition r;
  const Image prepared = prepare_image(image, model.config().image_side);
  const net::MemoryValues<T> memory = model.memory_values(prepared);
  HtmlDecodeResult<T> html = decode_html(model, memory);
  r.html_passes = html.passes;
  r.structure_truncated = html.truncated;

  std::vector<std::size_t> source;
  std::vector<TokenId> repaired = repair_structure(html.structure.ids, &source);
  std::vector<std::size_t> anchors;
  for (std::size_t a : grammar::cell_anchors(repaired)) anchors.push_back(source[a]);
  r.structure.vocab = grammar::VocabKind::kStructure;
  r.structure.direction = grammar::Direction::kLtoR;
  r.structure.ids = std::move(repaired);
  r.times.html = since();

  CellStage<T> stage = cell_stage(model, html.hidden, anchors);
  r.boxes = stage.boxes;
  r.times.bbox = since();

  ModelCellScorer<T> scorer(model, memory, std::move(stage.features));
  const auto cap = static_cast<std::size_t>(model.config().content_cap);
  CellDecodeResult cells = parallel ? decode_cells_parallel(scorer, anchors.size(), cap)
                                    : decode_cells_sequential(scorer, anchors.size(), cap);
  r.cell_passes = cells.passes;
  r.content_truncated = cells.truncated;
  r.cell_tokens = std::move(cells.cells);
  for (const auto& ids : r.cell_tokens) {
    grammar::TokenSeq seq;
    seq.vocab = grammar::VocabKind::kContent;
    seq.ids = ids;
    r.contents.push_back(grammar::detokenize_content(seq));
  }
  r.html = grammar::render_html(r.structure, r.contents);
  r.times.cell = since();
  return r;
}

template HtmlDecodeResult<float> decode_html(const net::TableModel<float>&, const net::MemoryValues<float>&);
template HtmlDecodeResult<double> decode_html(const net::TableModel<double>&, const net::MemoryValues<double>&);
template class ModelCellScorer<float>;
template class ModelCellScorer<double>;
template CellStage<float> cell_stage(const net::TableModel<float>&, const Mat<float>&, std::span<const std::size_t>);
template CellStage<double> cell_stage(const net::TableModel<double>&, const Mat<double>&, std::span<const std::size_t>);
template Recognition recognize(const net::TableModel<float>&, const Image&, bool);
template Recognition recognize(const net::TableModel<double>&, const Image&, bool);

}  // namespace tabrec::infer
