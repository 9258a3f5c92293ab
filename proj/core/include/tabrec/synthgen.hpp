#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tabrec/htmlgrammar.hpp"
#include "tabrec/image.hpp"
#include "tabrec/netgraph.hpp"

namespace tabrec::synth {

/// Glyphs are drawn on a grid of kSlot x kSlot pixel slots, one character per
/// slot, aligned with the encoder's 8x downsampling.
inline constexpr int kSlot = 8;
inline constexpr int kGlyphW = 5;
inline constexpr int kGlyphH = 7;
inline constexpr int kGlyphX = 2;  // glyph offset inside its slot
inline constexpr int kGlyphY = 1;

/// 5x7 bitmap for a character of the content alphabet; row-major, 1 = ink.
/// Throws std::out_of_range for characters outside the alphabet.
const std::array<std::uint8_t, kGlyphW * kGlyphH>& glyph(char c);

/// Parameters of a single table.
struct TableSpec {
  int rows = 2;
  int cols = 2;
  double merge_prob = 0.0;
  int len_min = 1;
  int len_max = 8;
  bool borders = true;
  int side = 128;
};

/// Distribution over TableSpecs; presets mirror a few-long-cells corpus
/// ("wide") and a many-short-cells corpus ("dense").
struct PresetSpec {
  std::string name;
  int rows_min = 2, rows_max = 4;
  int cols_min = 2, cols_max = 3;
  double merge_prob = 0.1;
  int len_min = 4, len_max = 14;
  double border_prob = 1.0;
  int side = 128;

  static PresetSpec wide(int side = 128);
  static PresetSpec dense(int side = 128);
  static PresetSpec named(const std::string& name, int side = 128);

  TableSpec sample(std::uint64_t seed) const;
  double mean_length() const { return 0.5 * (len_min + len_max); }
};

/// One slot-aligned cell of the rendered grid.
struct CellGeometry {
  int row = 0, col = 0, rowspan = 1, colspan = 1;
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // slots, half-open
};

struct TableRecord {
  std::string filename;
  Image image;
  grammar::TokenSeq structure;
  std::vector<std::string> contents;  // reading order
  std::vector<net::CellBox> boxes;
  std::vector<CellGeometry> geometry;  // empty for records loaded from disk
  bool complex = false;
  std::uint64_t seed = 0;

  /// Ground-truth HTML with contents.
  std::string html() const { return grammar::render_html(structure, contents); }
};

/// Deterministic in (spec, seed). Infeasible layouts are redrawn from the
/// same seed stream. Throws std::invalid_argument for rows/cols < 1,
/// negative lengths, or a side that is not a multiple of kSlot.
TableRecord generate(const TableSpec& spec, std::uint64_t seed);

/// Seed for sample `index` of a corpus with the given master seed.
std::uint64_t sample_seed(std::uint64_t master, std::uint64_t index);

/// Generates n records of the preset (in memory), optionally on `workers` threads.
std::vector<TableRecord> generate_corpus(const PresetSpec& preset, std::size_t n, std::uint64_t master_seed,
                                         unsigned workers = 1);

/// Writes images/<id>.ppm, annotations.jsonl and manifest.json under dir.
void emit_corpus(const std::vector<TableRecord>& records, const PresetSpec& preset, std::uint64_t master_seed,
                 const std::filesystem::path& dir);
/// Reads a corpus written by emit_corpus.
std::vector<TableRecord> load_corpus(const std::filesystem::path& dir);

/// Renders text on the slot grid starting at slot (sx, sy), wrapping every
/// `width` characters.
void draw_text(Image& img, const std::string& text, int sx, int sy, int width);

}  // namespace tabrec::synth
