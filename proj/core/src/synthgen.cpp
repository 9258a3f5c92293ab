#include "tabrec/synthgen.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <unordered_map>

#include <nlohmann/json.hpp>

namespace tabrec::synth {

namespace {

using Bitmap = std::array<std::uint8_t, kGlyphW * kGlyphH>;

Bitmap parse_glyph(const char* rows) {
  // 7 rows of 5 characters, '#' = ink.
  Bitmap b{};
  for (int i = 0; i < kGlyphW * kGlyphH; ++i) b[static_cast<std::size_t>(i)] = rows[i] == '#' ? 1 : 0;
  return b;
}

const std::unordered_map<char, Bitmap>& font() {
  static const std::unordered_map<char, Bitmap> f = [] {
    const std::pair<char, const char*> raw[] = {
        {'a', ".###.#...##...#######...##...##...#"}, {'b', "####.#...##...#####.#...##...#####."},
        {'c', ".###.#...##....#....#....#...#.###."}, {'d', "####.#...##...##...##...##...#####."},
        {'e', "######....#....####.#....#....#####"}, {'f', "######....#....####.#....#....#...."},
        {'g', ".###.#...##....#.####...##...#.####"}, {'h', "#...##...##...#######...##...##...#"},
        {'i', ".###...#....#....#....#....#...###."}, {'j', "..###...#....#....#....#.#..#..##.."},
        {'k', "#...##..#.#.#..##...#.#..#..#.#...#"}, {'l', "#....#....#....#....#....#....#####"},
        {'m', "#...###.###.#.##.#.##...##...##...#"}, {'n', "#...##...###..##.#.##..###...##...#"},
        {'o', ".###.#...##...##...##...##...#.###."}, {'p', "####.#...##...#####.#....#....#...."},
        {'q', ".###.#...##...##...##.#.##..#..##.#"}, {'r', "####.#...##...#####.#.#..#..#.#...#"},
        {'s', ".#####....#.....###.....#....#####."}, {'t', "#####..#....#....#....#....#....#.."},
        {'u', "#...##...##...##...##...##...#.###."}, {'v', "#...##...##...##...##...#.#.#...#.."},
        {'w', "#...##...##...##.#.##.#.##.#.#.#.#."}, {'x', "#...##...#.#.#...#...#.#.#...##...#"},
        {'y', "#...##...#.#.#...#....#....#....#.."}, {'z', "#####....#...#...#...#...#....#####"},
        {'0', ".###.#...##..###.#.###..##...#.###."}, {'1', "..#...##....#....#....#....#...###."},
        {'2', ".###.#...#....#...#...#...#...#####"}, {'3', "#####...#...#.....#.....##...#.###."},
        {'4', "...#...##..#.#.#..#.#####...#....#."}, {'5', "######....####.....#....##...#.###."},
        {'6', "..##..#...#....####.#...##...#.###."}, {'7', "#####....#...#...#...#....#....#..."},
        {'8', ".###.#...##...#.###.#...##...#.###."}, {'9', ".###.#...##...#.####....#...#..##.."},
        {' ', "..................................."}, {'.', "..........................##...##.."},
        {',', ".....................##....#...#..."}, {'-', "...............#####..............."},
        {'%', "##...##..#...#...#...#...#..##...##"}, {'$', "..#...#####.#...###...#.#####...#.."},
        {'(', "...#...#...#....#....#.....#.....#."}, {')', ".#.....#.....#....#....#...#...#..."},
    };
    std::unordered_map<char, Bitmap> m;
    for (const auto& [c, rows] : raw) {
      if (std::char_traits<char>::length(rows) != static_cast<std::size_t>(kGlyphW * kGlyphH))
        throw std::logic_error(std::string("bad glyph for '") + c + "'");
      m.emplace(c, parse_glyph(rows));
    }
    return m;
  }();
  return f;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

bool bernoulli(std::mt19937_64& rng, double p) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p;
}

std::string random_content(std::mt19937_64& rng, int len) {
  const std::string_view alpha = grammar::content_alphabet();
  std::string printable;
  for (char c : alpha)
    if (c != ' ') printable.push_back(c);
  std::string s;
  for (int i = 0; i < len; ++i) {
    const bool interior = i > 0 && i + 1 < len && s.back() != ' ';
    if (interior && bernoulli(rng, 0.15)) {
      s.push_back(' ');
    } else {
      s.push_back(printable[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(printable.size()) - 1))]);
    }
  }
  return s;
}

void hline(Image& img, int y, int x0, int x1) {
  y = std::min(y, img.height - 1);
  for (int x = std::max(0, x0); x <= std::min(x1, img.width - 1); ++x) img.set_gray(x, y, 0);
}

void vline(Image& img, int x, int y0, int y1) {
  x = std::min(x, img.width - 1);
  for (int y = std::max(0, y0); y <= std::min(y1, img.height - 1); ++y) img.set_gray(x, y, 0);
}

// One attempt at laying out the table; returns false when the contents do not fit.
bool try_generate(const TableSpec& spec, std::mt19937_64& rng, TableRecord& rec) {
  const int grid = spec.side / kSlot;
  const int R = spec.rows;
  const int C = spec.cols;

  std::vector<int> owner(static_cast<std::size_t>(R * C), -1);
  std::vector<CellGeometry> cells;
  for (int r = 0; r < R; ++r) {
    for (int c = 0; c < C; ++c) {
      if (owner[static_cast<std::size_t>(r * C + c)] >= 0) continue;
      int rs = 1, cs = 1;
      if (spec.merge_prob > 0 && bernoulli(rng, spec.merge_prob)) {
        rs = uniform_int(rng, 1, std::min(3, R - r));
        cs = uniform_int(rng, 1, std::min(3, C - c));
        bool free = true;
        for (int rr = r; rr < r + rs; ++rr)
          for (int cc = c; cc < c + cs; ++cc) free = free && owner[static_cast<std::size_t>(rr * C + cc)] < 0;
        if (!free) rs = cs = 1;
      }
      const int id = static_cast<int>(cells.size());
      for (int rr = r; rr < r + rs; ++rr)
        for (int cc = c; cc < c + cs; ++cc) owner[static_cast<std::size_t>(rr * C + cc)] = id;
      cells.push_back({r, c, rs, cs, 0, 0, 0, 0});
    }
  }

  std::vector<std::string> contents;
  for (std::size_t i = 0; i < cells.size(); ++i)
    contents.push_back(random_content(rng, uniform_int(rng, spec.len_min, spec.len_max)));

  // Columns share the width evenly; leftover slots go to the leftmost columns.
  if (C > grid) return false;
  std::vector<int> width(static_cast<std::size_t>(C), grid / C);
  for (int c = 0; c < grid % C; ++c) ++width[static_cast<std::size_t>(c)];

  auto cell_width = [&](const CellGeometry& g) {
    int w = 0;
    for (int c = g.col; c < g.col + g.colspan; ++c) w += width[static_cast<std::size_t>(c)];
    return w;
  };
  auto lines_needed = [&](std::size_t i) {
    const int len = static_cast<int>(contents[i].size());
    const int w = cell_width(cells[i]);
    return std::max(1, (len + w - 1) / w);
  };

  std::vector<int> height(static_cast<std::size_t>(R), 1);
  for (std::size_t i = 0; i < cells.size(); ++i)
    if (cells[i].rowspan == 1)
      height[static_cast<std::size_t>(cells[i].row)] = std::max(height[static_cast<std::size_t>(cells[i].row)], lines_needed(i));
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cells[i].rowspan == 1) continue;
    int have = 0;
    for (int r = cells[i].row; r < cells[i].row + cells[i].rowspan; ++r) have += height[static_cast<std::size_t>(r)];
    const int need = lines_needed(i);
    if (need > have) height[static_cast<std::size_t>(cells[i].row + cells[i].rowspan - 1)] += need - have;
  }
  int total_h = 0;
  for (int h : height) total_h += h;
  if (total_h > grid) return false;

  const int oy = uniform_int(rng, 0, grid - total_h);
  std::vector<int> xs(static_cast<std::size_t>(C + 1), 0), ys(static_cast<std::size_t>(R + 1), oy);
  for (int c = 0; c < C; ++c) xs[static_cast<std::size_t>(c + 1)] = xs[static_cast<std::size_t>(c)] + width[static_cast<std::size_t>(c)];
  for (int r = 0; r < R; ++r) ys[static_cast<std::size_t>(r + 1)] = ys[static_cast<std::size_t>(r)] + height[static_cast<std::size_t>(r)];
  for (auto& g : cells) {
    g.x0 = xs[static_cast<std::size_t>(g.col)];
    g.x1 = xs[static_cast<std::size_t>(g.col + g.colspan)];
    g.y0 = ys[static_cast<std::size_t>(g.row)];
    g.y1 = ys[static_cast<std::size_t>(g.row + g.rowspan)];
  }

  Image img(spec.side, spec.side, 255);
  if (spec.borders) {
    for (const auto& g : cells) {
      const int px0 = g.x0 * kSlot, px1 = g.x1 * kSlot, py0 = g.y0 * kSlot, py1 = g.y1 * kSlot;
      hline(img, py0, px0, px1);
      hline(img, py1, px0, px1);
      vline(img, px0, py0, py1);
      vline(img, px1, py0, py1);
    }
  }

  const auto& ids = grammar::structure_ids();
  grammar::TokenSeq structure;
  structure.vocab = grammar::VocabKind::kStructure;
  std::vector<std::string> ordered_contents;
  std::vector<net::CellBox> boxes;
  std::vector<CellGeometry> ordered_cells;
  bool complex = false;
  // Cells were created in reading order (row-major over their top-left corner).
  for (int r = 0; r < R; ++r) {
    structure.ids.push_back(ids.tr_open);
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const auto& g = cells[i];
      if (g.row != r) continue;
      if (g.rowspan == 1 && g.colspan == 1) {
        structure.ids.push_back(ids.td_merged);
      } else {
        complex = true;
        structure.ids.push_back(ids.td_open);
        if (g.colspan > 1) structure.ids.push_back(ids.colspan(g.colspan));
        if (g.rowspan > 1) structure.ids.push_back(ids.rowspan(g.rowspan));
        structure.ids.push_back(ids.close_bracket);
        structure.ids.push_back(ids.td_end);
      }
      const std::string& text = contents[i];
      const int w = cell_width(g);
      draw_text(img, text, g.x0, g.y0, w);
      double bx0 = 1e9, by0 = 1e9, bx1 = -1, by1 = -1;
      for (std::size_t k = 0; k < text.size(); ++k) {
        if (text[k] == ' ') continue;
        const int sx = g.x0 + static_cast<int>(k) % w;
        const int sy = g.y0 + static_cast<int>(k) / w;
        bx0 = std::min<double>(bx0, sx * kSlot + kGlyphX);
        by0 = std::min<double>(by0, sy * kSlot + kGlyphY);
        bx1 = std::max<double>(bx1, sx * kSlot + kGlyphX + kGlyphW);
        by1 = std::max<double>(by1, sy * kSlot + kGlyphY + kGlyphH);
      }
      if (bx1 < 0) {  // empty cell: the whole cell area
        bx0 = g.x0 * kSlot;
        by0 = g.y0 * kSlot;
        bx1 = g.x1 * kSlot;
        by1 = g.y1 * kSlot;
      }
      boxes.push_back(net::normalize_box(bx0, by0, bx1, by1, spec.side));
      ordered_contents.push_back(text);
      ordered_cells.push_back(g);
    }
    structure.ids.push_back(ids.tr_close);
  }

  rec.image = std::move(img);
  rec.structure = std::move(structure);
  rec.contents = std::move(ordered_contents);
  rec.boxes = std::move(boxes);
  rec.geometry = std::move(ordered_cells);
  rec.complex = complex;
  return true;
}

}  // namespace

const std::array<std::uint8_t, kGlyphW * kGlyphH>& glyph(char c) {
  const auto& f = font();
  auto it = f.find(c);
  if (it == f.end()) throw std::out_of_range(std::string("no glyph for character '") + c + "'");
  return it->second;
}

void draw_text(Image& img, const std::string& text, int sx, int sy, int width) {
  if (width <= 0) throw std::invalid_argument("draw_text: width must be positive");
  for (std::size_t k = 0; k < text.size(); ++k) {
    const auto& bm = glyph(text[k]);
    const int px = (sx + static_cast<int>(k) % width) * kSlot + kGlyphX;
    const int py = (sy + static_cast<int>(k) / width) * kSlot + kGlyphY;
    for (int y = 0; y < kGlyphH; ++y)
      for (int x = 0; x < kGlyphW; ++x)
        if (bm[static_cast<std::size_t>(y * kGlyphW + x)] && px + x < img.width && py + y < img.height)
          img.set_gray(px + x, py + y, 0);
  }
}

PresetSpec PresetSpec::wide(int side) {
  PresetSpec p;
  p.name = "wide";
  p.rows_min = 2;
  p.rows_max = 4;
  p.cols_min = 2;
  p.cols_max = 3;
  p.merge_prob = 0.1;
  p.len_min = 4;
  p.len_max = 14;
  p.border_prob = 1.0;
  p.side = side;
  return p;
}

PresetSpec PresetSpec::dense(int side) {
  PresetSpec p;
  p.name = "dense";
  p.rows_min = 5;
  p.rows_max = 5;
  p.cols_min = 4;
  p.cols_max = 4;
  p.merge_prob = 0.0;
  p.len_min = 7;
  p.len_max = 11;
  p.border_prob = 1.0;
  p.side = side;
  return p;
}

PresetSpec PresetSpec::named(const std::string& name, int side) {
  if (name == "wide") return wide(side);
  if (name == "dense") return dense(side);
  throw std::invalid_argument("unknown preset '" + name + "' (expected wide|dense)");
}

TableSpec PresetSpec::sample(std::uint64_t seed) const {
  std::mt19937_64 rng(splitmix64(seed ^ 0x5bd1e995ULL));
  TableSpec t;
  t.rows = uniform_int(rng, rows_min, rows_max);
  t.cols = uniform_int(rng, cols_min, cols_max);
  t.merge_prob = merge_prob;
  t.len_min = len_min;
  t.len_max = len_max;
  t.borders = bernoulli(rng, border_prob);
  t.side = side;
  return t;
}

TableRecord generate(const TableSpec& spec, std::uint64_t seed) {
  if (spec.rows < 1 || spec.cols < 1) throw std::invalid_argument("generate: rows and cols must be >= 1");
  if (spec.len_min < 0 || spec.len_max < spec.len_min) throw std::invalid_argument("generate: bad length range");
  if (spec.side <= 0 || spec.side % kSlot != 0) throw std::invalid_argument("generate: side must be a multiple of 8");
  std::mt19937_64 rng(splitmix64(seed));
  TableRecord rec;
  rec.seed = seed;
  constexpr int kAttempts = 1000;
  for (int attempt = 0; attempt < kAttempts; ++attempt)
    if (try_generate(spec, rng, rec)) return rec;
  throw std::runtime_error("generate: no feasible layout for " + std::to_string(spec.rows) + "x" +
                           std::to_string(spec.cols) + " table");
}

std::uint64_t sample_seed(std::uint64_t master, std::uint64_t index) {
  return splitmix64(splitmix64(master) + index);
}

std::vector<TableRecord> generate_corpus(const PresetSpec& preset, std::size_t n, std::uint64_t master_seed,
                                         unsigned workers) {
  std::vector<TableRecord> out(n);
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const std::uint64_t s = sample_seed(master_seed, i);
      out[i] = generate(preset.sample(s), s);
      std::ostringstream name;
      name << std::setw(5) << std::setfill('0') << i << ".ppm";
      out[i].filename = name.str();
    }
  };
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (workers == 1) {
    work(0, n);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + workers - 1) / workers;
    for (unsigned w = 0; w < workers; ++w) {
      const std::size_t b = w * chunk, e = std::min(n, b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
    for (auto& t : pool) t.join();
  }
  return out;
}

namespace {

nlohmann::json preset_json(const PresetSpec& p) {
  return {{"name", p.name},         {"rows_min", p.rows_min}, {"rows_max", p.rows_max},
          {"cols_min", p.cols_min}, {"cols_max", p.cols_max}, {"merge_prob", p.merge_prob},
          {"len_min", p.len_min},   {"len_max", p.len_max},   {"border_prob", p.border_prob},
          {"side", p.side}};
}

}  // namespace

void emit_corpus(const std::vector<TableRecord>& records, const PresetSpec& preset, std::uint64_t master_seed,
                 const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  std::ofstream ann(dir / "annotations.jsonl");
  if (!ann) throw std::runtime_error("cannot write annotations under " + dir.string());
  const auto& sv = grammar::Vocab::structure();
  for (const auto& r : records) {
    write_ppm(dir / "images" / r.filename, r.image);
    nlohmann::json j;
    j["filename"] = r.filename;
    std::vector<std::string> toks;
    for (auto id : r.structure.ids) toks.push_back(sv.token(id));
    j["structure"] = toks;
    nlohmann::json cells = nlohmann::json::array();
    for (std::size_t i = 0; i < r.contents.size(); ++i) {
      const auto& b = r.boxes[i];
      cells.push_back({{"content", r.contents[i]}, {"box", {b.cx, b.cy, b.w, b.h}}});
    }
    j["cells"] = cells;
    j["complex"] = r.complex;
    j["seed"] = r.seed;
    ann << j.dump() << '\n';
  }
  std::ofstream man(dir / "manifest.json");
  man << nlohmann::json{{"master_seed", master_seed}, {"count", records.size()}, {"preset", preset_json(preset)}}.dump(2)
      << '\n';
}

std::vector<TableRecord> load_corpus(const std::filesystem::path& dir) {
  std::ifstream ann(dir / "annotations.jsonl");
  if (!ann) throw std::runtime_error("cannot open " + (dir / "annotations.jsonl").string());
  const auto& sv = grammar::Vocab::structure();
  std::vector<TableRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ann, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      TableRecord r;
      r.filename = j.at("filename").get<std::string>();
      r.structure.vocab = grammar::VocabKind::kStructure;
      for (const auto& t : j.at("structure")) r.structure.ids.push_back(sv.id(t.get<std::string>()));
      for (const auto& c : j.at("cells")) {
        r.contents.push_back(c.at("content").get<std::string>());
        const auto& b = c.at("box");
        r.boxes.push_back({b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>()});
      }
      r.complex = j.value("complex", grammar::has_spans(r.structure.ids));
      r.seed = j.value("seed", std::uint64_t{0});
      r.image = read_ppm(dir / "images" / r.filename);
      if (grammar::count_cells(r.structure.ids) != r.contents.size())
        throw std::runtime_error("cell count does not match structure");
      out.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw std::runtime_error((dir / "annotations.jsonl").string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace tabrec::synth
