#include <gtest/gtest.h>

#include <fstream>
#include <nlohmann/json.hpp>

#include "support.hpp"
#include "tabrec/synthgen.hpp"
#include "tabrec/teds.hpp"

using namespace tabrec;
using namespace tabrec::synth;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool ink(const Image& img, int x, int y) { return img.at(x, y)[0] < 128; }

}  // namespace

TEST(Generate, SingleCell) {
  TableSpec spec;
  spec.rows = spec.cols = 1;
  spec.len_min = spec.len_max = 1;
  auto rec = generate(spec, 3);
  const auto& s = grammar::structure_ids();
  EXPECT_EQ(rec.structure.ids, (std::vector<grammar::TokenId>{s.tr_open, s.td_merged, s.tr_close}));
  ASSERT_EQ(rec.contents.size(), 1u);
  EXPECT_EQ(rec.contents[0].size(), 1u);
  ASSERT_EQ(rec.boxes.size(), 1u);
  ASSERT_EQ(rec.geometry.size(), 1u);
  const auto& g = rec.geometry[0];
  // The box lies within the cell's rectangle.
  const auto& b = rec.boxes[0];
  const double side = spec.side;
  EXPECT_GE(b.cx - b.w / 2, g.x0 * kSlot / side - 1e-12);
  EXPECT_LE(b.cx + b.w / 2, g.x1 * kSlot / side + 1e-12);
  EXPECT_GE(b.cy - b.h / 2, g.y0 * kSlot / side - 1e-12);
  EXPECT_LE(b.cy + b.h / 2, g.y1 * kSlot / side + 1e-12);
  EXPECT_FALSE(rec.complex);
}

TEST(Generate, NoMergesMeansSimple) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    TableSpec spec;
    spec.rows = 3;
    spec.cols = 3;
    spec.merge_prob = 0;
    spec.len_min = 0;
    spec.len_max = 6;
    auto rec = generate(spec, seed);
    EXPECT_FALSE(rec.complex);
    EXPECT_EQ(teds::classify(teds::html_to_tree(rec.html(), teds::Mode::kStructural)), teds::TableClass::kSimple);
    EXPECT_EQ(rec.contents.size(), 9u);
  }
}

TEST(Generate, Deterministic) {
  TableSpec spec = PresetSpec::wide().sample(9);
  auto a = generate(spec, 9), b = generate(spec, 9), c = generate(spec, 10);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.structure, b.structure);
  EXPECT_EQ(a.contents, b.contents);
  EXPECT_EQ(a.boxes, b.boxes);
  EXPECT_FALSE(a.image == c.image && a.contents == c.contents);
}

TEST(Generate, InvalidSpecRejected) {
  TableSpec spec;
  spec.rows = 0;
  EXPECT_THROW(generate(spec, 0), std::invalid_argument);
  spec = TableSpec{};
  spec.len_min = -1;
  EXPECT_THROW(generate(spec, 0), std::invalid_argument);
  spec = TableSpec{};
  spec.side = 100;
  EXPECT_THROW(generate(spec, 0), std::invalid_argument);
}

TEST(Generate, RecordInvariants) {
  for (const char* preset : {"wide", "dense"}) {
    auto recs = generate_corpus(PresetSpec::named(preset), 200, 77, 3);
    for (const auto& r : recs) {
      EXPECT_EQ(grammar::count_cells(r.structure.ids), r.contents.size());
      EXPECT_EQ(r.boxes.size(), r.contents.size());
      for (const auto& b : r.boxes)
        for (double v : {b.cx, b.cy, b.w, b.h}) {
          EXPECT_GE(v, 0.0);
          EXPECT_LE(v, 1.0);
        }
      const std::string html = r.html();
      EXPECT_NO_THROW(grammar::tokenize_structure(grammar::detokenize_structure(r.structure)));
      const auto tree = teds::html_to_tree(html, teds::Mode::kStructural);
      EXPECT_EQ(teds::classify(tree) == teds::TableClass::kComplex, r.complex);
      for (const auto& c : r.contents) EXPECT_EQ(grammar::detokenize_content(grammar::tokenize_content(c)), c);
    }
  }
}

TEST(Generate, BoxesMatchRenderedInk) {
  auto recs = generate_corpus(PresetSpec::wide(), 100, 5);
  const double tol = double(kSlot) / 128.0;  // one feature-grid pixel
  for (const auto& r : recs) {
    ASSERT_EQ(r.geometry.size(), r.boxes.size());
    for (std::size_t i = 0; i < r.boxes.size(); ++i) {
      const auto& g = r.geometry[i];
      int x0 = 1 << 20, y0 = 1 << 20, x1 = -1, y1 = -1;
      // Borders on the image edge are clamped onto the last pixel.
      for (int y = g.y0 * kSlot + 1; y < g.y1 * kSlot && y < r.image.height - 1; ++y)
        for (int x = g.x0 * kSlot + 1; x < g.x1 * kSlot && x < r.image.width - 1; ++x)
          if (ink(r.image, x, y)) {
            x0 = std::min(x0, x);
            y0 = std::min(y0, y);
            x1 = std::max(x1, x + 1);
            y1 = std::max(y1, y + 1);
          }
      net::CellBox measured;
      if (x1 < 0)
        measured = net::normalize_box(g.x0 * kSlot, g.y0 * kSlot, g.x1 * kSlot, g.y1 * kSlot, 128);
      else
        measured = net::normalize_box(x0, y0, x1, y1, 128);
      const auto& b = r.boxes[i];
      EXPECT_NEAR(measured.cx, b.cx, tol);
      EXPECT_NEAR(measured.cy, b.cy, tol);
      EXPECT_NEAR(measured.w, b.w, tol);
      EXPECT_NEAR(measured.h, b.h, tol);
    }
  }
}

TEST(Generate, LengthStatisticsMatchPreset) {
  for (const char* name : {"wide", "dense"}) {
    const PresetSpec p = PresetSpec::named(name);
    auto recs = generate_corpus(p, 1000, 1234, 4);
    double sum = 0;
    std::size_t cells = 0;
    for (const auto& r : recs)
      for (const auto& c : r.contents) {
        sum += double(c.size());
        ++cells;
        EXPECT_GE(static_cast<int>(c.size()), p.len_min);
        EXPECT_LE(static_cast<int>(c.size()), p.len_max);
      }
    const double mean = sum / double(cells);
    EXPECT_NEAR(mean, p.mean_length(), 0.1 * p.mean_length()) << name;
  }
}

TEST(Generate, DensePresetShape) {
  auto recs = generate_corpus(PresetSpec::dense(), 50, 8);
  for (const auto& r : recs) EXPECT_GE(r.contents.size(), 20u);
  double sum = 0, n = 0;
  for (const auto& r : recs)
    for (const auto& c : r.contents) {
      sum += double(c.size());
      n += 1;
    }
  EXPECT_GE(sum / n, 8.0);
}

TEST(Generate, GlyphsForWholeAlphabet) {
  for (char c : grammar::content_alphabet()) EXPECT_NO_THROW(glyph(c));
  EXPECT_THROW(glyph('Z'), std::out_of_range);
  const auto& sp = glyph(' ');
  EXPECT_EQ(std::count(sp.begin(), sp.end(), 1), 0);
}

TEST(Corpus, SeedsDependOnIndexAndMaster) {
  EXPECT_NE(sample_seed(1, 0), sample_seed(1, 1));
  EXPECT_NE(sample_seed(1, 0), sample_seed(2, 0));
  EXPECT_EQ(sample_seed(5, 7), sample_seed(5, 7));
}

TEST(Corpus, WorkersDoNotChangeOutput) {
  auto a = generate_corpus(PresetSpec::wide(), 30, 4, 1);
  auto b = generate_corpus(PresetSpec::wide(), 30, 4, 5);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].filename, b[i].filename);
    EXPECT_EQ(a[i].image, b[i].image);
    EXPECT_EQ(a[i].contents, b[i].contents);
  }
}

TEST(Corpus, EmitEmpty) {
  auto dir = fixtures::scratch_dir("emit_empty");
  emit_corpus({}, PresetSpec::wide(), 1, dir);
  EXPECT_TRUE(std::filesystem::exists(dir / "annotations.jsonl"));
  EXPECT_EQ(std::filesystem::file_size(dir / "annotations.jsonl"), 0u);
  EXPECT_TRUE(load_corpus(dir).empty());
}

TEST(Corpus, EmitLoadAndRerun) {
  auto dir = fixtures::scratch_dir("emit_100");
  auto recs = generate_corpus(PresetSpec::wide(), 100, 21, 2);
  emit_corpus(recs, PresetSpec::wide(), 21, dir);
  std::size_t images = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir / "images")) images += e.path().extension() == ".ppm";
  EXPECT_EQ(images, 100u);
  std::ifstream ann(dir / "annotations.jsonl");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(ann, line)) {
    auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("filename"));
    EXPECT_TRUE(j["structure"].is_array());
    EXPECT_TRUE(j["cells"].is_array());
    ++lines;
  }
  EXPECT_EQ(lines, 100u);
  auto manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
  EXPECT_EQ(manifest["master_seed"], 21);
  EXPECT_EQ(manifest["count"], 100);

  auto loaded = load_corpus(dir);
  ASSERT_EQ(loaded.size(), recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(loaded[i].image, recs[i].image);
    EXPECT_EQ(loaded[i].structure, recs[i].structure);
    EXPECT_EQ(loaded[i].contents, recs[i].contents);
    EXPECT_EQ(loaded[i].complex, recs[i].complex);
    for (std::size_t k = 0; k < recs[i].boxes.size(); ++k) {
      EXPECT_NEAR(loaded[i].boxes[k].cx, recs[i].boxes[k].cx, 1e-12);
      EXPECT_NEAR(loaded[i].boxes[k].h, recs[i].boxes[k].h, 1e-12);
    }
  }

  auto dir2 = fixtures::scratch_dir("emit_100_again");
  emit_corpus(generate_corpus(PresetSpec::wide(), 100, 21, 1), PresetSpec::wide(), 21, dir2);
  EXPECT_EQ(slurp(dir / "annotations.jsonl"), slurp(dir2 / "annotations.jsonl"));
  EXPECT_EQ(slurp(dir / "manifest.json"), slurp(dir2 / "manifest.json"));
  EXPECT_EQ(slurp(dir / "images" / "00042.ppm"), slurp(dir2 / "images" / "00042.ppm"));
}

TEST(Corpus, LoadErrors) {
  auto dir = fixtures::scratch_dir("emit_bad");
  EXPECT_THROW(load_corpus(dir), std::runtime_error);
  std::filesystem::create_directories(dir / "images");
  std::ofstream(dir / "annotations.jsonl") << "{not json}\n";
  EXPECT_THROW(load_corpus(dir), std::runtime_error);
}

TEST(Image, PadResizePpmRoundTrip) {
  Image img(5, 3, 255);
  img.set_gray(1, 2, 0);
  Image sq = pad_to_square(img);
  EXPECT_EQ(sq.width, 5);
  EXPECT_EQ(sq.height, 5);
  EXPECT_EQ(sq.at(1, 2)[0], 0);
  EXPECT_EQ(sq.at(4, 4)[0], 0);
  auto dir = fixtures::scratch_dir("ppm");
  write_ppm(dir / "x.ppm", sq);
  EXPECT_EQ(read_ppm(dir / "x.ppm"), sq);
  Image big = prepare_image(img, 16);
  EXPECT_EQ(big.width, 16);
  EXPECT_EQ(big.height, 16);
}
