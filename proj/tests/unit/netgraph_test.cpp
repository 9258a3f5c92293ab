#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "support.hpp"
#include "tabrec/netgraph.hpp"
#include "tabrec/trainer.hpp"

using namespace tabrec;
using namespace tabrec::net;
using grammar::TokenId;

namespace {

struct Forward {
  Mat<double> html_logits;
  Mat<double> hidden;
  Mat<double> refined;
  Mat<double> boxes;
  Mat<double> cell_logits;
};

// Teacher-forced pass through every stage, optionally with the cell decoder
// conditioned on explicitly supplied features.
Forward run(const TableModel<double>& model, const train::Example& ex, const Mat<double>* features = nullptr) {
  auto g = model.inference_graph();
  Memory<double> mem = model.project_memory(g, model.encode_image(g, ex.image));
  HtmlOutput out = model.html_decoder(g, mem, ex.structure, grammar::Direction::kLtoR);
  Forward f;
  f.html_logits = g.value(out.logits);
  f.hidden = g.value(out.hidden);
  Var cells = model.fetch_cells(g, out.hidden, ex.anchors);
  Var refined = model.refine(g, cells);
  Var boxes = model.bbox_head(g, refined);
  f.refined = g.value(refined);
  f.boxes = g.value(boxes);
  Var cond = features ? g.constant(*features) : model.cell_conditioning(g, refined, boxes);
  f.cell_logits = g.value(model.cell_decoder(g, mem, ex.cell_inputs, cond));
  return f;
}

train::Example tiny_example(std::uint64_t seed, const ModelConfig& c, int rows = 1, int cols = 2) {
  return train::make_example(fixtures::tiny_record(seed, rows, cols), c);
}

}  // namespace

TEST(Config, TextRoundTrip) {
  ModelConfig c = fixtures::tiny_config(Variant::kBbox);
  c.window = 17;
  EXPECT_EQ(ModelConfig::from_text(c.to_text()), c);
}

TEST(Config, SetAndValidate) {
  ModelConfig c;
  c.set("channels", "32");
  EXPECT_EQ(c.channels, 32);
  c.set("variant", "through");
  EXPECT_EQ(c.variant, Variant::kThrough);
  EXPECT_THROW(c.set("nope", "1"), std::invalid_argument);
  EXPECT_THROW(c.set("channels", "3x"), std::invalid_argument);
  ModelConfig bad;
  bad.heads = 3;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = ModelConfig{};
  bad.image_side = 100;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  EXPECT_THROW(parse_variant("big"), std::invalid_argument);
  for (Variant v : {Variant::kFull, Variant::kBbox, Variant::kThrough}) EXPECT_EQ(parse_variant(to_string(v)), v);
}

TEST(Encoder, OutputShapes) {
  {
    TableModel<double> m(ModelConfig{}, 1);
    auto g = m.inference_graph();
    const auto& f = g.value(m.encode_image(g, Image(128, 128)));
    EXPECT_EQ(f.rows(), 256);
    EXPECT_EQ(f.cols(), 64);
  }
  {
    ModelConfig c = fixtures::tiny_config();
    c.image_side = 520;
    TableModel<float> m(c, 1);
    auto g = m.inference_graph();
    const auto& f = g.value(m.encode_image(g, Image(520, 520)));
    EXPECT_EQ(f.rows(), 4225);
    EXPECT_EQ(f.cols(), 16);
  }
}

TEST(Encoder, RejectsWrongSize) {
  TableModel<double> m(fixtures::tiny_config(), 1);
  auto g = m.inference_graph();
  EXPECT_THROW(m.encode_image(g, Image(40, 32)), std::invalid_argument);
}

TEST(Encoder, FeaturesAreLocal) {
  // Three 3x3 stride-2 convolutions see at most 15 input pixels per side.
  ModelConfig c = fixtures::tiny_config();
  c.image_side = 64;
  TableModel<double> m(c, 2);
  Image img(64, 64);
  auto g = m.inference_graph();
  const Mat<double> base = g.value(m.encode_image(g, img));
  img.set_gray(63, 63, 0);
  auto g2 = m.inference_graph();
  const Mat<double> changed = g2.value(m.encode_image(g2, img));
  EXPECT_EQ(changed.row(0), base.row(0));
  EXPECT_NE(changed.row(63), base.row(63));
}

TEST(HtmlDecoder, ShapesAndDirection) {
  ModelConfig c = fixtures::tiny_config();
  TableModel<double> m(c, 3);
  auto ex = tiny_example(1, c);
  auto g = m.inference_graph();
  auto mem = m.project_memory(g, m.encode_image(g, ex.image));
  auto l = m.html_decoder(g, mem, ex.structure, grammar::Direction::kLtoR);
  auto r = m.html_decoder(g, mem, ex.structure, grammar::Direction::kRtoL);
  EXPECT_EQ(g.value(l.logits).rows(), static_cast<Eigen::Index>(ex.structure.size() + 1));
  EXPECT_EQ(g.value(l.logits).cols(), static_cast<Eigen::Index>(grammar::Vocab::structure().size()));
  EXPECT_NE(g.value(l.logits), g.value(r.logits));
  EXPECT_THROW(m.html_decoder(g, mem, ex.structure, grammar::Direction::kNone), std::invalid_argument);
}

TEST(HtmlDecoder, CapEnforced) {
  ModelConfig c = fixtures::tiny_config();
  c.structure_cap = 4;
  TableModel<double> m(c, 3);
  auto g = m.inference_graph();
  auto mem = m.project_memory(g, m.encode_image(g, Image(32, 32)));
  std::vector<TokenId> ok(4, grammar::structure_ids().tr_open), too_long(5, grammar::structure_ids().tr_open);
  EXPECT_NO_THROW(m.html_decoder(g, mem, ok, grammar::Direction::kLtoR));
  EXPECT_THROW(m.html_decoder(g, mem, too_long, grammar::Direction::kLtoR), std::length_error);
}

TEST(Fetcher, PicksAnchorRows) {
  TableModel<double> m(fixtures::tiny_config(), 4);
  std::mt19937_64 rng(4);
  auto hidden = fixtures::random_mat<double>(rng, 12, 16);
  auto g = m.inference_graph();
  auto tokens = grammar::tokenize_structure("<tr><td></td><td colspan=\"2\"></td></tr><tr><td></td></tr>");
  auto anchors = grammar::cell_anchors(tokens.ids);
  const auto& cells = g.value(m.fetch_cells(g, g.constant(hidden), anchors));
  ASSERT_EQ(cells.rows(), 3);
  EXPECT_EQ(cells.row(0), hidden.row(2));
  EXPECT_EQ(cells.row(1), hidden.row(6));
  EXPECT_EQ(cells.row(2), hidden.row(9));
  const auto& none = g.value(m.fetch_cells(g, g.constant(hidden), {}));
  EXPECT_EQ(none.rows(), 0);
}

TEST(Refiner, PermutationEquivariant) {
  TableModel<double> m(fixtures::tiny_config(), 5);
  std::mt19937_64 rng(5);
  auto x = fixtures::random_mat<double>(rng, 6, 16);
  std::vector<int> perm(6);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Mat<double> px(6, 16);
  for (int i = 0; i < 6; ++i) px.row(i) = x.row(perm[i]);
  auto g = m.inference_graph();
  const Mat<double> y = g.value(m.refine(g, g.constant(x)));
  const Mat<double> py = g.value(m.refine(g, g.constant(px)));
  for (int i = 0; i < 6; ++i) EXPECT_LT((py.row(i) - y.row(perm[i])).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Refiner, ZeroAttentionLeavesFeedForwardPath) {
  TableModel<double> m(fixtures::tiny_config(), 6);
  const auto& blk = m.refiner.at(0);
  m.params()[blk.attn.wo].value.setZero();
  std::mt19937_64 rng(6);
  auto x = fixtures::random_mat<double>(rng, 1, 16);
  auto g = m.inference_graph();
  const Mat<double> y = g.value(m.refine(g, g.constant(x)));
  const Mat<double> want = g.value(attn::ff_residual(g, g.constant(x), blk.ln_ff, blk.ff));
  EXPECT_EQ(y, want);
}

TEST(Refiner, ThroughIsIdentity) {
  TableModel<double> m(fixtures::tiny_config(Variant::kThrough), 7);
  std::mt19937_64 rng(7);
  auto x = fixtures::random_mat<double>(rng, 4, 16);
  auto g = m.inference_graph();
  EXPECT_EQ(g.value(m.refine(g, g.constant(x))), x);
}

TEST(Refiner, CostIndependentOfContent) {
  TableModel<double> m(fixtures::tiny_config(), 8);
  std::mt19937_64 rng(8);
  std::size_t nodes = 0;
  for (int cells : {1, 3, 9}) {
    auto g = m.inference_graph();
    Var x = g.constant(fixtures::random_mat<double>(rng, cells, 16));
    const std::size_t before = g.size();
    m.refine(g, x);
    if (nodes == 0) nodes = g.size() - before;
    EXPECT_EQ(g.size() - before, nodes);
  }
}

TEST(BboxHead, OutputsInUnitCube) {
  TableModel<double> m(fixtures::tiny_config(), 9);
  std::mt19937_64 rng(9);
  auto g = m.inference_graph();
  const auto& b = g.value(m.bbox_head(g, g.constant(fixtures::random_mat<double>(rng, 7, 16, 50.0))));
  EXPECT_EQ(b.rows(), 7);
  EXPECT_EQ(b.cols(), 4);
  EXPECT_GE(b.minCoeff(), 0.0);
  EXPECT_LE(b.maxCoeff(), 1.0);
}

TEST(BboxHead, NormalizeBoxExample) {
  CellBox b = normalize_box(52, 104, 156, 208, 520);
  EXPECT_NEAR(b.cx, 0.2, 1e-12);
  EXPECT_NEAR(b.cy, 0.3, 1e-12);
  EXPECT_NEAR(b.w, 0.2, 1e-12);
  EXPECT_NEAR(b.h, 0.2, 1e-12);
}

TEST(CellInputs, TeacherLayout) {
  const auto& v = grammar::Vocab::content();
  const TokenId a = v.id("a"), b = v.id("b"), c = v.id("c"), sep = v.sep();
  std::vector<TokenId> target = {a, b, sep, sep, c, sep};
  CellInputs in = teacher_cell_inputs(target);
  EXPECT_EQ(in.tokens, (std::vector<int>{v.sos(), a, b, sep, sep, c}));
  EXPECT_EQ(in.cells, (std::vector<int>{0, 0, 0, 1, 2, 2}));
  EXPECT_EQ(in.rel, (std::vector<int>{0, 1, 2, 0, 0, 1}));
  EXPECT_EQ(in.cells[4], 2);  // position whose target is "c"
  auto layout = mask_layout(in);
  EXPECT_EQ(layout[0], attn::kSosCell);
  EXPECT_TRUE(teacher_cell_inputs({}).tokens.empty());
}

TEST(CellInputs, FirstPositionOfEveryCellIsZero) {
  std::mt19937_64 rng(10);
  const auto& v = grammar::Vocab::content();
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<TokenId> target;
    const int cells = std::uniform_int_distribution<int>(1, 8)(rng);
    for (int c = 0; c < cells; ++c) {
      const int len = std::uniform_int_distribution<int>(0, 5)(rng);
      for (int k = 0; k < len; ++k) target.push_back(v.id("x"));
      target.push_back(v.sep());
    }
    CellInputs in = teacher_cell_inputs(target);
    std::vector<int> seen(cells, 0);
    for (std::size_t p = 0; p < in.tokens.size(); ++p) {
      const int c = in.cells[p];
      if (!seen[c]) EXPECT_EQ(in.rel[p], 0);
      else EXPECT_EQ(in.rel[p], in.rel[p - 1] + 1);
      seen[c] = 1;
    }
  }
}

TEST(CellDecoder, ShapeContractOnRecords) {
  for (Variant variant : {Variant::kFull, Variant::kBbox, Variant::kThrough}) {
    ModelConfig c = fixtures::tiny_config(variant);
    TableModel<double> m(c, 11);
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      auto ex = tiny_example(seed, c, 2, 2);
      Forward f = run(m, ex);
      EXPECT_EQ(f.html_logits.rows(), static_cast<Eigen::Index>(ex.structure.size() + 1));
      EXPECT_EQ(f.boxes.rows(), static_cast<Eigen::Index>(ex.boxes.size()));
      EXPECT_EQ(f.cell_logits.rows(), static_cast<Eigen::Index>(ex.content.size()));
      EXPECT_EQ(f.cell_logits.cols(), static_cast<Eigen::Index>(grammar::Vocab::content().size()));
      EXPECT_TRUE(f.cell_logits.allFinite());
    }
  }
}

TEST(CellDecoder, IsolationAcrossCells) {
  ModelConfig c = fixtures::tiny_config();
  TableModel<double> m(c, 12);
  std::mt19937_64 rng(12);
  const auto& v = grammar::Vocab::content();
  const std::string alpha(grammar::content_alphabet());
  for (int trial = 0; trial < 10; ++trial) {
    auto ex = tiny_example(trial, c, 2, 2);
    const Forward base = run(m, ex);
    // Replace the tokens of one cell b, keeping the other cells' tokens.
    auto cells = grammar::split_cells({grammar::VocabKind::kContent, ex.content, grammar::Direction::kNone});
    const std::size_t b = std::uniform_int_distribution<std::size_t>(0, cells.size() - 1)(rng);
    cells[b].ids.clear();
    const int len = std::uniform_int_distribution<int>(0, 6)(rng);
    for (int k = 0; k < len; ++k) cells[b].ids.push_back(v.id(std::string(1, alpha[rng() % alpha.size()])));
    train::Example ex2 = ex;
    ex2.content = grammar::concat_cells(cells).ids;
    ex2.cell_inputs = teacher_cell_inputs(ex2.content);
    const Forward changed = run(m, ex2);
    // Compare the positions owned by every other cell, matched by (cell, rel).
    for (std::size_t p = 0; p < ex.cell_inputs.tokens.size(); ++p) {
      const int owner = ex.cell_inputs.cells[p];
      if (owner == static_cast<int>(b)) continue;
      for (std::size_t q = 0; q < ex2.cell_inputs.tokens.size(); ++q) {
        if (ex2.cell_inputs.cells[q] != owner || ex2.cell_inputs.rel[q] != ex.cell_inputs.rel[p]) continue;
        if (p == 0 || q == 0) continue;  // SOS slot, compared below
        EXPECT_LE((changed.cell_logits.row(q) - base.cell_logits.row(p)).cwiseAbs().maxCoeff(), 1e-12);
      }
    }
    EXPECT_LE((changed.cell_logits.row(0) - base.cell_logits.row(0)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(CellDecoder, CapAndUnknownCell) {
  ModelConfig c = fixtures::tiny_config();
  c.content_cap = 3;
  TableModel<double> m(c, 13);
  auto g = m.inference_graph();
  auto mem = m.project_memory(g, m.encode_image(g, Image(32, 32)));
  Var feats = g.constant(Mat<double>::Zero(2, 16));
  CellInputs in{{0, 5, 6}, {0, 0, 1}, {0, 1, 0}};
  EXPECT_NO_THROW(m.cell_decoder(g, mem, in, feats));
  CellInputs bad_cell{{0, 5, 6}, {0, 0, 2}, {0, 1, 0}};
  EXPECT_THROW(m.cell_decoder(g, mem, bad_cell, feats), std::out_of_range);
  CellInputs too_long{{0, 5, 6, 7}, {0, 0, 1, 1}, {0, 1, 0, 1}};
  EXPECT_THROW(m.cell_decoder(g, mem, too_long, feats), std::length_error);
}

TEST(CellDecoder, ReadRowsSelectPositions) {
  ModelConfig c = fixtures::tiny_config();
  TableModel<double> m(c, 14);
  auto ex = tiny_example(3, c);
  auto g = m.inference_graph();
  auto mem = m.project_memory(g, m.encode_image(g, ex.image));
  std::mt19937_64 rng(14);
  Var feats = g.constant(fixtures::random_mat<double>(rng, static_cast<Eigen::Index>(ex.boxes.size()), 16));
  const Mat<double> all = g.value(m.cell_decoder(g, mem, ex.cell_inputs, feats));
  std::vector<int> rows = {static_cast<int>(ex.content.size()) - 1, 0};
  const Mat<double> some = g.value(m.cell_decoder(g, mem, ex.cell_inputs, feats, rows));
  EXPECT_EQ(some.row(0), all.row(rows[0]));
  EXPECT_EQ(some.row(1), all.row(0));
}

TEST(Variants, ThroughEqualsFullWithIdentityRefiner) {
  ModelConfig full_cfg = fixtures::tiny_config(Variant::kFull);
  ModelConfig through_cfg = fixtures::tiny_config(Variant::kThrough);
  TableModel<double> full(full_cfg, 15), through(through_cfg, 15);
  for (const auto& b : full.refiner) {
    full.params()[b.attn.wo].value.setZero();
    full.params()[b.ff.down.weight].value.setZero();
    full.params()[b.ff.down.bias].value.setZero();
  }
  for (std::uint64_t s = 0; s < 3; ++s) {
    auto ex = tiny_example(s, full_cfg, 2, 2);
    Forward a = run(full, ex), b = run(through, ex);
    EXPECT_EQ(a.html_logits, b.html_logits);
    EXPECT_EQ(a.refined, b.refined);
    EXPECT_EQ(a.boxes, b.boxes);
    EXPECT_EQ(a.cell_logits, b.cell_logits);
  }
}

TEST(Variants, BboxEqualsFullFedWithBoxEmbedding) {
  ModelConfig full_cfg = fixtures::tiny_config(Variant::kFull);
  ModelConfig bbox_cfg = fixtures::tiny_config(Variant::kBbox);
  TableModel<double> full(full_cfg, 16), bbox(bbox_cfg, 16);
  for (std::uint64_t s = 0; s < 3; ++s) {
    auto ex = tiny_example(s, full_cfg, 2, 2);
    Forward b = run(bbox, ex);
    Forward f = run(full, ex);
    EXPECT_EQ(f.html_logits, b.html_logits);
    EXPECT_EQ(f.boxes, b.boxes);
    EXPECT_NE(f.cell_logits, b.cell_logits);
    auto g = full.inference_graph();
    const Mat<double> embedded = g.value(full.cell.box_embed(g, g.constant(f.boxes)));
    Forward surgery = run(full, ex, &embedded);
    EXPECT_EQ(surgery.cell_logits, b.cell_logits);
  }
}

TEST(Model, CastPreservesValues) {
  TableModel<double> m(fixtures::tiny_config(), 17);
  TableModel<float> f = m.cast<float>();
  ASSERT_EQ(f.params().size(), m.params().size());
  for (std::size_t i = 0; i < f.params().size(); ++i)
    EXPECT_EQ(f.params()[i].value, m.params()[i].value.cast<float>());
}

TEST(Model, SameSeedSameWeights) {
  TableModel<double> a(fixtures::tiny_config(), 18), b(fixtures::tiny_config(), 18), c(fixtures::tiny_config(), 19);
  EXPECT_EQ(a.params()[a.html.embed].value, b.params()[b.html.embed].value);
  EXPECT_NE(a.params()[a.html.embed].value, c.params()[c.html.embed].value);
}
