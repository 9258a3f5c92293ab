#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <thread>

#include "support.hpp"
#include "tabrec/inference.hpp"
#include "tabrec/teds.hpp"

using namespace tabrec;
using namespace tabrec::infer;

namespace {

const TokenId kSep = grammar::Vocab::content().sep();

TokenId letter(char c) { return grammar::Vocab::content().id(std::string(1, c)); }

// Emits a fixed script per cell: the read row's owner and offset say which
// cell is asking and how many of its tokens already exist.
class ScriptScorer : public CellScorer {
 public:
  explicit ScriptScorer(std::vector<std::vector<TokenId>> scripts) : scripts_(std::move(scripts)) {}
  std::vector<TokenId> next_tokens(const net::CellInputs& in, std::span<const int> rows) override {
    ++calls;
    std::vector<TokenId> out;
    for (int r : rows) {
      const auto& s = scripts_.at(static_cast<std::size_t>(in.cells.at(r)));
      const auto len = static_cast<std::size_t>(in.rel.at(r));
      out.push_back(len < s.size() ? s[len] : kSep);
    }
    return out;
  }
  std::size_t calls = 0;

 private:
  std::vector<std::vector<TokenId>> scripts_;
};

// Chooses the next token from a hash of the cell's own tokens so far, seen
// only through the decoder input: an isolation-respecting stand-in model.
class HashScorer : public CellScorer {
 public:
  explicit HashScorer(std::uint64_t seed) : seed_(seed) {}
  std::vector<TokenId> next_tokens(const net::CellInputs& in, std::span<const int> rows) override {
    std::vector<TokenId> out;
    const std::string alpha(grammar::content_alphabet());
    for (int r : rows) {
      std::uint64_t h = seed_ ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(in.cells[r] + 1));
      for (int p = r - in.rel[r]; p <= r; ++p) h = (h ^ static_cast<std::uint64_t>(in.tokens[p])) * 0x100000001b3ULL;
      const bool stop = (h >> 7) % 5 == 0 || in.rel[r] >= 12;
      out.push_back(stop ? kSep : letter(alpha[(h >> 17) % alpha.size()]));
    }
    return out;
  }

 private:
  std::uint64_t seed_;
};

std::vector<TokenId> word(const std::string& s) {
  std::vector<TokenId> out;
  for (char c : s) out.push_back(letter(c));
  return out;
}

net::ModelConfig small_caps(net::ModelConfig c) {
  c.structure_cap = 40;
  c.content_cap = 120;
  return c;
}

}  // namespace

TEST(Parallel, NoCells) {
  ScriptScorer s({});
  auto r = decode_cells_parallel(s, 0, 100);
  EXPECT_TRUE(r.cells.empty());
  EXPECT_EQ(r.passes, 0u);
  EXPECT_EQ(s.calls, 0u);
  auto q = decode_cells_sequential(s, 0, 100);
  EXPECT_EQ(q.passes, 0u);
}

TEST(Parallel, ScriptLengths253) {
  std::vector<std::vector<TokenId>> scripts = {word("ab"), word("cdefg"), word("hij")};
  ScriptScorer s(scripts);
  auto r = decode_cells_parallel(s, 3, 8000);
  EXPECT_EQ(r.passes, 6u);
  EXPECT_EQ(r.cells, scripts);
  EXPECT_FALSE(r.truncated);
  ScriptScorer s2(scripts);
  auto q = decode_cells_sequential(s2, 3, 8000);
  EXPECT_EQ(q.passes, 13u);
  EXPECT_EQ(q.cells, scripts);
}

TEST(Parallel, EqualLengthRatioIsCellCount) {
  for (std::size_t n : {1u, 4u, 9u}) {
    std::vector<std::vector<TokenId>> scripts(n, word("xyz"));
    ScriptScorer a(scripts), b(scripts);
    auto p = decode_cells_parallel(a, n, 8000);
    auto q = decode_cells_sequential(b, n, 8000);
    EXPECT_EQ(q.passes, n * p.passes);
  }
}

TEST(Parallel, EmptyCells) {
  std::vector<std::vector<TokenId>> scripts = {{}, word("a"), {}};
  ScriptScorer a(scripts), b(scripts);
  auto p = decode_cells_parallel(a, 3, 100);
  auto q = decode_cells_sequential(b, 3, 100);
  EXPECT_EQ(p.cells, scripts);
  EXPECT_EQ(q.cells, scripts);
  EXPECT_EQ(p.passes, 2u);
  EXPECT_EQ(q.passes, 4u);
}

TEST(Parallel, PassLawAndEquivalenceOnRandomScripts) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 25)(rng);
    std::vector<std::vector<TokenId>> scripts(n);
    std::size_t mx = 0, sum = 0;
    for (auto& s : scripts) {
      const std::size_t len = std::uniform_int_distribution<std::size_t>(0, 15)(rng);
      for (std::size_t k = 0; k < len; ++k) s.push_back(letter("abc"[rng() % 3]));
      mx = std::max(mx, len);
      sum += len + 1;
    }
    ScriptScorer a(scripts), b(scripts);
    auto p = decode_cells_parallel(a, n, 8000);
    auto q = decode_cells_sequential(b, n, 8000);
    ASSERT_EQ(p.passes, mx + 1);
    ASSERT_EQ(q.passes, sum);
    ASSERT_EQ(p.cells, scripts);
    ASSERT_EQ(q.cells, scripts);
  }
}

TEST(Parallel, HashScorerEquivalence) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const std::size_t n = 1 + seed % 17;
    HashScorer a(seed), b(seed);
    auto p = decode_cells_parallel(a, n, 8000);
    auto q = decode_cells_sequential(b, n, 8000);
    ASSERT_EQ(p.cells, q.cells) << seed;
    std::size_t mx = 0, sum = 0;
    for (const auto& c : p.cells) {
      mx = std::max(mx, c.size());
      sum += c.size() + 1;
    }
    ASSERT_EQ(p.passes, mx + 1);
    ASSERT_EQ(q.passes, sum);
  }
}

TEST(Parallel, MonotoneFreezingAndBufferPattern) {
  HashScorer s(42);
  std::vector<std::uint8_t> prev(12, 0);
  std::size_t seen = 0;
  decode_cells_parallel(s, 12, 8000, [&](const DecodeState& st) {
    st.check();
    EXPECT_EQ(st.passes(), ++seen);
    for (std::size_t c = 0; c < st.cells(); ++c) {
      if (prev[c]) EXPECT_TRUE(st.frozen(c));
      prev[c] = st.frozen(c);
    }
  });
  EXPECT_GT(seen, 0u);
}

TEST(DecodeState, FuzzedInsertionOrders) {
  std::mt19937_64 rng(2);
  const std::string alpha(grammar::content_alphabet());
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 10)(rng);
    DecodeState st(n);
    std::vector<std::vector<TokenId>> expect(n);
    for (int step = 0; step < 60; ++step) {
      const std::size_t c = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
      if (st.frozen(c)) {
        EXPECT_THROW(st.insert(c, letter('a')), std::logic_error);
        continue;
      }
      if (rng() % 10 == 0) {
        st.freeze(c);
        continue;
      }
      const TokenId t = letter(alpha[rng() % alpha.size()]);
      st.insert(c, t);
      expect[c].push_back(t);
      ASSERT_NO_THROW(st.check());
    }
    EXPECT_EQ(st.contents(), expect);
    // Oracle: SOS then each cell followed by SEP.
    std::vector<TokenId> buf = {grammar::Vocab::content().sos()};
    for (const auto& c : expect) {
      buf.insert(buf.end(), c.begin(), c.end());
      buf.push_back(kSep);
    }
    EXPECT_EQ(st.buffer(), buf);
    auto in = st.inputs();
    EXPECT_EQ(in.tokens.size(), buf.size() - 1);
    for (std::size_t c = 0; c < n; ++c) {
      EXPECT_EQ(in.cells[st.read_row(c)], static_cast<int>(c));
      EXPECT_EQ(in.rel[st.read_row(c)], static_cast<int>(st.length(c)));
    }
  }
}

TEST(DecodeState, RejectsSepAndUnknownCell) {
  DecodeState st(2);
  EXPECT_THROW(st.insert(0, kSep), std::logic_error);
  EXPECT_THROW(st.insert(2, letter('a')), std::out_of_range);
}

TEST(Truncation, ParallelFreezesAllAndFlags) {
  std::vector<std::vector<TokenId>> scripts = {word("aaaaaaaaaa"), word("bbbbbbbbbb")};
  ScriptScorer s(scripts);
  auto r = decode_cells_parallel(s, 2, 10);
  EXPECT_TRUE(r.truncated);
  std::size_t total = 1;
  for (const auto& c : r.cells) total += c.size() + 1;
  EXPECT_LE(total, 10u);
  ScriptScorer s2(scripts);
  auto q = decode_cells_sequential(s2, 2, 10);
  EXPECT_TRUE(q.truncated);
  total = 1;
  for (const auto& c : q.cells) total += c.size() + 1;
  EXPECT_LE(total, 10u);
}

TEST(Truncation, CapTooSmallForSeparators) {
  ScriptScorer s({{}, {}, {}});
  auto r = decode_cells_parallel(s, 3, 2);
  EXPECT_TRUE(r.truncated);
  EXPECT_EQ(r.passes, 0u);
}

TEST(Repair, ValidSequenceUnchanged) {
  auto seq = grammar::tokenize_structure("<tr><td></td><td rowspan=\"2\"></td></tr><tr><td></td></tr>");
  std::vector<std::size_t> kept;
  EXPECT_EQ(repair_structure(seq.ids, &kept), seq.ids);
  for (std::size_t i = 0; i < kept.size(); ++i) EXPECT_EQ(kept[i], i);
}

TEST(Repair, DropsAndCloses) {
  const auto& s = grammar::structure_ids();
  const auto& v = grammar::Vocab::structure();
  // td outside tr, stray </tr>, unclosed row, trailing half cell.
  std::vector<TokenId> bad = {s.td_merged, s.tr_close, s.tr_open, s.td_merged, s.td_open, s.colspan(2)};
  std::vector<std::size_t> kept;
  auto fixed = repair_structure(bad, &kept);
  EXPECT_EQ(fixed, (std::vector<TokenId>{s.tr_open, s.td_merged, s.tr_close}));
  EXPECT_EQ(kept[0], 2u);
  EXPECT_EQ(kept[1], 3u);
  EXPECT_EQ(kept[2], std::numeric_limits<std::size_t>::max());
  std::vector<TokenId> after_eos = {s.tr_open, s.td_merged, s.tr_close, v.eos(), s.tr_open};
  EXPECT_EQ(repair_structure(after_eos).size(), 3u);
}

TEST(Repair, AlwaysParses) {
  std::mt19937_64 rng(3);
  const int vocab = static_cast<int>(grammar::Vocab::structure().size());
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<TokenId> junk(std::uniform_int_distribution<int>(0, 40)(rng));
    for (auto& t : junk) t = std::uniform_int_distribution<int>(3, vocab - 1)(rng);
    grammar::TokenSeq seq;
    seq.ids = repair_structure(junk);
    const std::string html = grammar::detokenize_structure(seq);
    ASSERT_NO_THROW(grammar::tokenize_structure(html)) << html;
    ASSERT_NO_THROW(teds::html_to_tree("<table>" + html + "</table>", teds::Mode::kStructural));
  }
}

TEST(Recognize, AlwaysEosModelGivesEmptyTable) {
  net::TableModel<double> m(small_caps(fixtures::tiny_config()), 4);
  m.params()[m.html.out.bias].value(0, grammar::Vocab::structure().eos()) = 1e3;
  for (bool parallel : {true, false}) {
    Recognition r = recognize(m, Image(32, 32), parallel);
    EXPECT_EQ(r.html, "<table></table>");
    EXPECT_TRUE(r.structure.empty());
    EXPECT_TRUE(r.boxes.empty());
    EXPECT_EQ(r.html_passes, 1u);
    EXPECT_EQ(r.cell_passes, 0u);
  }
}

TEST(Recognize, HtmlPassesAreLengthPlusOne) {
  net::TableModel<double> m(small_caps(fixtures::tiny_config()), 5);
  const auto mem = m.memory_values(Image(32, 32));
  auto r = decode_html(m, mem);
  if (r.truncated) {
    EXPECT_EQ(r.structure.size(), 40u);
  }
  EXPECT_EQ(r.passes, r.structure.size() + 1);
  EXPECT_EQ(r.hidden.rows(), static_cast<Eigen::Index>(r.structure.size() + 1));
}

TEST(Recognize, StructureTruncationFlagged) {
  net::TableModel<double> m(small_caps(fixtures::tiny_config()), 6);
  // Force "<tr>" forever: never EOS.
  m.params()[m.html.out.bias].value(0, grammar::structure_ids().tr_open) = 1e3;
  auto r = recognize(m, Image(32, 32), true);
  EXPECT_TRUE(r.structure_truncated);
  EXPECT_EQ(r.html_passes, 41u);
  EXPECT_NO_THROW(teds::html_to_tree(r.html, teds::Mode::kTotal));
}

TEST(Recognize, ParallelEqualsSequentialAndTimesMonotone) {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    net::ModelConfig c = small_caps(fixtures::tiny_config());
    net::TableModel<double> m(c, 100 + seed);
    auto rec = fixtures::tiny_record(seed, 1, 2);
    Recognition p = recognize(m, rec.image, true);
    Recognition q = recognize(m, rec.image, false);
    EXPECT_EQ(p.structure, q.structure);
    EXPECT_EQ(p.cell_tokens, q.cell_tokens);
    EXPECT_EQ(p.html, q.html);
    if (!p.content_truncated && !q.content_truncated) {
      std::size_t mx = 0, sum = 0;
      for (const auto& t : p.cell_tokens) {
        mx = std::max(mx, t.size());
        sum += t.size() + 1;
      }
      EXPECT_EQ(p.cell_passes, p.cell_tokens.empty() ? 0 : mx + 1);
      EXPECT_EQ(q.cell_passes, sum);
    }
    for (const auto& r : {p, q}) {
      EXPECT_LE(r.times.html, r.times.bbox);
      EXPECT_LE(r.times.bbox, r.times.cell);
      EXPECT_EQ(r.boxes.size(), grammar::count_cells(r.structure.ids));
    }
  }
}

TEST(Recognize, DeterministicAcrossThreads) {
  net::ModelConfig c = small_caps(fixtures::tiny_config());
  net::TableModel<float> m(c, 7);
  std::vector<synth::TableRecord> recs;
  for (std::uint64_t s = 0; s < 6; ++s) recs.push_back(fixtures::tiny_record(s, 1, 2));
  std::vector<std::string> serial;
  for (const auto& r : recs) serial.push_back(recognize(m, r.image, true).html);
  std::vector<std::string> threaded(recs.size());
  std::vector<std::thread> pool;
  for (std::size_t i = 0; i < recs.size(); ++i)
    pool.emplace_back([&, i] { threaded[i] = recognize(m, recs[i].image, true).html; });
  for (auto& t : pool) t.join();
  EXPECT_EQ(serial, threaded);
}
