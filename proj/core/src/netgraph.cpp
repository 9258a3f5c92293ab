#include "tabrec/netgraph.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace tabrec::net {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kBbox: return "bbox";
    case Variant::kThrough: return "through";
  }
  return "full";
}

Variant parse_variant(const std::string& s) {
  if (s == "full") return Variant::kFull;
  if (s == "bbox") return Variant::kBbox;
  if (s == "through") return Variant::kThrough;
  throw std::invalid_argument("unknown variant '" + s + "' (expected full|bbox|through)");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("ModelConfig: " + m); };
  if (image_side <= 0 || image_side % kDownsample != 0) fail("image_side must be a positive multiple of 8");
  if (channels <= 0 || channels % 4 != 0) fail("channels must be divisible by 4");
  if (heads <= 0 || channels % heads != 0) fail("channels must be divisible by heads");
  if (ff_mult <= 0) fail("ff_mult must be positive");
  if (html_blocks < 1 || cell_blocks < 1 || refiner_blocks < 1) fail("block counts must be >= 1");
  if (window < 0) fail("window must be >= 0");
  if (structure_cap < 1 || content_cap < 1) fail("length caps must be >= 1");
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << "image_side=" << image_side << '\n'
     << "channels=" << channels << '\n'
     << "heads=" << heads << '\n'
     << "ff_mult=" << ff_mult << '\n'
     << "html_blocks=" << html_blocks << '\n'
     << "cell_blocks=" << cell_blocks << '\n'
     << "refiner_blocks=" << refiner_blocks << '\n'
     << "window=" << window << '\n'
     << "structure_cap=" << structure_cap << '\n'
     << "content_cap=" << content_cap << '\n'
     << "variant=" << to_string(variant) << '\n';
  return os.str();
}

void ModelConfig::set(const std::string& key, const std::string& value) {
  auto as_int = [&] {
    std::size_t used = 0;
    const int v = std::stoi(value, &used);
    if (used != value.size()) throw std::invalid_argument("not an integer: " + key + "=" + value);
    return v;
  };
  if (key == "image_side") image_side = as_int();
  else if (key == "channels") channels = as_int();
  else if (key == "heads") heads = as_int();
  else if (key == "ff_mult") ff_mult = as_int();
  else if (key == "html_blocks") html_blocks = as_int();
  else if (key == "cell_blocks") cell_blocks = as_int();
  else if (key == "refiner_blocks") refiner_blocks = as_int();
  else if (key == "window") window = as_int();
  else if (key == "structure_cap") structure_cap = as_int();
  else if (key == "content_cap") content_cap = as_int();
  else if (key == "variant") variant = parse_variant(value);
  else throw std::invalid_argument("unknown model config key '" + key + "'");
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  ModelConfig c;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("malformed config line: " + line);
    c.set(line.substr(0, eq), line.substr(eq + 1));
  }
  c.validate();
  return c;
}

CellBox normalize_box(double x0, double y0, double x1, double y1, double side) {
  auto clamp01 = [](double v) { return std::clamp(v, 0.0, 1.0); };
  return {clamp01((x0 + x1) / 2.0 / side), clamp01((y0 + y1) / 2.0 / side), clamp01((x1 - x0) / side),
          clamp01((y1 - y0) / side)};
}

CellInputs teacher_cell_inputs(std::span<const grammar::TokenId> target) {
  CellInputs in;
  if (target.empty()) return in;
  const auto layout = grammar::cell_layout(target);
  const std::size_t n = target.size();
  in.tokens.resize(n);
  in.cells.assign(layout.begin(), layout.end());
  in.rel.resize(n);
  in.tokens[0] = grammar::Vocab::content().sos();
  for (std::size_t p = 1; p < n; ++p) in.tokens[p] = target[p - 1];
  for (std::size_t p = 0; p < n; ++p) in.rel[p] = (p > 0 && in.cells[p] == in.cells[p - 1]) ? in.rel[p - 1] + 1 : 0;
  return in;
}

std::vector<int> mask_layout(const CellInputs& in) {
  std::vector<int> layout = in.cells;
  if (!layout.empty()) layout[0] = attn::kSosCell;
  return layout;
}

template <typename T>
TableModel<T>::TableModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  attn::Initializer init(seed);
  const int d = config_.channels;
  const int hidden = d * config_.ff_mult;
  const int heads = config_.heads;
  auto& ps = params_;

  const int c3 = std::max(4, d / 2);
  const int c2 = std::max(4, d / 4);
  const int c1 = std::max(4, d / 8);
  enc_channels_ = {3, c1, c2, c3};
  encoder.conv1 = attn::Linear::make(ps, init, "encoder.conv1", 9 * 3, c1);
  encoder.conv2 = attn::Linear::make(ps, init, "encoder.conv2", 9 * c1, c2);
  encoder.conv3 = attn::Linear::make(ps, init, "encoder.conv3", 9 * c2, c3);
  encoder.proj = attn::Linear::make(ps, init, "encoder.proj", c3, d);

  const int vs = static_cast<int>(grammar::Vocab::structure().size());
  const int vc = static_cast<int>(grammar::Vocab::content().size());

  html.embed = ps.add("html.embed", vs, d);
  init.normal(ps[html.embed].value, 1.0);
  html.direction = ps.add("html.direction", 2, d);
  init.normal(ps[html.direction].value, 1.0);
  html.mix = attn::Linear::make(ps, init, "html.mix", 2 * d, d);
  for (int b = 0; b < config_.html_blocks; ++b)
    html.blocks.push_back(attn::DecoderBlock::make(ps, init, "html.block" + std::to_string(b), d, heads, hidden));
  html.ln_out = attn::LayerNorm::make(ps, "html.ln_out", d);
  html.out = attn::Linear::make(ps, init, "html.out", d, vs);

  for (int b = 0; b < config_.refiner_blocks; ++b)
    refiner.push_back(attn::GlobalBlock::make(ps, init, "refiner.block" + std::to_string(b), d, heads, hidden));
  bbox = attn::Linear::make(ps, init, "bbox", d, 4);

  cell.embed = ps.add("cell.embed", vc, d);
  init.normal(ps[cell.embed].value, 1.0);
  cell.box_embed = attn::Linear::make(ps, init, "cell.box_embed", 4, d);
  cell.mix = attn::Linear::make(ps, init, "cell.mix", 2 * d, d);
  for (int b = 0; b < config_.cell_blocks; ++b)
    cell.blocks.push_back(attn::DecoderBlock::make(ps, init, "cell.block" + std::to_string(b), d, heads, hidden));
  cell.ln_out = attn::LayerNorm::make(ps, "cell.ln_out", d);
  cell.out = attn::Linear::make(ps, init, "cell.out", d, vc);
}

template <typename T>
Var TableModel<T>::encode_image(Graph<T>& g, const Image& image) const {
  const int side = config_.image_side;
  if (image.width != side || image.height != side)
    throw std::invalid_argument("encode_image: expected " + std::to_string(side) + "x" + std::to_string(side) +
                                " image, got " + std::to_string(image.width) + "x" + std::to_string(image.height));
  Var x = g.constant(normalize_rgb<T>(image));
  int s = side;
  const attn::Linear* convs[] = {&encoder.conv1, &encoder.conv2, &encoder.conv3};
  for (int layer = 0; layer < 3; ++layer) {
    x = g.im2col(x, s, s, enc_channels_[static_cast<std::size_t>(layer)], 3, 2, 1);
    x = g.gelu((*convs[layer])(g, x));
    s /= 2;
  }
  x = encoder.proj(g, x);
  return g.add_constant(x, attn::pos_table_2d<T>(static_cast<std::size_t>(s), static_cast<std::size_t>(s),
                                                 static_cast<std::size_t>(config_.channels)));
}

template <typename T>
Memory<T> TableModel<T>::project_memory(Graph<T>& g, Var image_features) const {
  Memory<T> mem;
  for (const auto& b : html.blocks) mem.html.push_back(b.cross_attn.project_memory(g, image_features));
  for (const auto& b : cell.blocks) mem.cell.push_back(b.cross_attn.project_memory(g, image_features));
  return mem;
}

template <typename T>
Memory<T> TableModel<T>::memory_constants(Graph<T>& g, const MemoryValues<T>& values) const {
  Memory<T> mem;
  for (const auto& [k, v] : values.html) mem.html.emplace_back(g.constant(k), g.constant(v));
  for (const auto& [k, v] : values.cell) mem.cell.emplace_back(g.constant(k), g.constant(v));
  return mem;
}

template <typename T>
MemoryValues<T> TableModel<T>::memory_values(const Image& image) const {
  Graph<T> g = inference_graph();
  const Memory<T> mem = project_memory(g, encode_image(g, image));
  MemoryValues<T> out;
  for (const auto& [k, v] : mem.html) out.html.emplace_back(g.value(k), g.value(v));
  for (const auto& [k, v] : mem.cell) out.cell.emplace_back(g.value(k), g.value(v));
  return out;
}

template <typename T>
HtmlOutput TableModel<T>::html_decoder(Graph<T>& g, const Memory<T>& mem, std::span<const grammar::TokenId> tokens,
                                       grammar::Direction direction) const {
  if (direction == grammar::Direction::kNone) throw std::invalid_argument("html_decoder: direction tag required");
  if (tokens.size() > static_cast<std::size_t>(config_.structure_cap))
    throw std::length_error("html_decoder: " + std::to_string(tokens.size()) + " tokens exceed the structure cap " +
                            std::to_string(config_.structure_cap));
  const std::size_t n = tokens.size() + 1;
  std::vector<int> ids(n);
  ids[0] = grammar::Vocab::structure().sos();
  std::copy(tokens.begin(), tokens.end(), ids.begin() + 1);
  const int dir_row = direction == grammar::Direction::kLtoR ? 0 : 1;

  Var emb = g.gather_rows(g.param(html.embed), ids);
  Var dir = g.gather_rows(g.param(html.direction), std::vector<int>(n, dir_row));
  Var x = html.mix(g, g.concat_cols(emb, dir));
  std::vector<int> positions(n);
  for (std::size_t i = 0; i < n; ++i) positions[i] = static_cast<int>(i);
  x = g.add_constant(x, attn::pos_table_1d<T>(positions, static_cast<std::size_t>(config_.channels)));
  const attn::AttnMask mask = attn::build_local_mask(n, static_cast<std::size_t>(config_.window));
  for (std::size_t b = 0; b < html.blocks.size(); ++b)
    x = html.blocks[b](g, x, mask, mem.html[b].first, mem.html[b].second);
  Var h = html.ln_out(g, x);
  return {html.out(g, h), h};
}

template <typename T>
Var TableModel<T>::fetch_cells(Graph<T>& g, Var hidden, std::span<const std::size_t> anchors) const {
  std::vector<int> rows;
  rows.reserve(anchors.size());
  // Hidden row 0 belongs to SOS, so token i sits at row i + 1.
  for (std::size_t a : anchors) rows.push_back(static_cast<int>(a) + 1);
  return g.gather_rows(hidden, std::move(rows));
}

template <typename T>
Var TableModel<T>::refine(Graph<T>& g, Var cells) const {
  if (config_.variant == Variant::kThrough) return cells;
  for (const auto& b : refiner) cells = b(g, cells);
  return cells;
}

template <typename T>
Var TableModel<T>::bbox_head(Graph<T>& g, Var cells) const {
  return g.sigmoid(bbox(g, cells));
}

template <typename T>
Var TableModel<T>::cell_conditioning(Graph<T>& g, Var refined, Var boxes) const {
  if (config_.variant == Variant::kBbox) return cell.box_embed(g, boxes);
  return refined;
}

template <typename T>
Var TableModel<T>::cell_decoder(Graph<T>& g, const Memory<T>& mem, const CellInputs& in, Var cell_features,
                                std::span<const int> read_rows) const {
  const std::size_t n = in.tokens.size();
  if (n == 0) throw std::invalid_argument("cell_decoder: empty input");
  if (n > static_cast<std::size_t>(config_.content_cap))
    throw std::length_error("cell_decoder: " + std::to_string(n) + " tokens exceed the content cap " +
                            std::to_string(config_.content_cap));
  if (in.cells.size() != n || in.rel.size() != n) throw std::invalid_argument("cell_decoder: layout size mismatch");
  const auto ncells = g.value(cell_features).rows();
  for (int c : in.cells)
    if (c < 0 || c >= ncells) throw std::out_of_range("cell_decoder: unknown cell index " + std::to_string(c));

  Var emb = g.gather_rows(g.param(cell.embed), in.tokens);
  Var feat = g.gather_rows(cell_features, in.cells);
  Var x = cell.mix(g, g.concat_cols(emb, feat));
  x = g.add_constant(x, attn::pos_table_1d<T>(in.rel, static_cast<std::size_t>(config_.channels)));
  const attn::AttnMask mask = attn::build_cellwise_mask(mask_layout(in), static_cast<std::size_t>(config_.window));
  for (std::size_t b = 0; b < cell.blocks.size(); ++b)
    x = cell.blocks[b](g, x, mask, mem.cell[b].first, mem.cell[b].second);
  if (!read_rows.empty()) x = g.gather_rows(x, std::vector<int>(read_rows.begin(), read_rows.end()));
  return cell.out(g, cell.ln_out(g, x));
}

template class TableModel<float>;
template class TableModel<double>;

}  // namespace tabrec::net
