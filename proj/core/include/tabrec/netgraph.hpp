#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tabrec/attncore.hpp"
#include "tabrec/htmlgrammar.hpp"
#include "tabrec/image.hpp"

namespace tabrec::net {

using attn::Graph;
using attn::Mat;
using attn::Var;

enum class Variant { kFull, kBbox, kThrough };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);

/// Encoder always downsamples by this factor (three stride-2 convolutions).
inline constexpr int kDownsample = 8;

struct ModelConfig {
  int image_side = 128;
  int channels = 64;
  int heads = 4;
  int ff_mult = 4;
  int html_blocks = 3;
  int cell_blocks = 1;
  int refiner_blocks = 1;
  int window = 300;
  int structure_cap = 800;
  int content_cap = 8000;
  Variant variant = Variant::kFull;

  int grid() const { return image_side / kDownsample; }
  /// Throws std::invalid_argument on violated invariants.
  void validate() const;

  /// Flat "key=value" lines.
  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);
  /// Applies one key=value override; throws on unknown keys.
  void set(const std::string& key, const std::string& value);

  bool operator==(const ModelConfig&) const = default;
};

/// Center/size box normalized to [0, 1].
struct CellBox {
  double cx = 0, cy = 0, w = 0, h = 0;
  bool operator==(const CellBox&) const = default;
};

/// Normalizes a pixel box (x0, y0)-(x1, y1) in a square image of `side` pixels.
CellBox normalize_box(double x0, double y0, double x1, double y1, double side);

/// Decoder input for the cell decoder: token ids with, per position, the
/// owning cell and the offset from the start of that cell's segment.
struct CellInputs {
  std::vector<int> tokens;
  std::vector<int> cells;
  std::vector<int> rel;
};

/// Teacher-forcing input for a concatenated content target (cells joined and
/// terminated by SEP): [SOS] + target[:-1]. Position p is owned by the cell of
/// target[p]; SOS and every SEP open the following cell at offset 0.
CellInputs teacher_cell_inputs(std::span<const grammar::TokenId> target);

/// Cell layout for the self-attention mask: owners with position 0 marked SOS.
std::vector<int> mask_layout(const CellInputs& in);

/// Cross-attention keys/values per decoder block.
template <typename T>
struct Memory {
  std::vector<std::pair<Var, Var>> html;
  std::vector<std::pair<Var, Var>> cell;
};

/// Materialized memory projections, reusable across graphs.
template <typename T>
struct MemoryValues {
  std::vector<std::pair<Mat<T>, Mat<T>>> html;
  std::vector<std::pair<Mat<T>, Mat<T>>> cell;
};

struct HtmlOutput {
  Var logits;  // (len + 1) x structure vocab
  Var hidden;  // (len + 1) x d, row 0 is SOS
};

/// The full recognition network: image encoder, HTML decoder shared by both
/// directions, refiner, bbox head and cell decoder.
template <typename T>
class TableModel {
 public:
  TableModel(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  attn::ParamStore<T>& params() { return params_; }
  const attn::ParamStore<T>& params() const { return params_; }

  /// (grid^2) x d features with 2D positional codes added.
  Var encode_image(Graph<T>& g, const Image& image) const;

  Memory<T> project_memory(Graph<T>& g, Var image_features) const;
  Memory<T> memory_constants(Graph<T>& g, const MemoryValues<T>& values) const;
  MemoryValues<T> memory_values(const Image& image) const;

  /// Graph without gradients; it only reads the parameters.
  Graph<T> inference_graph() const { return Graph<T>(const_cast<attn::ParamStore<T>*>(&params_), false); }

  /// Runs the HTML decoder on [SOS] + tokens in the given direction.
  HtmlOutput html_decoder(Graph<T>& g, const Memory<T>& mem, std::span<const grammar::TokenId> tokens,
                          grammar::Direction direction) const;

  /// Hidden rows at the cell anchors (token indices, SOS excluded).
  Var fetch_cells(Graph<T>& g, Var hidden, std::span<const std::size_t> anchors) const;
  Var refine(Graph<T>& g, Var cells) const;
  /// Sigmoid-squashed (cx, cy, w, h) per cell.
  Var bbox_head(Graph<T>& g, Var cells) const;
  /// Feature mixed into the cell decoder per cell, by variant.
  Var cell_conditioning(Graph<T>& g, Var refined, Var boxes) const;

  /// Logits for the given positions (all positions when `read_rows` is empty).
  Var cell_decoder(Graph<T>& g, const Memory<T>& mem, const CellInputs& in, Var cell_features,
                   std::span<const int> read_rows = {}) const;

  /// Converts parameters to another scalar type.
  template <typename U>
  TableModel<U> cast() const {
    TableModel<U> out(config_, 0);
    params_.copy_values_to(out.params());
    return out;
  }

  // Layer handles, exposed for weight surgery in tests.
  struct Encoder {
    attn::Linear conv1, conv2, conv3, proj;
  } encoder;
  struct HtmlDecoder {
    attn::ParamHandle embed = 0, direction = 0;
    attn::Linear mix;
    std::vector<attn::DecoderBlock> blocks;
    attn::LayerNorm ln_out;
    attn::Linear out;
  } html;
  std::vector<attn::GlobalBlock> refiner;
  attn::Linear bbox;
  struct CellDecoder {
    attn::ParamHandle embed = 0;
    attn::Linear box_embed;
    attn::Linear mix;
    std::vector<attn::DecoderBlock> blocks;
    attn::LayerNorm ln_out;
    attn::Linear out;
  } cell;

 private:
  ModelConfig config_;
  attn::ParamStore<T> params_;
  std::vector<int> enc_channels_;
};

extern template class TableModel<float>;
extern template class TableModel<double>;

}  // namespace tabrec::net
