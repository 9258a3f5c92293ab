#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "tabrec/graph.hpp"
#include "tabrec/mask.hpp"
#include "tabrec/params.hpp"
#include "tabrec/tensor.hpp"

namespace tabrec::attn {

/// Sinusoidal code for position n: [sin(n w_0), cos(n w_0), sin(n w_1), ...]
/// with w_i = 10000^(-2i/d). Throws std::invalid_argument for odd d.
std::vector<double> pos_encode_1d(std::size_t n, std::size_t d);

/// [p(i); p(j)], each half d/2 channels. Throws unless d % 4 == 0.
std::vector<double> pos_encode_2d(std::size_t i, std::size_t j, std::size_t d);

/// Rows p(positions[k]) stacked.
template <typename T>
Mat<T> pos_table_1d(const std::vector<int>& positions, std::size_t d) {
  Mat<T> out(static_cast<Eigen::Index>(positions.size()), static_cast<Eigen::Index>(d));
  for (std::size_t k = 0; k < positions.size(); ++k) {
    const auto p = pos_encode_1d(static_cast<std::size_t>(positions[k]), d);
    for (std::size_t c = 0; c < d; ++c) out(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c)) = T(p[c]);
  }
  return out;
}

/// Row-major (h*w) x d table of 2D codes.
template <typename T>
Mat<T> pos_table_2d(std::size_t h, std::size_t w, std::size_t d) {
  Mat<T> out(static_cast<Eigen::Index>(h * w), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const auto p = pos_encode_2d(i, j, d);
      for (std::size_t c = 0; c < d; ++c) out(static_cast<Eigen::Index>(i * w + j), static_cast<Eigen::Index>(c)) = T(p[c]);
    }
  return out;
}

/// Deterministic initializer shared by all layer constructors.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}
  /// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
  template <typename T>
  void xavier(Mat<T>& m) {
    const double a = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
    std::uniform_real_distribution<double> u(-a, a);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = T(u(rng_));
  }
  template <typename T>
  void normal(Mat<T>& m, double stddev) {
    std::normal_distribution<double> nd(0.0, stddev);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = T(nd(rng_));
  }

 private:
  std::mt19937_64 rng_;
};

struct Linear {
  ParamHandle weight = 0;  // in x out
  ParamHandle bias = 0;    // 1 x out

  template <typename T>
  static Linear make(ParamStore<T>& store, Initializer& init, const std::string& name, int in, int out) {
    Linear l;
    l.weight = store.add(name + ".weight", in, out);
    l.bias = store.add(name + ".bias", 1, out);
    init.xavier(store[l.weight].value);
    return l;
  }

  template <typename T>
  Var operator()(Graph<T>& g, Var x) const {
    return g.linear(x, g.param(weight), g.param(bias));
  }
};

struct LayerNorm {
  ParamHandle gain = 0;
  ParamHandle bias = 0;

  template <typename T>
  static LayerNorm make(ParamStore<T>& store, const std::string& name, int d) {
    LayerNorm l;
    l.gain = store.add(name + ".gain", 1, d);
    l.bias = store.add(name + ".bias", 1, d);
    store[l.gain].value.setOnes();
    return l;
  }

  template <typename T>
  Var operator()(Graph<T>& g, Var x) const {
    return g.layer_norm(x, g.param(gain), g.param(bias));
  }
};

/// Projection matrices of one multi-head attention layer (bias free):
/// Z = softmax((X Wq)(Y Wk)^T / sqrt(d_head) + M)(Y Wv) Wo.
struct AttentionParams {
  ParamHandle wq = 0, wk = 0, wv = 0, wo = 0;
  int channels = 0;
  int heads = 1;

  template <typename T>
  static AttentionParams make(ParamStore<T>& store, Initializer& init, const std::string& name, int d, int heads) {
    if (heads <= 0 || d % heads != 0) throw std::invalid_argument("AttentionParams: d not divisible by heads");
    AttentionParams a;
    a.channels = d;
    a.heads = heads;
    a.wq = store.add(name + ".wq", d, d);
    a.wk = store.add(name + ".wk", d, d);
    a.wv = store.add(name + ".wv", d, d);
    a.wo = store.add(name + ".wo", d, d);
    init.xavier(store[a.wq].value);
    init.xavier(store[a.wk].value);
    init.xavier(store[a.wv].value);
    init.xavier(store[a.wo].value);
    return a;
  }

  /// Key/value projections of a memory sequence, reusable across queries.
  template <typename T>
  std::pair<Var, Var> project_memory(Graph<T>& g, Var y) const {
    return {g.matmul(y, g.param(wk)), g.matmul(y, g.param(wv))};
  }

  template <typename T>
  Var attend(Graph<T>& g, Var x, Var keys, Var values, const AttnMask* mask) const {
    Var q = g.matmul(x, g.param(wq));
    Var z = g.attention(q, keys, values, heads, mask);
    return g.matmul(z, g.param(wo));
  }

  template <typename T>
  Var operator()(Graph<T>& g, Var x, Var y, const AttnMask* mask) const {
    auto [k, v] = project_memory(g, y);
    return attend(g, x, k, v, mask);
  }
};

/// Convenience wrapper: attention(X, Y, params, mask).
template <typename T>
Var attention(Graph<T>& g, Var x, Var y, const AttentionParams& params, const AttnMask* mask) {
  return params(g, x, y, mask);
}

/// Position-wise two-layer transform with GELU.
struct FeedForward {
  Linear up;
  Linear down;

  template <typename T>
  static FeedForward make(ParamStore<T>& store, Initializer& init, const std::string& name, int d, int hidden) {
    return {Linear::make(store, init, name + ".up", d, hidden), Linear::make(store, init, name + ".down", hidden, d)};
  }

  template <typename T>
  Var operator()(Graph<T>& g, Var x) const {
    return down(g, g.gelu(up(g, x)));
  }
};

/// Pre-normalized residual feed-forward: x + ff(ln(x)).
template <typename T>
Var ff_residual(Graph<T>& g, Var x, const LayerNorm& ln, const FeedForward& ff) {
  return g.add(x, ff(g, ln(g, x)));
}

/// Decoder block: masked self-attention, cross-attention to a memory whose
/// keys/values are already projected, feed-forward. Each sub-layer is
/// pre-normalized with an additive skip.
struct DecoderBlock {
  LayerNorm ln_self, ln_cross, ln_ff;
  AttentionParams self_attn, cross_attn;
  FeedForward ff;

  template <typename T>
  static DecoderBlock make(ParamStore<T>& store, Initializer& init, const std::string& name, int d, int heads,
                           int hidden) {
    DecoderBlock b;
    b.ln_self = LayerNorm::make(store, name + ".ln_self", d);
    b.self_attn = AttentionParams::make(store, init, name + ".self", d, heads);
    b.ln_cross = LayerNorm::make(store, name + ".ln_cross", d);
    b.cross_attn = AttentionParams::make(store, init, name + ".cross", d, heads);
    b.ln_ff = LayerNorm::make(store, name + ".ln_ff", d);
    b.ff = FeedForward::make(store, init, name + ".ff", d, hidden);
    return b;
  }

  template <typename T>
  Var operator()(Graph<T>& g, Var x, const AttnMask& self_mask, Var mem_k, Var mem_v) const {
    Var h = ln_self(g, x);
    x = g.add(x, self_attn(g, h, h, &self_mask));
    x = g.add(x, cross_attn.attend(g, ln_cross(g, x), mem_k, mem_v, nullptr));
    return ff_residual(g, x, ln_ff, ff);
  }
};

/// Unmasked self-attention block without positional information.
struct GlobalBlock {
  LayerNorm ln_attn, ln_ff;
  AttentionParams attn;
  FeedForward ff;

  template <typename T>
  static GlobalBlock make(ParamStore<T>& store, Initializer& init, const std::string& name, int d, int heads,
                          int hidden) {
    GlobalBlock b;
    b.ln_attn = LayerNorm::make(store, name + ".ln_attn", d);
    b.attn = AttentionParams::make(store, init, name + ".attn", d, heads);
    b.ln_ff = LayerNorm::make(store, name + ".ln_ff", d);
    b.ff = FeedForward::make(store, init, name + ".ff", d, hidden);
    return b;
  }

  template <typename T>
  Var operator()(Graph<T>& g, Var x) const {
    Var h = ln_attn(g, x);
    x = g.add(x, attn(g, h, h, nullptr));
    return ff_residual(g, x, ln_ff, ff);
  }
};

}  // namespace tabrec::attn
