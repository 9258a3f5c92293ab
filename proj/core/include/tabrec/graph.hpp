#pragma once

#include <functional>
#include <span>
#include <vector>

#include "tabrec/mask.hpp"
#include "tabrec/params.hpp"
#include "tabrec/tensor.hpp"

namespace tabrec::attn {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode tape over row-major matrices. Every op appends a node; with
/// gradients disabled no backward closures are recorded.
///
/// Forward kernels compute each output row independently of the other rows
/// (see matmul_rows), so a prefix of a sequence yields bit-identical rows to
/// the same prefix inside a longer sequence when the attention mask hides the
/// extra positions.
template <typename T>
class Graph {
 public:
  explicit Graph(ParamStore<T>* params, bool grad_enabled = true);

  bool grad_enabled() const { return grad_enabled_; }

  Var param(ParamHandle h);
  Var constant(Mat<T> value);

  const Mat<T>& value(Var v) const;
  /// Gradient accumulated into v by backward(); empty if none reached it.
  const Mat<T>& grad(Var v) const { return nodes_.at(v.id).grad; }
  T scalar(Var v) const { return value(v)(0, 0); }

  /// Seeds d(loss)/d(loss) = 1 and accumulates into the parameter store.
  void backward(Var loss);

  Var matmul(Var a, Var b);
  /// x * w + bias, bias broadcast over rows.
  Var linear(Var x, Var w, Var bias);
  Var add(Var a, Var b);
  Var add_constant(Var a, const Mat<T>& c);
  Var scale(Var a, T factor);
  Var gelu(Var a);
  Var sigmoid(Var a);
  Var layer_norm(Var x, Var gain, Var bias);
  Var concat_cols(Var a, Var b);
  /// out.row(i) = a.row(rows[i]).
  Var gather_rows(Var a, std::vector<int> rows);
  /// Multi-head scaled dot-product attention core: per head
  /// softmax(q k^T / sqrt(d_head) + M) v, heads concatenated. A null mask
  /// means every key is visible.
  Var attention(Var q, Var k, Var v, int heads, const AttnMask* mask);
  /// Patch extraction for a k x k convolution over an (h*w) x c feature map
  /// stored one pixel per row. Output columns are ordered (ky, kx, channel).
  Var im2col(Var x, int height, int width, int channels, int ksize, int stride, int pad);

  /// Mean softmax cross-entropy over rows whose target differs from `ignore`.
  Var cross_entropy(Var logits, std::span<const int> targets, int ignore = -1);
  /// Mean over rows of KL(reference || softmax(logits)); the reference is a
  /// constant and receives no gradient.
  Var kl_to_reference(Var logits, const Mat<T>& reference);
  /// Mean absolute error against a constant target.
  Var l1_loss(Var pred, const Mat<T>& target);
  Var weighted_sum(std::span<const Var> terms, std::span<const T> weights);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat<T> value;
    const Mat<T>* external = nullptr;
    Mat<T> grad;
    std::function<void()> backward;
    ParamHandle param = static_cast<ParamHandle>(-1);
    bool is_param = false;
  };

  Var push(Mat<T> value);
  Mat<T>& grad_ref(int id);
  bool needs_grad(std::initializer_list<Var> vars) const;

  ParamStore<T>* params_;
  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::vector<std::uint8_t> requires_grad_;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace tabrec::attn
