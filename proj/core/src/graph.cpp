#include "tabrec/graph.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>

namespace tabrec::attn {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

template <typename T>
constexpr T kGeluC = T(0.7978845608028654);  // sqrt(2 / pi)

}  // namespace

template <typename T>
Graph<T>::Graph(ParamStore<T>* params, bool grad_enabled) : params_(params), grad_enabled_(grad_enabled) {
  nodes_.reserve(256);
}

template <typename T>
Var Graph<T>::push(Mat<T> value) {
  nodes_.emplace_back();
  nodes_.back().value = std::move(value);
  requires_grad_.push_back(0);
  return Var{static_cast<int>(nodes_.size() - 1)};
}

template <typename T>
Mat<T>& Graph<T>::grad_ref(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() == 0) {
    const Mat<T>& v = n.external ? *n.external : n.value;
    n.grad = Mat<T>::Zero(v.rows(), v.cols());
  }
  return n.grad;
}

template <typename T>
bool Graph<T>::needs_grad(std::initializer_list<Var> vars) const {
  if (!grad_enabled_) return false;
  for (Var v : vars)
    if (requires_grad_[static_cast<std::size_t>(v.id)]) return true;
  return false;
}

template <typename T>
const Mat<T>& Graph<T>::value(Var v) const {
  const Node& n = nodes_.at(static_cast<std::size_t>(v.id));
  return n.external ? *n.external : n.value;
}

template <typename T>
Var Graph<T>::param(ParamHandle h) {
  require(params_ != nullptr, "Graph::param without a parameter store");
  nodes_.emplace_back();
  Node& n = nodes_.back();
  n.external = &(*params_)[h].value;
  n.param = h;
  n.is_param = true;
  requires_grad_.push_back(grad_enabled_ ? 1 : 0);
  return Var{static_cast<int>(nodes_.size() - 1)};
}

template <typename T>
Var Graph<T>::constant(Mat<T> value) {
  return push(std::move(value));
}

template <typename T>
void Graph<T>::backward(Var loss) {
  require(grad_enabled_, "Graph::backward with gradients disabled");
  require(value(loss).size() == 1, "Graph::backward expects a scalar loss");
  grad_ref(loss.id).setConstant(T(1));
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.grad.size() == 0) continue;
    if (n.is_param) {
      (*params_)[n.param].grad += n.grad;
    } else if (n.backward) {
      n.backward();
    }
  }
}

template <typename T>
Var Graph<T>::matmul(Var a, Var b) {
  require(value(a).cols() == value(b).rows(), "matmul: inner dimension mismatch");
  Mat<T> out;
  matmul_rows(value(a), value(b), out);
  Var r = push(std::move(out));
  if (needs_grad({a, b})) {
    requires_grad_[r.id] = 1;
    nodes_[r.id].backward = [this, a, b, r] {
      const Mat<T>& g = nodes_[r.id].grad;
      if (requires_grad_[a.id]) grad_ref(a.id).noalias() += g * value(b).transpose();
      if (requires_grad_[b.id]) grad_ref(b.id).noalias() += value(a).transpose() * g;
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::linear(Var x, Var w, Var bias) {
  require(value(x).cols() == value(w).rows(), "linear: input width mismatch");
  require(value(bias).rows() == 1 && value(bias).cols() == value(w).cols(), "linear: bias shape mismatch");
  Mat<T> out;
  matmul_rows(value(x), value(w), out);
  out.rowwise() += value(bias).row(0);
  Var r = push(std::move(out));
  if (needs_grad({x, w, bias})) {
    requires_grad_[r.id] = 1;
    nodes_[r.id].backward = [this, x, w, bias, r] {
      const Mat<T>& g = nodes_[r.id].grad;
      if (requires_grad_[x.id]) grad_ref(x.id).noalias() += g * value(w).transpose();
      if (requires_grad_[w.id]) grad_ref(w.id).noalias() += value(x).transpose() * g;
      if (requires_grad_[bias.id]) grad_ref(bias.id) += g.colwise().sum();
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::add(Var a, Var b) {
  require(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(), "add: shape mismatch");
  Var r = push(value(a) + value(b));
  if (needs_grad({a, b})) {
    requires_grad_[r.id] = 1;
    nodes_[r.id].backward = [this, a, b, r] {
      const Mat<T>& g = nodes_[r.id].grad;
      if (requires_grad_[a.id]) grad_ref(a.id) += g;
      if (requires_grad_[b.id]) grad_ref(b.id) += g;
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::add_constant(Var a, const Mat<T>& c) {
  require(value(a).rows() == c.rows() && value(a).cols() == c.cols(), "add_constant: shape mismatch");
  Var r = push(value(a) + c);
  if (needs_grad({a})) {
    requires_grad_[r.id] = 1;
    nodes_[r.id].backward = [this, a, r] { grad_ref(a.id) += nodes_[r.id].grad; };
  }
  return r;
}

template <typename T>
Var Graph<T>::scale(Var a, T factor) {
  Var r = push(value(a) * factor);
  if (needs_grad({a})) {
    requires_grad_[r.id] = 1;
    nodes_[r.id].backward = [this, a, r, factor] { grad_ref(a.id) += nodes_[r.id].grad * factor; };
  }
  return r;
}

template <typename T>
Var Graph<T>::gelu(Var a) {
  const Mat<T>& x = value(a);
  Mat<T> out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const T v = x.data()[i];
    const T t = std::tanh(kGeluC<T> * (v + T(0.044715) * v * v * v));
    out.data()[i] = T(0.5) * v * (T(1) + t);
  }
  Var r = push(std::move(out));
  if (needs_grad({a})) {
    requires_grad_[r.id] = 1;
    nodes_[r.id].backward = [this, a, r] {
      const Mat<T>& x = value(a);
      const Mat<T>& g = nodes_[r.id].grad;
      Mat<T>& ga = grad_ref(a.id);
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        const T v = x.data()[i];
        const T u = kGeluC<T> * (v + T(0.044715) * v * v * v);
        const T t = std::tanh(u);
        const T du = kGeluC<T> * (T(1) + T(3) * T(0.044715) * v * v);
        const T d = T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * du;
        ga.data()[i] += g.data()[i] * d;
      }
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::sigmoid(Var a) {
  Mat<T> out = value(a).unaryExpr([](T v) { return T(1) / (T(1) + std::exp(-v)); });
  Var r = push(std::move(out));
  if (needs_grad({a})) {
    requires_grad_[r.id] = 1;
    nodes_[r.id].backward = [this, a, r] {
      const Mat<T>& y = value(r);
      grad_ref(a.id).array() += nodes_[r.id].grad.array() * y.array() * (T(1) - y.array());
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::layer_norm(Var x, Var gain, Var bias) {
  constexpr T kEps = T(1e-5);
  const Mat<T>& xv = value(x);
  const Eigen::Index n = xv.rows();
  const Eigen::Index d = xv.cols();
  require(value(gain).cols() == d && value(bias).cols() == d, "layer_norm: parameter width mismatch");
  auto xhat = std::make_shared<Mat<T>>(n, d);
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n));
  Mat<T> out(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mean = xv.row(i).sum() / T(d);
    T var = T(0);
    for (Eigen::Index j = 0; j < d; ++j) {
      const T c = xv(i, j) - mean;
      var += c * c;
    }
    var /= T(d);
    const T is = T(1) / std::sqrt(var + kEps);
    (*inv_std)[static_cast<std::size_t>(i)] = is;
    for (Eigen::Index j = 0; j < d; ++j) {
      const T h = (xv(i, j) - mean) * is;
      (*xhat)(i, j) = h;
      out(i, j) = h * value(gain)(0, j) + value(bias)(0, j);
    }
  }
  Var r = push(std::move(out));
  if (needs_grad({x, gain, bias})) {
    requires_grad_[r.id] = 1;
    nodes_[r.id].backward = [this, x, gain, bias, r, xhat, inv_std] {
      const Mat<T>& g = nodes_[r.id].grad;
      const Eigen::Index n = g.rows();
      const Eigen::Index d = g.cols();
      if (requires_grad_[gain.id]) grad_ref(gain.id) += (g.array() * xhat->array()).colwise().sum().matrix();
      if (requires_grad_[bias.id]) grad_ref(bias.id) += g.colwise().sum();
      if (requires_grad_[x.id]) {
        Mat<T>& gx = grad_ref(x.id);
        const auto gainv = value(gain).row(0);
        for (Eigen::Index i = 0; i < n; ++i) {
          T mean_dh = T(0), mean_dh_h = T(0);
          for (Eigen::Index j = 0; j < d; ++j) {
            const T dh = g(i, j) * gainv(j);
            mean_dh += dh;
            mean_dh_h += dh * (*xhat)(i, j);
          }
          mean_dh /= T(d);
          mean_dh_h /= T(d);
          const T is = (*inv_std)[static_cast<std::size_t>(i)];
          for (Eigen::Index j = 0; j < d; ++j) {
            const T dh = g(i, j) * gainv(j);
            gx(i, j) += is * (dh - mean_dh - (*xhat)(i, j) * mean_dh_h);
          }
        }
      }
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::concat_cols(Var a, Var b) {
  const Mat<T>& av = value(a);
  const Mat<T>& bv = value(b);
  require(av.rows() == bv.rows(), "concat_cols: row mismatch");
  Mat<T> out(av.rows(), av.cols() + bv.cols());
  out.leftCols(av.cols()) = av;
  out.rightCols(bv.cols()) = bv;
  Var r = push(std::move(out));
  if (needs_grad({a, b})) {
    requires_grad_[r.id] = 1;
    const Eigen::Index ca = av.cols();
    const Eigen::Index cb = bv.cols();
    nodes_[r.id].backward = [this, a, b, r, ca, cb] {
      const Mat<T>& g = nodes_[r.id].grad;
      if (requires_grad_[a.id]) grad_ref(a.id) += g.leftCols(ca);
      if (requires_grad_[b.id]) grad_ref(b.id) += g.rightCols(cb);
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::gather_rows(Var a, std::vector<int> rows) {
  const Mat<T>& av = value(a);
  Mat<T> out(static_cast<Eigen::Index>(rows.size()), av.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= av.rows())
      throw std::out_of_range("gather_rows: row " + std::to_string(rows[i]) + " out of range");
    out.row(static_cast<Eigen::Index>(i)) = av.row(rows[i]);
  }
  Var r = push(std::move(out));
  if (needs_grad({a})) {
    requires_grad_[r.id] = 1;
    nodes_[r.id].backward = [this, a, r, rows = std::move(rows)] {
      const Mat<T>& g = nodes_[r.id].grad;
      Mat<T>& ga = grad_ref(a.id);
      for (std::size_t i = 0; i < rows.size(); ++i) ga.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::attention(Var q, Var k, Var v, int heads, const AttnMask* mask) {
  const Mat<T>& qv = value(q);
  const Mat<T>& kv = value(k);
  const Mat<T>& vv = value(v);
  const Eigen::Index n = qv.rows();
  const Eigen::Index m = kv.rows();
  const Eigen::Index d = qv.cols();
  require(heads > 0 && d % heads == 0, "attention: channels not divisible by heads");
  require(kv.cols() == d && vv.cols() == d && vv.rows() == m, "attention: key/value shape mismatch");
  require(m > 0, "attention: no keys");
  if (mask) {
    require(mask->queries() == static_cast<std::size_t>(n) && mask->keys() == static_cast<std::size_t>(m),
            "attention: mask shape mismatch");
  }
  const Eigen::Index dh = d / heads;
  const T scale = T(1) / std::sqrt(T(dh));

  // Visible key lists per query, in increasing key order.
  std::vector<std::vector<Eigen::Index>> vis;
  if (mask) {
    vis.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < m; ++j)
        if (mask->visible(static_cast<std::size_t>(i), static_cast<std::size_t>(j))) vis[i].push_back(j);
      if (vis[i].empty()) throw std::invalid_argument("attention: fully masked query row");
    }
  }

  const bool keep = needs_grad({q, k, v});
  auto probs = std::make_shared<std::vector<Mat<T>>>();
  if (keep) probs->assign(static_cast<std::size_t>(heads), Mat<T>::Zero(n, m));

  Mat<T> out = Mat<T>::Zero(n, d);
  std::vector<T> s(static_cast<std::size_t>(m));
  for (int h = 0; h < heads; ++h) {
    const Eigen::Index off = h * dh;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto qi = qv.row(i).segment(off, dh);
      const std::size_t cnt = mask ? vis[i].size() : static_cast<std::size_t>(m);
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t t = 0; t < cnt; ++t) {
        const Eigen::Index j = mask ? vis[i][t] : static_cast<Eigen::Index>(t);
        s[t] = qi.dot(kv.row(j).segment(off, dh)) * scale;
        if (s[t] > mx) mx = s[t];
      }
      T sum = T(0);
      for (std::size_t t = 0; t < cnt; ++t) {
        s[t] = std::exp(s[t] - mx);
        sum += s[t];
      }
      auto oi = out.row(i).segment(off, dh);
      for (std::size_t t = 0; t < cnt; ++t) {
        const Eigen::Index j = mask ? vis[i][t] : static_cast<Eigen::Index>(t);
        const T p = s[t] / sum;
        oi += p * vv.row(j).segment(off, dh);
        if (keep) (*probs)[static_cast<std::size_t>(h)](i, j) = p;
      }
    }
  }

  Var r = push(std::move(out));
  if (keep) {
    requires_grad_[r.id] = 1;
    nodes_[r.id].backward = [this, q, k, v, r, heads, dh, scale, probs] {
      const Mat<T>& g = nodes_[r.id].grad;
      const Mat<T>& qv = value(q);
      const Mat<T>& kv = value(k);
      const Mat<T>& vv = value(v);
      for (int h = 0; h < heads; ++h) {
        const Eigen::Index off = h * dh;
        const Mat<T>& p = (*probs)[static_cast<std::size_t>(h)];
        const Mat<T> go = g.middleCols(off, dh);
        if (requires_grad_[v.id]) grad_ref(v.id).middleCols(off, dh).noalias() += p.transpose() * go;
        Mat<T> dp = go * vv.middleCols(off, dh).transpose();
        const Eigen::Matrix<T, Eigen::Dynamic, 1> rowdot = (p.array() * dp.array()).rowwise().sum();
        Mat<T> ds = (p.array() * (dp.colwise() - rowdot).array()).matrix() * scale;
        if (requires_grad_[q.id]) grad_ref(q.id).middleCols(off, dh).noalias() += ds * kv.middleCols(off, dh);
        if (requires_grad_[k.id])
          grad_ref(k.id).middleCols(off, dh).noalias() += ds.transpose() * qv.middleCols(off, dh);
      }
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::im2col(Var x, int height, int width, int channels, int ksize, int stride, int pad) {
  const Mat<T>& xv = value(x);
  require(xv.rows() == static_cast<Eigen::Index>(height) * width && xv.cols() == channels,
          "im2col: input shape mismatch");
  const int oh = (height + 2 * pad - ksize) / stride + 1;
  const int ow = (width + 2 * pad - ksize) / stride + 1;
  require(oh > 0 && ow > 0, "im2col: empty output");
  Mat<T> out = Mat<T>::Zero(static_cast<Eigen::Index>(oh) * ow, static_cast<Eigen::Index>(ksize) * ksize * channels);
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox)
      for (int ky = 0; ky < ksize; ++ky)
        for (int kx = 0; kx < ksize; ++kx) {
          const int iy = oy * stride - pad + ky;
          const int ix = ox * stride - pad + kx;
          if (iy < 0 || iy >= height || ix < 0 || ix >= width) continue;
          out.row(oy * ow + ox).segment((ky * ksize + kx) * channels, channels) = xv.row(iy * width + ix);
        }
  Var r = push(std::move(out));
  if (needs_grad({x})) {
    requires_grad_[r.id] = 1;
    nodes_[r.id].backward = [=, this] {
      const Mat<T>& g = nodes_[r.id].grad;
      Mat<T>& gx = grad_ref(x.id);
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox)
          for (int ky = 0; ky < ksize; ++ky)
            for (int kx = 0; kx < ksize; ++kx) {
              const int iy = oy * stride - pad + ky;
              const int ix = ox * stride - pad + kx;
              if (iy < 0 || iy >= height || ix < 0 || ix >= width) continue;
              gx.row(iy * width + ix) += g.row(oy * ow + ox).segment((ky * ksize + kx) * channels, channels);
            }
    };
  }
  return r;
}

namespace {

// Row-wise log-softmax.
template <typename T>
Mat<T> log_softmax(const Mat<T>& logits) {
  Mat<T> out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const T mx = logits.row(i).maxCoeff();
    const T lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
    out.row(i) = logits.row(i).array() - lse;
  }
  return out;
}

}  // namespace

template <typename T>
Var Graph<T>::cross_entropy(Var logits, std::span<const int> targets, int ignore) {
  const Mat<T>& lv = value(logits);
  require(static_cast<std::size_t>(lv.rows()) == targets.size(), "cross_entropy: target count mismatch");
  auto lsm = std::make_shared<Mat<T>>(log_softmax(lv));
  std::vector<int> tg(targets.begin(), targets.end());
  T total = T(0);
  int count = 0;
  for (std::size_t i = 0; i < tg.size(); ++i) {
    if (tg[i] == ignore) continue;
    require(tg[i] >= 0 && tg[i] < lv.cols(), "cross_entropy: target out of range");
    total -= (*lsm)(static_cast<Eigen::Index>(i), tg[i]);
    ++count;
  }
  Mat<T> out(1, 1);
  out(0, 0) = count ? total / T(count) : T(0);
  Var r = push(std::move(out));
  if (count && needs_grad({logits})) {
    requires_grad_[r.id] = 1;
    nodes_[r.id].backward = [this, logits, r, lsm, tg = std::move(tg), ignore, count] {
      const T g = nodes_[r.id].grad(0, 0) / T(count);
      Mat<T>& gl = grad_ref(logits.id);
      for (std::size_t i = 0; i < tg.size(); ++i) {
        if (tg[i] == ignore) continue;
        const auto row = static_cast<Eigen::Index>(i);
        gl.row(row) += g * lsm->row(row).array().exp().matrix();
        gl(row, tg[i]) -= g;
      }
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::kl_to_reference(Var logits, const Mat<T>& reference) {
  const Mat<T>& lv = value(logits);
  require(lv.rows() == reference.rows() && lv.cols() == reference.cols(), "kl_to_reference: shape mismatch");
  auto lsm = std::make_shared<Mat<T>>(log_softmax(lv));
  T total = T(0);
  for (Eigen::Index i = 0; i < lv.rows(); ++i)
    for (Eigen::Index j = 0; j < lv.cols(); ++j) {
      const T p = reference(i, j);
      if (p > T(0)) total += p * (std::log(p) - (*lsm)(i, j));
    }
  const Eigen::Index n = lv.rows();
  Mat<T> out(1, 1);
  out(0, 0) = n ? total / T(n) : T(0);
  Var r = push(std::move(out));
  if (n && needs_grad({logits})) {
    requires_grad_[r.id] = 1;
    auto ref = std::make_shared<Mat<T>>(reference);
    nodes_[r.id].backward = [this, logits, r, lsm, ref, n] {
      const T g = nodes_[r.id].grad(0, 0) / T(n);
      // d/dz sum_j p_j (log p_j - log q_j) = q * sum_j p_j - p
      const Eigen::Matrix<T, Eigen::Dynamic, 1> mass = ref->rowwise().sum();
      Mat<T> q = lsm->array().exp().matrix();
      grad_ref(logits.id) += g * ((q.array().colwise() * mass.array()).matrix() - *ref);
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::l1_loss(Var pred, const Mat<T>& target) {
  const Mat<T>& pv = value(pred);
  require(pv.rows() == target.rows() && pv.cols() == target.cols(), "l1_loss: shape mismatch");
  const Eigen::Index n = pv.size();
  Mat<T> out(1, 1);
  out(0, 0) = n ? (pv - target).cwiseAbs().sum() / T(n) : T(0);
  Var r = push(std::move(out));
  if (n && needs_grad({pred})) {
    requires_grad_[r.id] = 1;
    auto tgt = std::make_shared<Mat<T>>(target);
    nodes_[r.id].backward = [this, pred, r, tgt, n] {
      const T g = nodes_[r.id].grad(0, 0) / T(n);
      const Mat<T>& pv = value(pred);
      Mat<T>& gp = grad_ref(pred.id);
      for (Eigen::Index i = 0; i < pv.size(); ++i) {
        const T diff = pv.data()[i] - tgt->data()[i];
        gp.data()[i] += g * (diff > T(0) ? T(1) : (diff < T(0) ? T(-1) : T(0)));
      }
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::weighted_sum(std::span<const Var> terms, std::span<const T> weights) {
  require(terms.size() == weights.size(), "weighted_sum: weight count mismatch");
  Mat<T> out = Mat<T>::Zero(1, 1);
  for (std::size_t i = 0; i < terms.size(); ++i) {
    require(value(terms[i]).size() == 1, "weighted_sum: terms must be scalars");
    out(0, 0) += weights[i] * value(terms[i])(0, 0);
  }
  Var r = push(std::move(out));
  bool any = false;
  for (Var t : terms) any = any || (grad_enabled_ && requires_grad_[t.id]);
  if (any) {
    requires_grad_[r.id] = 1;
    std::vector<Var> tv(terms.begin(), terms.end());
    std::vector<T> wv(weights.begin(), weights.end());
    nodes_[r.id].backward = [this, r, tv = std::move(tv), wv = std::move(wv)] {
      const T g = nodes_[r.id].grad(0, 0);
      for (std::size_t i = 0; i < tv.size(); ++i)
        if (requires_grad_[tv[i].id]) grad_ref(tv[i].id)(0, 0) += g * wv[i];
    };
  }
  return r;
}

template class Graph<float>;
template class Graph<double>;

}  // namespace tabrec::attn
