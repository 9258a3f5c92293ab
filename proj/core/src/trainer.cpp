#include "tabrec/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

namespace tabrec::train {

using attn::Graph;
using attn::Var;
using grammar::TokenId;

void DistributionSeq::validate() const {
  if (static_cast<std::size_t>(q.rows()) != targets.size())
    throw std::invalid_argument("DistributionSeq: " + std::to_string(q.rows()) + " rows but " +
                                std::to_string(targets.size()) + " targets");
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    if ((q.row(i).array() < 0).any()) throw std::invalid_argument("DistributionSeq: negative probability");
    if (std::abs(q.row(i).sum() - 1.0) > 1e-6)
      throw std::invalid_argument("DistributionSeq: row " + std::to_string(i) + " does not sum to 1");
  }
}

void LossReport::sum(const LossWeights& w) {
  total = w.structure * (ce_ltor + ce_rtol) + w.kl * (kl_ltor + kl_rtol) + w.content * content + w.bbox * bbox;
}

Mat<double> softmax_rows(const Mat<double>& logits) {
  Mat<double> out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    out.row(i) = (logits.row(i).array() - m).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

Mat<double> realign(const Mat<double>& other) {
  Mat<double> out = other;
  const Eigen::Index n = other.rows() - 1;  // last row predicts EOS
  for (Eigen::Index i = 0; i < n; ++i) out.row(i) = other.row(n - 1 - i);
  return out;
}

double kl_rows(const Mat<double>& p, const Mat<double>& q) {
  if (p.rows() != q.rows() || p.cols() != q.cols()) throw std::invalid_argument("kl_rows: shape mismatch");
  if (p.rows() == 0) return 0.0;
  double total = 0;
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (Eigen::Index j = 0; j < p.cols(); ++j)
      if (p(i, j) > 0) total += p(i, j) * (std::log(p(i, j)) - std::log(q(i, j)));
  return total / static_cast<double>(p.rows());
}

double ce_rows(const Mat<double>& q, std::span<const int> targets) {
  if (static_cast<std::size_t>(q.rows()) != targets.size()) throw std::invalid_argument("ce_rows: length mismatch");
  if (targets.empty()) return 0.0;
  double total = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) total -= std::log(q(static_cast<Eigen::Index>(i), targets[i]));
  return total / static_cast<double>(targets.size());
}

LossReport mutual_loss(const DistributionSeq& q_ltor, const DistributionSeq& q_rtol, const LossWeights& w) {
  if (q_ltor.q.rows() != q_rtol.q.rows() || q_ltor.q.cols() != q_rtol.q.cols())
    throw std::invalid_argument("mutual_loss: the two directions differ in shape");
  q_ltor.validate();
  q_rtol.validate();
  LossReport r;
  r.ce_ltor = ce_rows(q_ltor.q, q_ltor.targets);
  r.ce_rtol = ce_rows(q_rtol.q, q_rtol.targets);
  r.kl_ltor = kl_rows(realign(q_rtol.q), q_ltor.q);
  r.kl_rtol = kl_rows(realign(q_ltor.q), q_rtol.q);
  r.sum(w);
  return r;
}

double content_loss(const Mat<double>& logits, std::span<const int> targets, int pad) {
  if (static_cast<std::size_t>(logits.rows()) != targets.size())
    throw std::invalid_argument("content_loss: length mismatch");
  double total = 0;
  int count = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] == pad) continue;
    const auto row = logits.row(static_cast<Eigen::Index>(i));
    const double m = row.maxCoeff();
    const double lse = m + std::log((row.array() - m).exp().sum());
    total += lse - row(targets[i]);
    ++count;
  }
  return count ? total / count : 0.0;
}

double bbox_loss(std::span<const net::CellBox> pred, std::span<const net::CellBox> truth) {
  if (pred.size() != truth.size()) throw std::invalid_argument("bbox_loss: box count mismatch");
  if (pred.empty()) return 0.0;
  double total = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    total += std::abs(pred[i].cx - truth[i].cx) + std::abs(pred[i].cy - truth[i].cy) +
             std::abs(pred[i].w - truth[i].w) + std::abs(pred[i].h - truth[i].h);
  return total / (4.0 * static_cast<double>(pred.size()));
}

Example make_example(const synth::TableRecord& record, const net::ModelConfig& config) {
  Example ex;
  ex.image = prepare_image(record.image, config.image_side);
  ex.structure = record.structure.ids;
  if (ex.structure.size() > static_cast<std::size_t>(config.structure_cap))
    throw std::invalid_argument("make_example: structure longer than the cap");
  ex.anchors = grammar::cell_anchors(ex.structure);
  if (ex.anchors.size() != record.contents.size())
    throw std::invalid_argument("make_example: " + std::to_string(ex.anchors.size()) + " cells in structure, " +
                                std::to_string(record.contents.size()) + " contents");
  if (record.boxes.size() != record.contents.size()) throw std::invalid_argument("make_example: box count mismatch");
  std::vector<grammar::TokenSeq> cells;
  for (const auto& c : record.contents) cells.push_back(grammar::tokenize_content(c));
  ex.content = grammar::concat_cells(cells).ids;
  if (ex.content.size() > static_cast<std::size_t>(config.content_cap))
    throw std::invalid_argument("make_example: content longer than the cap");
  ex.cell_inputs = net::teacher_cell_inputs(ex.content);
  ex.boxes = record.boxes;
  return ex;
}

namespace {

template <typename T>
Mat<double> probs(const Graph<T>& g, Var logits) {
  return softmax_rows(g.value(logits).template cast<double>());
}

template <typename T>
Mat<T> box_matrix(std::span<const net::CellBox> boxes) {
  Mat<T> m(static_cast<Eigen::Index>(boxes.size()), 4);
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    m(r, 0) = T(boxes[i].cx);
    m(r, 1) = T(boxes[i].cy);
    m(r, 2) = T(boxes[i].w);
    m(r, 3) = T(boxes[i].h);
  }
  return m;
}

}  // namespace

template <typename T>
LossGraph<T> build_loss(Graph<T>& g, const net::TableModel<T>& model, const Example& ex, const LossWeights& w,
                        const KlReferences* frozen) {
  const auto& sv = grammar::Vocab::structure();
  const auto& cv = grammar::Vocab::content();
  const net::Memory<T> mem = model.project_memory(g, model.encode_image(g, ex.image));

  std::vector<TokenId> rtol(ex.structure.rbegin(), ex.structure.rend());
  std::vector<int> tgt_ltor(ex.structure.begin(), ex.structure.end());
  std::vector<int> tgt_rtol(rtol.begin(), rtol.end());
  tgt_ltor.push_back(sv.eos());
  tgt_rtol.push_back(sv.eos());

  const net::HtmlOutput out_l = model.html_decoder(g, mem, ex.structure, grammar::Direction::kLtoR);
  const net::HtmlOutput out_r = model.html_decoder(g, mem, rtol, grammar::Direction::kRtoL);

  LossGraph<T> lg;
  if (frozen) {
    lg.references = *frozen;
  } else {
    lg.references.for_ltor = realign(probs(g, out_r.logits));
    lg.references.for_rtol = realign(probs(g, out_l.logits));
  }

  std::vector<Var> terms;
  std::vector<T> weights;
  Var ce_l = g.cross_entropy(out_l.logits, tgt_ltor);
  Var ce_r = g.cross_entropy(out_r.logits, tgt_rtol);
  Var kl_l = g.kl_to_reference(out_l.logits, lg.references.for_ltor.template cast<T>());
  Var kl_r = g.kl_to_reference(out_r.logits, lg.references.for_rtol.template cast<T>());
  terms = {ce_l, ce_r, kl_l, kl_r};
  weights = {T(w.structure), T(w.structure), T(w.kl), T(w.kl)};
  lg.report.ce_ltor = double(g.scalar(ce_l));
  lg.report.ce_rtol = double(g.scalar(ce_r));
  lg.report.kl_ltor = double(g.scalar(kl_l));
  lg.report.kl_rtol = double(g.scalar(kl_r));

  if (!ex.anchors.empty()) {
    Var cells = model.fetch_cells(g, out_l.hidden, ex.anchors);
    Var refined = model.refine(g, cells);
    Var boxes = model.bbox_head(g, refined);
    Var bb = g.l1_loss(boxes, box_matrix<T>(ex.boxes));
    Var feat = model.cell_conditioning(g, refined, boxes);
    Var logits = model.cell_decoder(g, mem, ex.cell_inputs, feat);
    std::vector<int> tgt(ex.content.begin(), ex.content.end());
    Var ce_c = g.cross_entropy(logits, tgt, cv.pad());
    terms.push_back(ce_c);
    weights.push_back(T(w.content));
    terms.push_back(bb);
    weights.push_back(T(w.bbox));
    lg.report.content = double(g.scalar(ce_c));
    lg.report.bbox = double(g.scalar(bb));
  }
  lg.total = g.weighted_sum(terms, weights);
  lg.report.sum(w);
  return lg;
}

template LossGraph<float> build_loss(Graph<float>&, const net::TableModel<float>&, const Example&,
                                     const LossWeights&, const KlReferences*);
template LossGraph<double> build_loss(Graph<double>&, const net::TableModel<double>&, const Example&,
                                      const LossWeights&, const KlReferences*);

template <typename T>
AdamW<T>::AdamW(attn::ParamStore<T>& params, Options opt) : params_(&params), opt_(opt) {
  for (const auto& p : params) {
    m_.push_back(Mat<T>::Zero(p.value.rows(), p.value.cols()));
    v_.push_back(Mat<T>::Zero(p.value.rows(), p.value.cols()));
  }
}

template <typename T>
void AdamW<T>::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  std::size_t i = 0;
  for (auto& p : *params_) {
    Mat<T>& m = m_[i];
    Mat<T>& v = v_[i];
    ++i;
    m = T(opt_.beta1) * m + T(1 - opt_.beta1) * p.grad;
    v = T(opt_.beta2) * v + T(1 - opt_.beta2) * p.grad.cwiseProduct(p.grad);
    if (lr == 0.0) continue;
    if (p.value.rows() > 1 && opt_.weight_decay > 0) p.value *= T(1 - lr * opt_.weight_decay);
    const T step = T(lr / bc1);
    const T root = T(1.0 / std::sqrt(bc2));
    p.value.array() -= step * m.array() / ((v.array().sqrt() * root) + T(opt_.eps));
  }
}

template class AdamW<float>;
template class AdamW<double>;

template <typename T>
double clip_grad_norm(attn::ParamStore<T>& params, double max_norm) {
  double sq = 0;
  for (const auto& p : params) sq += p.grad.template cast<double>().squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const T s = T(max_norm / norm);
    for (auto& p : params) p.grad *= s;
  }
  return norm;
}

template double clip_grad_norm(attn::ParamStore<float>&, double);
template double clip_grad_norm(attn::ParamStore<double>&, double);

std::pair<int, int> stage_boundaries(int total_epochs) {
  const int b1 = static_cast<int>(std::lround(total_epochs * 25.0 / 30.0));
  const int b2 = static_cast<int>(std::lround(total_epochs * 28.0 / 30.0));
  return {b1, b2};
}

double staged_lr(double base, int epoch, int total_epochs) {
  const auto [b1, b2] = stage_boundaries(total_epochs);
  if (epoch < b1) return base;
  if (epoch < b2) return base / 10.0;
  return base / 100.0;
}

namespace {

bool finite(const LossReport& r) {
  for (double v : {r.ce_ltor, r.ce_rtol, r.kl_ltor, r.kl_rtol, r.content, r.bbox, r.total})
    if (!std::isfinite(v)) return false;
  return true;
}

std::string describe(const LossReport& r) {
  std::ostringstream os;
  os << "ce_ltor=" << r.ce_ltor << " ce_rtol=" << r.ce_rtol << " kl_ltor=" << r.kl_ltor << " kl_rtol=" << r.kl_rtol
     << " content=" << r.content << " bbox=" << r.bbox;
  return os.str();
}

std::vector<Example> prepare_all(std::span<const synth::TableRecord> corpus, const net::ModelConfig& config,
                                 unsigned workers) {
  std::vector<Example> out(corpus.size());
  auto work = [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) out[i] = make_example(corpus[i], config);
  };
  workers = std::max(1u, workers);
  if (workers == 1 || corpus.size() < 2) {
    work(0, corpus.size());
    return out;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (corpus.size() + workers - 1) / workers;
  for (unsigned w = 0; w < workers; ++w) {
    const std::size_t b = w * chunk, e = std::min(corpus.size(), b + chunk);
    if (b < e) pool.emplace_back(work, b, e);
  }
  for (auto& t : pool) t.join();
  return out;
}

}  // namespace

std::vector<EpochReport> train(net::TableModel<float>& model, std::span<const synth::TableRecord> corpus,
                               const TrainConfig& config, const std::function<void(const EpochReport&)>& on_epoch) {
  if (config.epochs < 0 || config.batch < 1) throw std::invalid_argument("train: epochs >= 0 and batch >= 1 required");
  const std::vector<Example> examples = prepare_all(corpus, model.config(), config.workers);
  auto& params = model.params();
  AdamW<float> opt(params, {0.9, 0.999, 1e-8, config.weight_decay});

  std::ofstream log;
  if (!config.metrics_log.empty()) {
    log.open(config.metrics_log);
    if (!log) throw std::runtime_error("cannot write metrics log " + config.metrics_log.string());
  }

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<EpochReport> reports;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = staged_lr(config.lr, epoch, config.epochs);
    std::mt19937_64 rng(config.seed * 1000003ULL + static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), rng);

    LossReport acc;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch));
      const float inv = 1.0f / static_cast<float>(end - start);
      params.zero_grad();
      for (std::size_t k = start; k < end; ++k) {
        const Example& ex = examples[order[k]];
        Graph<float> g(&params, true);
        LossGraph<float> lg = build_loss(g, model, ex, config.weights);
        if (!finite(lg.report))
          throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch) + ", sample " +
                                 std::to_string(order[k]) + ": " + describe(lg.report));
        Var scaled = g.scale(lg.total, inv);
        g.backward(scaled);
        acc.ce_ltor += lg.report.ce_ltor;
        acc.ce_rtol += lg.report.ce_rtol;
        acc.kl_ltor += lg.report.kl_ltor;
        acc.kl_rtol += lg.report.kl_rtol;
        acc.content += lg.report.content;
        acc.bbox += lg.report.bbox;
      }
      const double norm = clip_grad_norm(params, config.clip);
      if (!std::isfinite(norm))
        throw TrainingDiverged("non-finite gradient norm at epoch " + std::to_string(epoch));
      opt.step(lr);
    }

    const double n = std::max<double>(1.0, static_cast<double>(examples.size()));
    EpochReport rep;
    rep.epoch = epoch;
    rep.lr = lr;
    rep.mean = {acc.ce_ltor / n, acc.ce_rtol / n, acc.kl_ltor / n, acc.kl_rtol / n, acc.content / n, acc.bbox / n, 0};
    rep.mean.sum(config.weights);
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (log) {
      nlohmann::json j{{"epoch", epoch},
                       {"lr", lr},
                       {"ce_ltor", rep.mean.ce_ltor},
                       {"ce_rtol", rep.mean.ce_rtol},
                       {"kl_ltor", rep.mean.kl_ltor},
                       {"kl_rtol", rep.mean.kl_rtol},
                       {"content", rep.mean.content},
                       {"bbox", rep.mean.bbox},
                       {"total", rep.mean.total}};
      log << j.dump() << '\n' << std::flush;
    }
    reports.push_back(rep);
    if (on_epoch) on_epoch(rep);
  }
  return reports;
}

GradcheckResult gradcheck(net::TableModel<double>& model, const Example& ex, const LossWeights& w, double h,
                          std::size_t per_tensor, double floor, Stencil stencil) {
  auto& params = model.params();
  params.zero_grad();
  KlReferences refs;
  {
    Graph<double> g(&params, true);
    LossGraph<double> lg = build_loss(g, model, ex, w);
    refs = lg.references;
    g.backward(lg.total);
  }
  auto loss_at = [&] {
    Graph<double> g(&params, false);
    return g.scalar(build_loss(g, model, ex, w, &refs).total);
  };

  GradcheckResult res;
  for (auto& p : params) {
    const Eigen::Index size = p.value.size();
    Eigen::Index stride = 1;
    if (per_tensor > 0 && static_cast<std::size_t>(size) > per_tensor)
      stride = size / static_cast<Eigen::Index>(per_tensor);
    for (Eigen::Index i = 0; i < size; i += stride) {
      double& x = p.value.data()[i];
      const double orig = x;
      auto at = [&](double offset) {
        x = orig + offset;
        const double l = loss_at();
        x = orig;
        return l;
      };
      const double numeric = stencil == Stencil::kTwoPoint
                                 ? (at(h) - at(-h)) / (2 * h)
                                 : (at(-2 * h) - 8 * at(-h) + 8 * at(h) - at(2 * h)) / (12 * h);
      const double analytic = p.grad.data()[i];
      const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
      ++res.checked;
      if (rel > res.max_rel_error || res.worst_param.empty()) {
        if (rel >= res.max_rel_error) {
          res.max_rel_error = rel;
          res.worst_param = p.name;
          res.worst_index = static_cast<std::size_t>(i);
          res.analytic = analytic;
          res.numeric = numeric;
        }
      }
    }
  }
  return res;
}

}  // namespace tabrec::train
