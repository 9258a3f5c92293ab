#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tabrec/netgraph.hpp"
#include "tabrec/synthgen.hpp"

namespace tabrec::train {

using attn::Mat;

/// Per-position distributions q(x) with the one-hot targets p(x) given as ids.
struct DistributionSeq {
  Mat<double> q;             // positions x vocab, rows sum to 1
  std::vector<int> targets;  // one id per row

  /// Throws std::invalid_argument when a row does not sum to 1 within 1e-6,
  /// holds a negative entry, or the target count differs from the row count.
  void validate() const;
};

struct LossWeights {
  double structure = 1.0;  // each directional cross-entropy
  double kl = 1.0;         // each mutual-learning term
  double content = 1.0;
  double bbox = 1.0;
};

struct LossReport {
  double ce_ltor = 0, ce_rtol = 0;
  double kl_ltor = 0, kl_rtol = 0;
  double content = 0;
  double bbox = 0;
  double total = 0;

  /// Recomputes `total` from the components.
  void sum(const LossWeights& w);
};

/// Row-wise softmax.
Mat<double> softmax_rows(const Mat<double>& logits);

/// Aligns the other direction's per-position distributions with this one:
/// the first rows - 1 rows are reversed and the final (EOS) row stays put.
Mat<double> realign(const Mat<double>& other);

/// KL(p || q), mean over rows. Entries of p equal to 0 contribute 0.
double kl_rows(const Mat<double>& p, const Mat<double>& q);

/// Cross-entropy, mean over rows, of one-hot targets against q.
double ce_rows(const Mat<double>& q, std::span<const int> targets);

/// The two directional cross-entropies and mutual-learning KL terms. Throws
/// std::invalid_argument on length mismatch.
LossReport mutual_loss(const DistributionSeq& q_ltor, const DistributionSeq& q_rtol, const LossWeights& w = {});

/// Mean cross-entropy of logits against targets over positions whose target
/// is not `pad`.
double content_loss(const Mat<double>& logits, std::span<const int> targets, int pad);

/// Mean absolute error over the 4n box components; 0 for an empty table.
/// Throws std::invalid_argument when the lists differ in length.
double bbox_loss(std::span<const net::CellBox> pred, std::span<const net::CellBox> truth);

/// A record turned into model inputs and targets.
struct Example {
  Image image;                             // model side x model side
  std::vector<grammar::TokenId> structure;  // no SOS/EOS
  std::vector<std::size_t> anchors;
  std::vector<grammar::TokenId> content;    // cells joined, each closed by SEP
  net::CellInputs cell_inputs;
  std::vector<net::CellBox> boxes;
};

/// Throws std::invalid_argument when the record does not fit the config
/// (length caps, cell/box counts).
Example make_example(const synth::TableRecord& record, const net::ModelConfig& config);

/// Mutual-learning reference distributions (already realigned).
struct KlReferences {
  Mat<double> for_ltor;  // realigned q(x<-)
  Mat<double> for_rtol;  // realigned q(x->)
};

template <typename T>
struct LossGraph {
  attn::Var total;
  LossReport report;
  KlReferences references;
};

/// Builds the full training loss for one example on g. The KL references are
/// taken from the current forward pass and treated as constants, unless
/// `frozen` is given.
template <typename T>
LossGraph<T> build_loss(attn::Graph<T>& g, const net::TableModel<T>& model, const Example& ex, const LossWeights& w,
                        const KlReferences* frozen = nullptr);

/// Decoupled weight decay Adam.
template <typename T>
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
  };

  AdamW(attn::ParamStore<T>& params, Options opt);
  /// Applies the accumulated gradients; vectors (1-row tensors) are not decayed.
  void step(double lr);
  long steps() const { return t_; }

 private:
  attn::ParamStore<T>* params_;
  Options opt_;
  std::vector<Mat<T>> m_, v_;
  long t_ = 0;
};

/// Scales all gradients so their global L2 norm is at most max_norm. Returns
/// the norm before clipping.
template <typename T>
double clip_grad_norm(attn::ParamStore<T>& params, double max_norm);

/// Staged schedule: base for the first 25/30 of the epochs, base/10 up to
/// 28/30, base/100 afterwards.
double staged_lr(double base, int epoch, int total_epochs);
/// First epoch of the second and third stage.
std::pair<int, int> stage_boundaries(int total_epochs);

struct TrainConfig {
  int epochs = 30;
  double lr = 1e-3;
  int batch = 8;
  double clip = 1.0;
  double weight_decay = 0.01;
  LossWeights weights;
  std::uint64_t seed = 0;
  unsigned workers = 1;
  std::filesystem::path metrics_log;  // JSONL, skipped when empty
};

struct EpochReport {
  int epoch = 0;
  double lr = 0;
  LossReport mean;
  double seconds = 0;
};

/// Raised when a loss component turns NaN or infinite.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Trains in place. `on_epoch` is invoked after every epoch.
std::vector<EpochReport> train(net::TableModel<float>& model, std::span<const synth::TableRecord> corpus,
                               const TrainConfig& config,
                               const std::function<void(const EpochReport&)>& on_epoch = {});

struct GradcheckResult {
  double max_rel_error = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0, numeric = 0;
  std::size_t checked = 0;
};

/// Central difference stencils: (f(x+h) - f(x-h)) / 2h, or the fourth-order
/// (f(x-2h) - 8f(x-h) + 8f(x+h) - f(x+2h)) / 12h.
enum class Stencil { kTwoPoint, kFourPoint };

/// Central differences on every scalar of every parameter tensor (or at most
/// `per_tensor` evenly spaced scalars of each when nonzero). The relative
/// error is |a - n| / max(|a|, |n|, floor).
GradcheckResult gradcheck(net::TableModel<double>& model, const Example& ex, const LossWeights& w = {},
                          double h = 1e-5, std::size_t per_tensor = 0, double floor = 1e-6,
                          Stencil stencil = Stencil::kTwoPoint);

}  // namespace tabrec::train
