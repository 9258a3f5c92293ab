#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tabrec/netgraph.hpp"
#include "tabrec/trainer.hpp"

namespace tabrec::cli {

enum ExitCode { kOk = 0, kUsage = 1, kDataError = 2, kInvariant = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InvariantViolation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string subcommand;
  net::ModelConfig model;
  train::TrainConfig train;
  std::uint64_t seed = 0;
  bool parallel = true;
  std::string preset = "wide";
  std::size_t count = 100;      // corpus size for gen, bench and each ablation training split
  std::size_t test_count = 20;  // ablation evaluation split
  unsigned workers = 1;
  std::filesystem::path corpus, out, checkpoint, pred, gt;

  /// Resolved configuration as JSON text.
  std::string dump() const;
  /// Applies a JSON config document; unknown keys are usage errors.
  void apply_json(const std::string& text);
};

/// Parses arguments (defaults < --config file < flags) and runs the
/// subcommand. Returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

void cmd_gen(const RunConfig& rc, std::ostream& out);
void cmd_train(const RunConfig& rc, std::ostream& out);
void cmd_infer(const RunConfig& rc, std::ostream& out);
void cmd_eval(const RunConfig& rc, std::ostream& out);

struct BenchRow {
  bool parallel = false;
  double html = 0, bbox = 0, cell = 0;  // mean cumulative seconds
  double passes = 0;                    // mean cell-decoder passes
};

struct BenchReport {
  std::size_t samples = 0;
  double mean_cells = 0;
  double mean_length = 0;  // decoded characters per cell
  BenchRow sequential, parallel;
  double pass_ratio = 0;     // total sequential passes / total parallel passes
  double cell_speedup = 0;   // sequential / parallel cell-stage time
};

BenchReport cmd_bench(const RunConfig& rc, std::ostream& out);

struct AblationRow {
  std::string variant;
  std::string preset;
  double structural = 0;
  double total = 0;
};

/// Trains every {bbox, through, full} x {wide, dense} cell and reports TEDS
/// on a held-out split. Writes ablation.json under rc.out when set.
std::vector<AblationRow> cmd_ablate(const RunConfig& rc, std::ostream& out);

/// Worker count from TABREC_WORKERS, defaulting to 1.
unsigned workers_from_env();

}  // namespace tabrec::cli
