#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "wrp/bias_experiment.hpp"
#include "wrp/dataset.hpp"
#include "wrp/network.hpp"
#include "wrp/run_config.hpp"

namespace wrp {

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int failure = 1;     // verification failed or unexpected error
inline constexpr int usage = 2;       // bad flags, config or architecture
inline constexpr int divergence = 3;  // training diverged
inline constexpr int data = 4;        // dataset or checkpoint unreadable
}  // namespace exit_code

/// Dataset selected by cfg: CIFAR-10 binaries (data_path or $CIFAR10_ROOT), the generated
/// CIFAR-shaped surrogate, or Gaussian blobs; truncated to cfg.subset when nonzero.
Dataset load_dataset(const RunConfig& cfg);

/// cfg.architecture, with batch-norm added for batch-norm algorithms when auto_batchnorm is set.
std::string effective_architecture(const RunConfig& cfg);
/// Parsed and initialized from cfg.seed.
Network build_network(const RunConfig& cfg, const Shape& example_shape);

struct DivergenceInfo {
  std::size_t step = 0;
  std::string layer;
  std::string message;
};

struct TrainOutcome {
  int exit_code = exit_code::ok;
  std::vector<TrainRecord> records;
  std::optional<DivergenceInfo> divergence;
  double final_loss = 0.0;  // mean minibatch loss of the last epoch (NaN without records)
  std::size_t epochs_completed = 0;
};

/// One training run. Rows go to `csv` (if non-empty) as they are produced; the final
/// checkpoint goes to `checkpoint` (if non-empty) only when the run completes.
TrainOutcome train_run(const RunConfig& cfg, const Dataset& data,
                       const std::filesystem::path& csv = {},
                       const std::filesystem::path& checkpoint = {});

/// Writes <out>/train.csv and <out>/checkpoint.wrp and reports on `log`.
int train_cmd(const RunConfig& cfg, std::ostream& log);

struct GridPoint {
  double stepsize = 0.0;
  TrainOutcome outcome;
};

struct SummaryRow {
  std::string label;
  Algorithm algorithm = Algorithm::sgd;
  std::vector<GridPoint> grid;
  double best_stepsize = 0.0;  // NaN when every grid point diverged
  double best_loss = 0.0;      // final-epoch loss at best_stepsize
  std::size_t diverged = 0;
};

inline constexpr std::string_view kSummaryHeader =
    "run,algorithm,best_stepsize,best_final_loss,diverged,grid_size";
std::string format_summary_row(const SummaryRow& row);

/// Runs every config over its stepsize grid on the shared dataset. Diverged grid points are
/// recorded, not fatal. When `merged_csv` is set all rows go there, prefixed with
/// run,algorithm,stepsize. Throws UsageError if configs disagree on dataset or epochs.
std::vector<SummaryRow> compare_runs(const std::vector<RunConfig>& configs, const Dataset& data,
                                     const std::filesystem::path& merged_csv = {},
                                     std::ostream* log = nullptr);

/// Writes <out>/compare.csv and <out>/summary.csv, prints the summary table.
int compare_cmd(const std::vector<RunConfig>& configs, std::ostream& log);

struct BiasExpConfig {
  BiasExperimentParams params;
  std::vector<std::size_t> batches{8, 32, 128, 512};
  std::size_t trials = 100000;
  std::uint64_t seed = 1;
  std::string out = "out";
};
/// Keys: trials, batches (comma list), seed, out, x_mean, x_sd, g_const, g_slope, alpha2,
/// beta2, shared_batch.
void apply_bias_setting(BiasExpConfig& cfg, std::string_view assignment);

/// Writes <out>/bias.csv (batch,measured,standard_error,predicted) and prints the slope.
int bias_exp_cmd(const BiasExpConfig& cfg, std::ostream& log);

}  // namespace wrp
