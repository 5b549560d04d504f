#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "wrp/dataset.hpp"
#include "wrp/network.hpp"
#include "wrp/reparam.hpp"
#include "wrp/stepsize.hpp"

namespace wrp {

enum class Algorithm {
  sgd,
  sgd_fanin,
  rmsprop,
  reparam_canonical,
  reparam_whitening,
  batchnorm_sgd,
  mitigation_schedule,
};

const char* to_string(Algorithm a);
/// Throws UsageError for unknown names.
Algorithm algorithm_from_string(std::string_view name);
bool uses_batchnorm(Algorithm a) noexcept;
bool uses_reparam(Algorithm a) noexcept;

inline constexpr std::size_t kNeverSwitch = std::numeric_limits<std::size_t>::max();

struct OptimizerConfig {
  Algorithm algorithm = Algorithm::sgd;
  double stepsize = 0.01;  // gamma, or eta for rmsprop
  double lambda_ema = 0.95;
  double lambda_rms = 0.1;
  double mu_reg = 1e-8;
  ReparamBounds bounds;
  std::size_t batch_size = 64;
  std::size_t switch_epoch = 1;             // mitigation_schedule only
  bool biased_minibatch_constants = false;  // constants from the current minibatch
  bool identity_input_constants = false;    // force mu = 0, alpha^2 = 1 (reduction tests)
  double weight_decay = 0.0;
  double divergence_loss_limit = 1e6;

  void validate() const;
};

/// One row of the training log. Diagnostics that do not apply are NaN.
struct TrainRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
  double wall_ms = 0.0;
  double alpha2_min = std::numeric_limits<double>::quiet_NaN();
  double alpha2_max = std::numeric_limits<double>::quiet_NaN();
  double beta2_min = std::numeric_limits<double>::quiet_NaN();
  double beta2_max = std::numeric_limits<double>::quiet_NaN();
  double stat_discrepancy = std::numeric_limits<double>::quiet_NaN();
  double relu_dead = std::numeric_limits<double>::quiet_NaN();
};

/// Non-finite (or exploding) loss or parameters. Carries the failing step, the layer that
/// went bad ("loss" when the loss itself did), and the records logged before the failure.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t step, std::string layer, const std::string& what);

  std::size_t step() const noexcept { return step_; }
  const std::string& layer() const noexcept { return layer_; }
  const std::vector<TrainRecord>& history() const noexcept { return history_; }
  void set_history(std::vector<TrainRecord> h) { history_ = std::move(h); }

 private:
  std::size_t step_;
  std::string layer_;
  std::vector<TrainRecord> history_;
};

struct LayerOptState {
  std::optional<MomentState> moments;
  std::optional<ReparamConstants> constants;
  std::optional<RmsState> rms_weights;
  std::optional<RmsState> rms_bias;
};

struct OptState {
  std::vector<LayerOptState> layers;  // one per trainable layer
  std::size_t step = 0;
  std::size_t epoch = 0;
  bool switched = false;
  /// Receives the name of each phase of the update as it happens.
  std::function<void(std::string_view)> trace;
};

/// Allocates exactly the per-layer state the configured algorithm needs.
OptState make_opt_state(const Network& net, const OptimizerConfig& cfg);

/// One forward, one backward, one parameter update.
TrainRecord step(Network& net, const Tensor& x, std::span<const int> labels,
                 const OptimizerConfig& cfg, OptState& state);

/// Batch-norm for epochs before cfg.switch_epoch, then folds every batch-norm layer into
/// the preceding trainable layer and continues with the whitening reparametrization.
TrainRecord mitigation_schedule_step(Network& net, const Tensor& x, std::span<const int> labels,
                                     const OptimizerConfig& cfg, OptState& state);

struct FoldReport {
  std::size_t folded = 0;   // layers absorbed into their predecessor
  std::size_t dropped = 0;  // never-trained layers removed as identity
  double residual = 0.0;    // max |output difference| on the probe batch
};

/// Absorbs running statistics and scale/shift of each batch-norm layer into the trainable
/// layer right before it. Throws FoldError if probe outputs move by more than `tolerance`.
FoldReport fold_batchnorm(Network& net, const Tensor& probe, double tolerance = 1e-8);

/// Fraction of post-ReLU units that are zero for every example of the probe batch.
double relu_death_fraction(const Network& net, const Tensor& probe);

struct RunOptions {
  bool wallclock = false;
  std::size_t probe_size = 256;
  /// Called after every record; returning false stops the run early.
  std::function<bool(const TrainRecord&)> on_record;
};

struct RunResult {
  std::vector<TrainRecord> records;
  OptState state;
};

/// Shuffles with a generator seeded by `seed` each epoch and walks full minibatches of
/// cfg.batch_size (a trailing partial batch is skipped). DivergenceError propagates with
/// the record history attached.
RunResult run_epochs(Network& net, const Dataset& data, const OptimizerConfig& cfg,
                     std::size_t epochs, std::uint64_t seed, const RunOptions& options = {});

/// Mean minibatch loss over the last epoch present in `records` (NaN when empty).
double final_epoch_loss(std::span<const TrainRecord> records);

/// Plain gradient descent on an explicit objective, raising DivergenceError as soon as the
/// value or the iterate stops being finite. Returns the final iterate.
std::vector<double> descend_objective(
    const std::function<double(std::span<const double>)>& value,
    const std::function<std::vector<double>(std::span<const double>)>& gradient,
    std::vector<double> start, double stepsize, std::size_t steps);

}  // namespace wrp
