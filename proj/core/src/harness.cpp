#include "wrp/harness.hpp"

#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <limits>
#include <sstream>

#include "wrp/architecture.hpp"
#include "wrp/checkpoint.hpp"
#include "wrp/errors.hpp"
#include "wrp/records.hpp"

namespace wrp {

namespace fs = std::filesystem;

Dataset load_dataset(const RunConfig& cfg) {
  Dataset d;
  if (cfg.dataset == "cifar10") {
    std::string root = cfg.data_path;
    if (root.empty()) {
      const char* env = std::getenv(kDatasetRootEnv);
      if (env) root = env;
    }
    if (root.empty())
      throw FormatError(std::string("no CIFAR-10 location: set data_path or ") + kDatasetRootEnv);
    d = load_cifar10(root, cfg.subset);
  } else if (cfg.dataset == "cifar_like") {
    d = gen_cifar_like(cfg.data_seed, cfg.subset == 0 ? 5000 : cfg.subset);
  } else if (cfg.dataset == "synthetic") {
    d = gen_synthetic(cfg.data_seed, cfg.synthetic_count, cfg.synthetic_dims,
                      cfg.synthetic_classes, cfg.synthetic_separation);
    if (cfg.subset != 0) d = d.head(cfg.subset);
  } else {
    throw UsageError("unknown dataset '" + cfg.dataset + "'");
  }
  d.validate();
  return d;
}

std::string effective_architecture(const RunConfig& cfg) {
  if (cfg.auto_batchnorm && uses_batchnorm(cfg.optimizer.algorithm) &&
      cfg.architecture.find("BN") == std::string::npos)
    return with_batchnorm(cfg.architecture);
  return cfg.architecture;
}

Network build_network(const RunConfig& cfg, const Shape& example_shape) {
  Network net = parse_architecture(effective_architecture(cfg), example_shape);
  std::mt19937_64 rng(cfg.seed);
  net.initialize(rng);
  return net;
}

TrainOutcome train_run(const RunConfig& cfg, const Dataset& data, const fs::path& csv,
                       const fs::path& checkpoint) {
  Network net = build_network(cfg, data.example_shape());
  std::optional<CsvWriter> writer;
  if (!csv.empty()) writer.emplace(csv, kRecordHeader);

  RunOptions opts;
  opts.wallclock = cfg.wallclock;
  opts.on_record = [&](const TrainRecord& r) {
    if (writer) writer->row(format_record(r));
    return true;
  };

  TrainOutcome out;
  try {
    RunResult res = run_epochs(net, data, cfg.optimizer, cfg.epochs, cfg.seed, opts);
    out.records = std::move(res.records);
    out.epochs_completed = cfg.epochs;
    if (!checkpoint.empty())
      write_checkpoint(checkpoint, make_checkpoint(net, res.state, config_to_text(cfg)));
  } catch (const DivergenceError& e) {
    out.exit_code = exit_code::divergence;
    out.records = e.history();
    out.divergence = DivergenceInfo{e.step(), e.layer(), e.what()};
    // Completed epochs: those whose last minibatch finished before the failure.
    const std::size_t per_epoch = data.size() / cfg.optimizer.batch_size;
    out.epochs_completed = per_epoch ? out.records.size() / per_epoch : 0;
  }
  out.final_loss = final_epoch_loss(out.records);
  return out;
}

int train_cmd(const RunConfig& cfg, std::ostream& log) {
  const Dataset data = load_dataset(cfg);
  fs::create_directories(cfg.out);
  const fs::path csv = fs::path(cfg.out) / "train.csv";
  const fs::path ckpt = fs::path(cfg.out) / "checkpoint.wrp";
  log << "train " << cfg.label() << " on " << data.name << " (" << data.size()
      << " examples), architecture " << effective_architecture(cfg) << '\n';
  fs::remove(ckpt);  // a diverged run must not leave an older checkpoint behind
  const TrainOutcome out = train_run(cfg, data, csv, ckpt);
  if (out.divergence) {
    log << "DIVERGED at step " << out.divergence->step << " in " << out.divergence->layer
        << ": " << out.divergence->message << '\n';
    return out.exit_code;
  }
  log << "final epoch loss " << format_double(out.final_loss) << "\nwrote " << csv.string()
      << " and " << ckpt.string() << '\n';
  return exit_code::ok;
}

std::string format_summary_row(const SummaryRow& row) {
  return row.label + ',' + to_string(row.algorithm) + ',' + format_double(row.best_stepsize) +
         ',' + format_double(row.best_loss) + ',' + std::to_string(row.diverged) + ',' +
         std::to_string(row.grid.size());
}

namespace {

void require_shared_setup(const std::vector<RunConfig>& configs) {
  for (const RunConfig& c : configs) {
    const RunConfig& a = configs.front();
    if (c.dataset != a.dataset || c.data_path != a.data_path || c.subset != a.subset ||
        c.data_seed != a.data_seed || c.synthetic_dims != a.synthetic_dims ||
        c.synthetic_classes != a.synthetic_classes || c.synthetic_count != a.synthetic_count ||
        c.synthetic_separation != a.synthetic_separation || c.epochs != a.epochs)
      throw UsageError("compare: configs must share dataset and epochs ('" + c.label() + "')");
  }
}

}  // namespace

std::vector<SummaryRow> compare_runs(const std::vector<RunConfig>& configs, const Dataset& data,
                                     const fs::path& merged_csv, std::ostream* log) {
  if (configs.empty()) throw UsageError("compare needs at least one config");
  require_shared_setup(configs);
  std::optional<CsvWriter> merged;
  if (!merged_csv.empty())
    merged.emplace(merged_csv, "run,algorithm,stepsize," + std::string(kRecordHeader));

  std::vector<SummaryRow> rows;
  for (const RunConfig& base : configs) {
    SummaryRow row;
    row.label = base.label();
    row.algorithm = base.optimizer.algorithm;
    row.best_stepsize = std::numeric_limits<double>::quiet_NaN();
    row.best_loss = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> grid = base.stepsize_grid;
    if (grid.empty()) grid.push_back(base.optimizer.stepsize);
    for (double gamma : grid) {
      RunConfig cfg = base;
      cfg.optimizer.stepsize = gamma;
      GridPoint point{gamma, train_run(cfg, data)};
      const TrainOutcome& o = point.outcome;
      if (merged) {
        const std::string prefix = row.label + ',' + to_string(row.algorithm) + ',' +
                                   format_double(gamma) + ',';
        for (const TrainRecord& r : o.records) merged->row(prefix + format_record(r));
      }
      if (log) {
        *log << "  " << row.label << " stepsize=" << format_double(gamma) << " -> ";
        if (o.divergence)
          *log << "diverged at step " << o.divergence->step << " (" << o.divergence->layer
               << ") after " << o.epochs_completed << " epoch(s)\n";
        else
          *log << "final loss " << format_double(o.final_loss) << '\n';
      }
      if (o.divergence) {
        ++row.diverged;
      } else if (std::isnan(row.best_loss) || o.final_loss < row.best_loss) {
        row.best_loss = o.final_loss;
        row.best_stepsize = gamma;
      }
      row.grid.push_back(std::move(point));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

int compare_cmd(const std::vector<RunConfig>& configs, std::ostream& log) {
  if (configs.empty()) throw UsageError("compare needs at least one --config");
  require_shared_setup(configs);
  const Dataset data = load_dataset(configs.front());
  const fs::path out = configs.front().out;
  fs::create_directories(out);
  const auto rows = compare_runs(configs, data, out / "compare.csv", &log);
  CsvWriter summary(out / "summary.csv", kSummaryHeader);
  log << std::left << std::setw(22) << "run" << std::setw(14) << "best_stepsize"
      << std::setw(16) << "final_loss" << "diverged\n";
  for (const SummaryRow& r : rows) {
    summary.row(format_summary_row(r));
    log << std::left << std::setw(22) << r.label << std::setw(14)
        << format_double(r.best_stepsize) << std::setw(16) << std::setprecision(6)
        << r.best_loss << r.diverged << '/' << r.grid.size() << '\n';
  }
  return exit_code::ok;
}

void apply_bias_setting(BiasExpConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw UsageError("bias-exp override must be key=value");
  const std::string key(assignment.substr(0, eq));
  const std::string_view value = assignment.substr(eq + 1);
  auto count = [&](std::string_view v) {
    const double d = parse_double(v);
    if (d < 0 || d != std::floor(d)) throw UsageError(key + " must be a non-negative integer");
    return static_cast<std::size_t>(d);
  };
  auto& p = cfg.params;
  if (key == "trials") cfg.trials = count(value);
  else if (key == "seed") cfg.seed = count(value);
  else if (key == "out") cfg.out = value;
  else if (key == "x_mean") p.x_mean = parse_double(value);
  else if (key == "x_sd") p.x_sd = parse_double(value);
  else if (key == "g_const") p.g_const = parse_double(value);
  else if (key == "g_slope") p.g_slope = parse_double(value);
  else if (key == "alpha2") p.alpha2 = parse_double(value);
  else if (key == "beta2") p.beta2 = parse_double(value);
  else if (key == "shared_batch") p.shared_batch = value == "true" || value == "1";
  else if (key == "batches") {
    cfg.batches.clear();
    std::size_t start = 0;
    while (start <= value.size()) {
      const auto comma = value.find(',', start);
      cfg.batches.push_back(count(value.substr(start, comma - start)));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
  } else {
    throw UsageError("unknown bias-exp key '" + key + "'");
  }
}

int bias_exp_cmd(const BiasExpConfig& cfg, std::ostream& log) {
  fs::create_directories(cfg.out);
  CsvWriter csv(fs::path(cfg.out) / "bias.csv", "batch,measured,standard_error,predicted");
  std::vector<double> bs, measured;
  log << "batch  measured        std_err         predicted\n";
  for (std::size_t i = 0; i < cfg.batches.size(); ++i) {
    const std::size_t b = cfg.batches[i];
    const BiasMeasurement m = coupling_bias_experiment(b, cfg.trials, cfg.params, cfg.seed + i);
    csv.row(std::to_string(b) + ',' + format_double(m.measured) + ',' +
            format_double(m.standard_error) + ',' + format_double(m.predicted));
    log << std::left << std::setw(7) << b << std::setw(16) << m.measured << std::setw(16)
        << m.standard_error << m.predicted << '\n';
    bs.push_back(static_cast<double>(b));
    measured.push_back(m.measured);
  }
  if (bs.size() >= 2) log << "log-log slope of |bias| vs B: " << loglog_slope(bs, measured) << '\n';
  return exit_code::ok;
}

}  // namespace wrp
