// wrp: train, compare, verify and bias-exp front end.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "wrp/errors.hpp"
#include "wrp/harness.hpp"
#include "wrp/optimizers.hpp"
#include "wrp/verify.hpp"

namespace {

wrp::RunConfig make_config(const std::string& path, const std::vector<std::string>& sets,
                           const std::string& out, const std::optional<std::uint64_t>& seed) {
  wrp::RunConfig cfg = path.empty() ? wrp::RunConfig{} : wrp::load_config_file(path);
  for (const auto& s : sets) wrp::apply_override(cfg, s);
  if (!out.empty()) cfg.out = out;
  if (seed) cfg.seed = *seed;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reparametrized stochastic gradient training and verification"};
  app.require_subcommand(1);

  std::vector<std::string> configs, sets;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool mutate_corner = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--set", sets, "Override a setting: key=value")->take_all();
    sub->add_option("--out", out, "Output directory");
    sub->add_option("--seed", seed, "Random seed");
  };

  auto* train = app.add_subcommand("train", "Train one configuration");
  train->add_option("--config", configs, "Config file (key = value lines)")->expected(0, 1);
  add_common(train);

  auto* compare = app.add_subcommand("compare", "Run several configurations over stepsize grids");
  compare->add_option("--config", configs, "Config file; repeat for each run")->required();
  add_common(compare);

  auto* verify = app.add_subcommand("verify", "Run the oracle checks");
  verify->add_flag("--mutate-corner", mutate_corner,
                   "Use the alternative corner entry 1 + sum alpha^2 mu (expected to fail)");
  verify->add_option("--seed", seed, "Random seed");

  auto* bias = app.add_subcommand("bias-exp", "Minibatch-coupling bias experiment");
  add_common(bias);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : wrp::exit_code::usage;
  }

  try {
    if (*train) {
      return wrp::train_cmd(make_config(configs.empty() ? "" : configs.front(), sets, out, seed),
                            std::cout);
    }
    if (*compare) {
      std::vector<wrp::RunConfig> runs;
      for (const auto& c : configs) runs.push_back(make_config(c, sets, out, seed));
      return wrp::compare_cmd(runs, std::cout);
    }
    if (*verify) {
      wrp::VerifyOptions opts;
      if (mutate_corner) opts.corner = wrp::CornerForm::printed_typo;
      if (seed) opts.seed = *seed;
      return wrp::verify_cmd(opts, std::cout);
    }
    if (*bias) {
      wrp::BiasExpConfig cfg;
      for (const auto& s : sets) wrp::apply_bias_setting(cfg, s);
      if (!out.empty()) cfg.out = out;
      if (seed) cfg.seed = *seed;
      return wrp::bias_exp_cmd(cfg, std::cout);
    }
  } catch (const wrp::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return wrp::exit_code::usage;
  } catch (const wrp::ParseError& e) {
    std::cerr << "architecture error: " << e.what() << '\n';
    return wrp::exit_code::usage;
  } catch (const wrp::FormatError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return wrp::exit_code::data;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return wrp::exit_code::failure;
  }
  return wrp::exit_code::usage;
}
