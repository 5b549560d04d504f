#include "wrp/run_config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "wrp/errors.hpp"

namespace wrp {

std::string RunConfig::label() const {
  return name.empty() ? std::string(to_string(optimizer.algorithm)) : name;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view text) {
  if (text == "nan") return std::nan("");
  if (text == "inf") return INFINITY;
  if (text == "-inf") return -INFINITY;
  double v = 0.0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size())
    throw UsageError("not a number: '" + std::string(text) + "'");
  return v;
}

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t parse_unsigned(std::string_view text) {
  std::uint64_t v = 0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size())
    throw UsageError("not an unsigned integer: '" + std::string(text) + "'");
  return v;
}

bool parse_bool(std::string_view text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw UsageError("not a boolean: '" + std::string(text) + "'");
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    parts.push_back(trim(s.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

Shape parse_dims(std::string_view text) {
  Shape dims;
  for (auto part : split(text, 'x')) dims.push_back(parse_unsigned(part));
  if (dims.empty() || shape_size(dims) == 0) throw UsageError("bad dims: " + std::string(text));
  return dims;
}

std::string format_dims(const Shape& dims) {
  std::string s;
  for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? "x" : "") + std::to_string(dims[i]);
  return s;
}

using Setter = std::function<void(RunConfig&, std::string_view)>;

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = {
      {"name", [](RunConfig& c, std::string_view v) { c.name = v; }},
      {"algorithm",
       [](RunConfig& c, std::string_view v) { c.optimizer.algorithm = algorithm_from_string(v); }},
      {"stepsize", [](RunConfig& c, std::string_view v) { c.optimizer.stepsize = parse_double(v); }},
      {"lambda_ema",
       [](RunConfig& c, std::string_view v) { c.optimizer.lambda_ema = parse_double(v); }},
      {"lambda_rms",
       [](RunConfig& c, std::string_view v) { c.optimizer.lambda_rms = parse_double(v); }},
      {"mu_reg", [](RunConfig& c, std::string_view v) { c.optimizer.mu_reg = parse_double(v); }},
      {"var_floor",
       [](RunConfig& c, std::string_view v) { c.optimizer.bounds.var_floor = parse_double(v); }},
      {"g2_floor",
       [](RunConfig& c, std::string_view v) { c.optimizer.bounds.g2_floor = parse_double(v); }},
      {"alpha2_min",
       [](RunConfig& c, std::string_view v) { c.optimizer.bounds.alpha2_min = parse_double(v); }},
      {"alpha2_max",
       [](RunConfig& c, std::string_view v) { c.optimizer.bounds.alpha2_max = parse_double(v); }},
      {"beta2_min",
       [](RunConfig& c, std::string_view v) { c.optimizer.bounds.beta2_min = parse_double(v); }},
      {"beta2_max",
       [](RunConfig& c, std::string_view v) { c.optimizer.bounds.beta2_max = parse_double(v); }},
      {"batch_size",
       [](RunConfig& c, std::string_view v) { c.optimizer.batch_size = parse_unsigned(v); }},
      {"switch_epoch",
       [](RunConfig& c, std::string_view v) {
         c.optimizer.switch_epoch = v == "never" ? kNeverSwitch : parse_unsigned(v);
       }},
      {"biased_minibatch_constants",
       [](RunConfig& c, std::string_view v) {
         c.optimizer.biased_minibatch_constants = parse_bool(v);
       }},
      {"identity_input_constants",
       [](RunConfig& c, std::string_view v) { c.optimizer.identity_input_constants = parse_bool(v); }},
      {"weight_decay",
       [](RunConfig& c, std::string_view v) { c.optimizer.weight_decay = parse_double(v); }},
      {"divergence_loss_limit",
       [](RunConfig& c, std::string_view v) {
         c.optimizer.divergence_loss_limit = parse_double(v);
       }},
      {"architecture", [](RunConfig& c, std::string_view v) { c.architecture = v; }},
      {"auto_batchnorm", [](RunConfig& c, std::string_view v) { c.auto_batchnorm = parse_bool(v); }},
      {"dataset",
       [](RunConfig& c, std::string_view v) {
         if (v != "cifar10" && v != "cifar_like" && v != "synthetic")
           throw UsageError("dataset must be cifar10, cifar_like or synthetic");
         c.dataset = v;
       }},
      {"data_path", [](RunConfig& c, std::string_view v) { c.data_path = v; }},
      {"subset", [](RunConfig& c, std::string_view v) { c.subset = parse_unsigned(v); }},
      {"synthetic_dims", [](RunConfig& c, std::string_view v) { c.synthetic_dims = parse_dims(v); }},
      {"synthetic_classes",
       [](RunConfig& c, std::string_view v) { c.synthetic_classes = parse_unsigned(v); }},
      {"synthetic_separation",
       [](RunConfig& c, std::string_view v) { c.synthetic_separation = parse_double(v); }},
      {"synthetic_count",
       [](RunConfig& c, std::string_view v) { c.synthetic_count = parse_unsigned(v); }},
      {"epochs", [](RunConfig& c, std::string_view v) { c.epochs = parse_unsigned(v); }},
      {"seed", [](RunConfig& c, std::string_view v) { c.seed = parse_unsigned(v); }},
      {"data_seed", [](RunConfig& c, std::string_view v) { c.data_seed = parse_unsigned(v); }},
      {"out", [](RunConfig& c, std::string_view v) { c.out = v; }},
      {"wallclock", [](RunConfig& c, std::string_view v) { c.wallclock = parse_bool(v); }},
      {"stepsize_grid",
       [](RunConfig& c, std::string_view v) {
         c.stepsize_grid.clear();
         if (trim(v).empty()) return;
         for (auto part : split(v, ',')) c.stepsize_grid.push_back(parse_double(part));
       }},
  };
  return table;
}

}  // namespace

void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value) {
  const auto& table = setters();
  auto it = table.find(trim(key));
  if (it == table.end()) throw UsageError("unknown config key '" + std::string(trim(key)) + "'");
  it->second(cfg, trim(value));
}

void apply_override(RunConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos)
    throw UsageError("override must be key=value: '" + std::string(assignment) + "'");
  apply_setting(cfg, assignment.substr(0, eq), assignment.substr(eq + 1));
}

RunConfig parse_config_text(std::string_view text, RunConfig base) {
  std::size_t line_no = 0;
  for (auto line : split(text, '\n')) {
    ++line_no;
    const auto hash = line.find('#');
    line = trim(line.substr(0, hash));
    if (line.empty()) continue;
    try {
      apply_override(base, line);
    } catch (const UsageError& e) {
      throw UsageError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

RunConfig load_config_file(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), std::move(base));
}

std::string config_to_text(const RunConfig& c) {
  const auto& o = c.optimizer;
  std::ostringstream s;
  auto b = [](bool v) { return v ? "true" : "false"; };
  s << "name = " << c.name << '\n'
    << "algorithm = " << to_string(o.algorithm) << '\n'
    << "stepsize = " << format_double(o.stepsize) << '\n'
    << "lambda_ema = " << format_double(o.lambda_ema) << '\n'
    << "lambda_rms = " << format_double(o.lambda_rms) << '\n'
    << "mu_reg = " << format_double(o.mu_reg) << '\n'
    << "var_floor = " << format_double(o.bounds.var_floor) << '\n'
    << "g2_floor = " << format_double(o.bounds.g2_floor) << '\n'
    << "alpha2_min = " << format_double(o.bounds.alpha2_min) << '\n'
    << "alpha2_max = " << format_double(o.bounds.alpha2_max) << '\n'
    << "beta2_min = " << format_double(o.bounds.beta2_min) << '\n'
    << "beta2_max = " << format_double(o.bounds.beta2_max) << '\n'
    << "batch_size = " << o.batch_size << '\n'
    << "switch_epoch = "
    << (o.switch_epoch == kNeverSwitch ? std::string("never") : std::to_string(o.switch_epoch))
    << '\n'
    << "biased_minibatch_constants = " << b(o.biased_minibatch_constants) << '\n'
    << "identity_input_constants = " << b(o.identity_input_constants) << '\n'
    << "weight_decay = " << format_double(o.weight_decay) << '\n'
    << "divergence_loss_limit = " << format_double(o.divergence_loss_limit) << '\n'
    << "architecture = " << c.architecture << '\n'
    << "auto_batchnorm = " << b(c.auto_batchnorm) << '\n'
    << "dataset = " << c.dataset << '\n'
    << "data_path = " << c.data_path << '\n'
    << "subset = " << c.subset << '\n'
    << "synthetic_dims = " << format_dims(c.synthetic_dims) << '\n'
    << "synthetic_classes = " << c.synthetic_classes << '\n'
    << "synthetic_separation = " << format_double(c.synthetic_separation) << '\n'
    << "synthetic_count = " << c.synthetic_count << '\n'
    << "epochs = " << c.epochs << '\n'
    << "seed = " << c.seed << '\n'
    << "data_seed = " << c.data_seed << '\n'
    << "out = " << c.out << '\n'
    << "wallclock = " << b(c.wallclock) << '\n'
    << "stepsize_grid = ";
  for (std::size_t i = 0; i < c.stepsize_grid.size(); ++i)
    s << (i ? "," : "") << format_double(c.stepsize_grid[i]);
  s << '\n';
  return s.str();
}

}  // namespace wrp
