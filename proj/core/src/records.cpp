#include "wrp/records.hpp"

#include <cmath>
#include <limits>

#include "wrp/errors.hpp"
#include "wrp/run_config.hpp"

namespace wrp {

namespace {

std::string field(double v) { return std::isnan(v) ? std::string() : format_double(v); }

double parse_field(std::string_view s) {
  if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
  try {
    return parse_double(s);
  } catch (const UsageError&) {
    throw FormatError("bad CSV field '" + std::string(s) + "'");
  }
}

}  // namespace

std::string format_record(const TrainRecord& r) {
  std::string s = std::to_string(r.step) + ',' + std::to_string(r.epoch) + ',' +
                  format_double(r.loss) + ',' + format_double(r.wall_ms);
  for (double v : {r.alpha2_min, r.alpha2_max, r.beta2_min, r.beta2_max, r.stat_discrepancy,
                   r.relu_dead})
    s += ',' + field(v);
  return s;
}

TrainRecord parse_record(std::string_view line) {
  std::vector<std::string_view> f;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    f.push_back(line.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  if (f.size() != 10) throw FormatError("CSV row needs 10 fields: '" + std::string(line) + "'");
  TrainRecord r;
  r.step = static_cast<std::size_t>(parse_field(f[0]));
  r.epoch = static_cast<std::size_t>(parse_field(f[1]));
  r.loss = parse_field(f[2]);
  r.wall_ms = parse_field(f[3]);
  r.alpha2_min = parse_field(f[4]);
  r.alpha2_max = parse_field(f[5]);
  r.beta2_min = parse_field(f[6]);
  r.beta2_max = parse_field(f[7]);
  r.stat_discrepancy = parse_field(f[8]);
  r.relu_dead = parse_field(f[9]);
  return r;
}

CsvWriter::CsvWriter(const std::filesystem::path& path, std::string_view header) : out_(path) {
  if (!out_) throw FormatError("cannot write " + path.string());
  row(header);
}

void CsvWriter::row(std::string_view line) {
  out_ << line << '\n';
  out_.flush();
}

std::vector<TrainRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kRecordHeader)
    throw FormatError(path.string() + ": missing record header");
  std::vector<TrainRecord> out;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(parse_record(line));
  return out;
}

}  // namespace wrp
