#pragma once

#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wrp/optimizers.hpp"

namespace wrp {

inline constexpr std::string_view kRecordHeader =
    "step,epoch,loss,wall_ms,alpha2_min,alpha2_max,beta2_min,beta2_max,stat_discrepancy,"
    "relu_dead";

/// One CSV line (no newline). NaN diagnostics become empty fields.
std::string format_record(const TrainRecord& r);
/// Inverse of format_record; throws FormatError on a malformed line.
TrainRecord parse_record(std::string_view line);

/// Line-buffered CSV file: every row is flushed so a crash leaves a valid prefix.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, std::string_view header);
  void row(std::string_view line);

 private:
  std::ofstream out_;
};

std::vector<TrainRecord> read_records(const std::filesystem::path& path);

}  // namespace wrp
