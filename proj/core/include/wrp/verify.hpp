#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "wrp/reparam.hpp"

namespace wrp {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;  // measured values
};

struct VerifyOptions {
  CornerForm corner = CornerForm::expanded;
  std::uint64_t seed = 1;
};

/// Motivating example, update/matrix equivalence, curvature identity, RMSProp recovery,
/// fanin estimate and minibatch-coupling bias.
std::vector<CheckResult> run_verification(const VerifyOptions& options = {});

/// Prints one line per check; returns 0 when all pass, 1 otherwise.
int verify_cmd(const VerifyOptions& options, std::ostream& out);

}  // namespace wrp
