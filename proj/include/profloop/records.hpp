// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>

#include <json.hpp>

#include "profloop/metrics.hpp"
#include "profloop/task.hpp"
#include "profloop/verifier.hpp"

namespace profloop {

/// The historically best correct candidate with the measurements that earned it
/// the title. The orchestrator owns it; the agents only read it.
struct BestRecord {
  CandidateKernel candidate;
  verify::VerificationOutcome verification;
  std::optional<metrics::ProfileReport> profile;
  double speedup = 0.0;
  int achieved_at_iteration = 0;

  bool operator==(const BestRecord&) const = default;
};

void to_json(nlohmann::json& j, const BestRecord& b);
void from_json(const nlohmann::json& j, BestRecord& b);

}  // namespace profloop
