// SPDX-License-Identifier: Apache-2.0
#include "profloop/records.hpp"

namespace profloop {

void to_json(nlohmann::json& j, const BestRecord& b) {
  j = {{"candidate", b.candidate},
       {"verification", b.verification},
       {"speedup", b.speedup},
       {"achieved_at_iteration", b.achieved_at_iteration}};
  j["profile"] = b.profile ? nlohmann::json(*b.profile) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, BestRecord& b) {
  j.at("candidate").get_to(b.candidate);
  j.at("verification").get_to(b.verification);
  j.at("speedup").get_to(b.speedup);
  j.at("achieved_at_iteration").get_to(b.achieved_at_iteration);
  if (j.contains("profile") && !j["profile"].is_null()) {
    b.profile = j["profile"].get<metrics::ProfileReport>();
  } else {
    b.profile.reset();
  }
}

}  // namespace profloop
