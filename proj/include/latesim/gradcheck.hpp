#pragma once

#include <cstdint>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

namespace latesim {

// Central finite differences (64-bit, step 1e-5) against the analytic
// gradients of every loss, over `instances` random instances per loss.
// A comparison passes when |analytic - fd| / max(|analytic|, |fd|, 1e-3)
// stays below 1e-4.
struct GradCheckReport {
  std::map<std::string, double> max_rel_error;  // per loss
  double threshold = 1e-4;
  bool pass = false;
  double seconds = 0.0;

  nlohmann::ordered_json to_json() const;
};

GradCheckReport run_gradcheck(std::uint64_t seed, std::size_t instances = 100);

}  // namespace latesim
