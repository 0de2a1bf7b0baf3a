#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace conml {

struct GradcheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  long coords = 0;
  bool skipped = false;
  std::string note;
};

/// Central-difference checks over every learner loss, episode objective
/// (baseline and contrastive) and contrastive term. First-order MAML and
/// Reptile are listed as skipped: their updates are not gradients of any
/// objective.
std::vector<GradcheckEntry> run_gradcheck_suite(std::uint64_t seed);

inline bool gradcheck_passed(const std::vector<GradcheckEntry>& entries, double tolerance) {
  for (const auto& e : entries) {
    if (!e.skipped && !(e.max_rel_error <= tolerance)) return false;
  }
  return true;
}

}  // namespace conml
