#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace m2m::check {

struct CheckResult {
  std::string name;
  double value = 0.0;      // measured error / deviation
  double tolerance = 0.0;  // pass when value <= tolerance
  bool pass = false;
};

// Central-difference gradient checks for every differentiable primitive and
// for the composite blocks (splat fusion, error splat + loss, low-rank
// block, mixers, refinement network) on toy shapes.
std::vector<CheckResult> gradient_suite(std::uint64_t seed);

// Exact-value and invariant checks: fusion identities, window round trips,
// optimizer behavior, format round trips, selection rules.
std::vector<CheckResult> property_suite(std::uint64_t seed);

bool all_pass(const std::vector<CheckResult>& results);

}  // namespace m2m::check
