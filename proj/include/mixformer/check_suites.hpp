#pragma once

#include <span>
#include <string>
#include <vector>

#include "mixformer/gradcheck.hpp"

namespace mixformer {

struct SuiteResult {
  std::string name;
  GradCheckReport report;
};

// Finite-difference sweeps used by the gradcheck command and the acceptance
// run. Every scope builds its own models/ops from the seed, probes them with
// a fixed random linear functional, and reports per-target results.
std::vector<SuiteResult> gradcheck_ops(uint64_t seed, double tolerance, double epsilon);
std::vector<SuiteResult> gradcheck_blocks(uint64_t seed, double tolerance, double epsilon,
                                          int64_t max_elements_per_tensor = 0);
std::vector<SuiteResult> gradcheck_model(uint64_t seed, double tolerance, double epsilon,
                                         int64_t max_elements_per_tensor = 4);

bool suites_pass(std::span<const SuiteResult> results);
double suites_max_rel_error(std::span<const SuiteResult> results);

}  // namespace mixformer
