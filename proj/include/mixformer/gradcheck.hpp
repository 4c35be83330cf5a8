#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mixformer/autodiff.hpp"

namespace mixformer {

struct GradCheckOptions {
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  // 0 checks every element; otherwise a deterministic random subset per
  // tensor (used for large models where exhaustive probing is impractical).
  int64_t max_elements_per_tensor = 0;
  uint64_t seed = 0;
};

struct GradCheckReport {
  struct Entry {
    std::string name;
    double max_rel_error = 0.0;
    int64_t elements_checked = 0;
    bool is_input = false;
  };
  std::vector<Entry> entries;
  double max_param_rel_error = 0.0;
  double max_input_rel_error = 0.0;
  double epsilon = 0.0;
  double tolerance = 0.0;
  bool pass = false;

  std::string summary() const;
};

// Central-difference check of analytic gradients: f is re-evaluated at
// theta +- epsilon per element and compared against backward()'s result.
// f must be deterministic (verified by evaluating twice) and produce a
// scalar. Relative error uses a max(|a|,|b|,1e-8) denominator.
GradCheckReport finite_difference_check(const std::function<Var()>& f,
                                        std::span<Parameter* const> params,
                                        std::span<Parameter* const> inputs,
                                        const GradCheckOptions& options = {});

GradCheckReport finite_difference_check(const std::function<Var()>& f,
                                        std::span<Parameter* const> params,
                                        const GradCheckOptions& options = {});

}  // namespace mixformer
