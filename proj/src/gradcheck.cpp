#include "mixformer/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace mixformer {

namespace {

double eval_scalar(const std::function<Var()>& f) {
  Var out = f();
  if (!out.defined() || out.value().numel() != 1) {
    throw std::invalid_argument("finite_difference_check: f must produce a scalar");
  }
  return out.value().data()[0];
}

std::vector<int64_t> pick_elements(int64_t numel, int64_t max_elements, Rng& rng) {
  std::vector<int64_t> idx;
  if (max_elements <= 0 || numel <= max_elements) {
    idx.resize(static_cast<size_t>(numel));
    for (int64_t i = 0; i < numel; ++i) idx[static_cast<size_t>(i)] = i;
    return idx;
  }
  // deterministic subset; duplicates removed, endpoints always probed
  idx.push_back(0);
  idx.push_back(numel - 1);
  while (static_cast<int64_t>(idx.size()) < max_elements) idx.push_back(rng.below(numel));
  std::sort(idx.begin(), idx.end());
  idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
  return idx;
}

}  // namespace

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (pass ? "PASS" : "FAIL") << " gradcheck (eps=" << epsilon << ", tol=" << tolerance
     << "): max param rel err " << max_param_rel_error << ", max input rel err "
     << max_input_rel_error;
  return os.str();
}

GradCheckReport finite_difference_check(const std::function<Var()>& f,
                                        std::span<Parameter* const> params,
                                        std::span<Parameter* const> inputs,
                                        const GradCheckOptions& options) {
  if (options.epsilon <= 0.0) {
    throw std::invalid_argument("finite_difference_check: epsilon must be > 0");
  }
  double base = eval_scalar(f);
  double base2 = eval_scalar(f);
  if (base != base2) {
    throw std::runtime_error("finite_difference_check: f is non-deterministic (" +
                             std::to_string(base) + " vs " + std::to_string(base2) + ")");
  }

  std::vector<Parameter*> all(params.begin(), params.end());
  size_t input_start = all.size();
  all.insert(all.end(), inputs.begin(), inputs.end());

  for (Parameter* p : all) p->zero_grad();
  backward(f());
  std::vector<Tensor> analytic;
  analytic.reserve(all.size());
  for (Parameter* p : all) analytic.push_back(p->grad().clone());

  GradCheckReport report;
  report.epsilon = options.epsilon;
  report.tolerance = options.tolerance;
  Rng rng(options.seed ^ 0x6d69786full);
  for (size_t t = 0; t < all.size(); ++t) {
    Parameter* p = all[t];
    GradCheckReport::Entry entry;
    entry.name = p->name;
    entry.is_input = t >= input_start;
    std::vector<int64_t> elems =
        pick_elements(p->numel(), options.max_elements_per_tensor, rng);
    double* values = p->value_mut().mutable_data();
    const double* grads = analytic[t].data().data();
    for (int64_t e : elems) {
      double orig = values[e];
      values[e] = orig + options.epsilon;
      double up = eval_scalar(f);
      values[e] = orig - options.epsilon;
      double down = eval_scalar(f);
      values[e] = orig;
      double fd = (up - down) / (2.0 * options.epsilon);
      double denom = std::max({std::abs(fd), std::abs(grads[e]), 1e-8});
      double rel = std::abs(fd - grads[e]) / denom;
      entry.max_rel_error = std::max(entry.max_rel_error, rel);
      ++entry.elements_checked;
    }
    if (entry.is_input) {
      report.max_input_rel_error = std::max(report.max_input_rel_error, entry.max_rel_error);
    } else {
      report.max_param_rel_error = std::max(report.max_param_rel_error, entry.max_rel_error);
    }
    report.entries.push_back(std::move(entry));
  }
  report.pass = std::all_of(report.entries.begin(), report.entries.end(),
                            [&](const auto& e) { return e.max_rel_error < options.tolerance; });
  return report;
}

GradCheckReport finite_difference_check(const std::function<Var()>& f,
                                        std::span<Parameter* const> params,
                                        const GradCheckOptions& options) {
  return finite_difference_check(f, params, std::span<Parameter* const>(), options);
}

}  // namespace mixformer
