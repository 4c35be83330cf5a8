#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mixformer {

using Shape = std::vector<int64_t>;

// Layout is an annotation, not a storage property: data is always dense
// row-major. NCHW tags image maps, NLC tags token sequences.
enum class Layout { Flat, NCHW, NLC };

std::string shape_str(const Shape& shape);
int64_t shape_numel(const Shape& shape);

// Dense tensor of 64-bit reals. Handles share storage on copy; library
// operations never write through an existing handle, so values can be
// treated as immutable. mutable_data() is reserved for code that owns the
// storage (factories, the optimizer, finite-difference probes).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Layout layout = Layout::Flat);
  Tensor(Shape shape, std::vector<double> values, Layout layout = Layout::Flat);

  static Tensor zeros(Shape shape, Layout layout = Layout::Flat);
  static Tensor ones(Shape shape, Layout layout = Layout::Flat);
  static Tensor full(Shape shape, double value, Layout layout = Layout::Flat);
  static Tensor scalar(double value);
  // start, start+1, start+2, ... in row-major order.
  static Tensor ramp(Shape shape, double start = 0.0);

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const;  // negative i counts from the back
  int64_t numel() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }
  Layout layout() const { return layout_; }
  void set_layout(Layout layout) { layout_ = layout; }

  std::span<const double> data() const;
  double* mutable_data();
  double at(std::initializer_list<int64_t> index) const;

  Tensor clone() const;
  // Shares storage; numel must be preserved.
  Tensor reshaped(Shape shape, Layout layout = Layout::Flat) const;

  bool all_finite() const;
  bool same_values(const Tensor& other) const;  // exact bitwise comparison
  bool unique_storage() const { return data_ && data_.use_count() == 1; }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  Layout layout_ = Layout::Flat;
};

// Deterministic splitmix64-based generator. Produces the same stream on any
// platform, unlike the std:: distributions.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64();
  int64_t below(int64_t n);        // uniform in [0, n)
  double uniform();                // [0, 1)
  double uniform(double lo, double hi);
  double normal();                 // standard normal, Box-Muller
  double normal(double mean, double stddev);
  // Normal(0, stddev) resampled until |x| <= 2*stddev.
  double trunc_normal(double stddev);

  Tensor normal_tensor(Shape shape, double mean, double stddev);
  Tensor trunc_normal_tensor(Shape shape, double stddev);
  Tensor uniform_tensor(Shape shape, double lo, double hi);

 private:
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace mixformer
