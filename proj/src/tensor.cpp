#include "mixformer/tensor.hpp"

#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace mixformer {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

namespace {
void check_shape(const Shape& shape) {
  for (int64_t d : shape) {
    if (d < 1) {
      throw std::invalid_argument("invalid tensor shape " + shape_str(shape) +
                                  ": all dimensions must be >= 1");
    }
  }
}
}  // namespace

Tensor::Tensor(Shape shape, Layout layout) : shape_(std::move(shape)), layout_(layout) {
  check_shape(shape_);
  data_ = std::make_shared<std::vector<double>>(shape_numel(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> values, Layout layout)
    : shape_(std::move(shape)), layout_(layout) {
  check_shape(shape_);
  if (static_cast<int64_t>(values.size()) != shape_numel(shape_)) {
    throw std::invalid_argument("tensor shape " + shape_str(shape_) + " expects " +
                                std::to_string(shape_numel(shape_)) + " values, got " +
                                std::to_string(values.size()));
  }
  data_ = std::make_shared<std::vector<double>>(std::move(values));
}

Tensor Tensor::zeros(Shape shape, Layout layout) { return Tensor(std::move(shape), layout); }

Tensor Tensor::ones(Shape shape, Layout layout) { return full(std::move(shape), 1.0, layout); }

Tensor Tensor::full(Shape shape, double value, Layout layout) {
  Tensor t(std::move(shape), layout);
  std::fill(t.data_->begin(), t.data_->end(), value);
  return t;
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::ramp(Shape shape, double start) {
  Tensor t(std::move(shape));
  double v = start;
  for (double& x : *t.data_) x = v++;
  return t;
}

int64_t Tensor::dim(int i) const {
  int r = rank();
  if (i < 0) i += r;
  if (i < 0 || i >= r) {
    throw std::out_of_range("dim index " + std::to_string(i) + " out of range for shape " +
                            shape_str(shape_));
  }
  return shape_[static_cast<size_t>(i)];
}

std::span<const double> Tensor::data() const {
  if (!data_) return {};
  return {data_->data(), data_->size()};
}

double* Tensor::mutable_data() {
  if (!data_) throw std::logic_error("mutable_data() on undefined tensor");
  return data_->data();
}

double Tensor::at(std::initializer_list<int64_t> index) const {
  if (static_cast<int>(index.size()) != rank()) {
    throw std::invalid_argument("index rank mismatch for shape " + shape_str(shape_));
  }
  int64_t flat = 0;
  int i = 0;
  for (int64_t idx : index) {
    if (idx < 0 || idx >= shape_[static_cast<size_t>(i)]) {
      throw std::out_of_range("index out of range for shape " + shape_str(shape_));
    }
    flat = flat * shape_[static_cast<size_t>(i)] + idx;
    ++i;
  }
  return (*data_)[static_cast<size_t>(flat)];
}

Tensor Tensor::clone() const {
  Tensor t;
  t.shape_ = shape_;
  t.layout_ = layout_;
  if (data_) t.data_ = std::make_shared<std::vector<double>>(*data_);
  return t;
}

Tensor Tensor::reshaped(Shape shape, Layout layout) const {
  check_shape(shape);
  if (shape_numel(shape) != numel()) {
    throw std::invalid_argument("cannot reshape " + shape_str(shape_) + " to " +
                                shape_str(shape) + ": element counts differ");
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.layout_ = layout;
  t.data_ = data_;
  return t;
}

bool Tensor::all_finite() const {
  if (!data_) return true;
  for (double v : *data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool Tensor::same_values(const Tensor& other) const {
  if (shape_ != other.shape_) return false;
  if (!data_ || !other.data_) return data_ == other.data_;
  return std::memcmp(data_->data(), other.data_->data(), data_->size() * sizeof(double)) == 0;
}

uint64_t Rng::next_u64() {
  uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

int64_t Rng::below(int64_t n) {
  if (n <= 0) throw std::invalid_argument("Rng::below requires n > 0");
  return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n));
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  if (u1 < 1e-300) u1 = 1e-300;
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

double Rng::normal(double mean, double stddev) { return mean + stddev * normal(); }

double Rng::trunc_normal(double stddev) {
  for (;;) {
    double x = stddev * normal();
    if (std::abs(x) <= 2.0 * stddev) return x;
  }
}

Tensor Rng::normal_tensor(Shape shape, double mean, double stddev) {
  Tensor t(std::move(shape));
  double* p = t.mutable_data();
  for (int64_t i = 0; i < t.numel(); ++i) p[i] = normal(mean, stddev);
  return t;
}

Tensor Rng::trunc_normal_tensor(Shape shape, double stddev) {
  Tensor t(std::move(shape));
  double* p = t.mutable_data();
  for (int64_t i = 0; i < t.numel(); ++i) p[i] = trunc_normal(stddev);
  return t;
}

Tensor Rng::uniform_tensor(Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  double* p = t.mutable_data();
  for (int64_t i = 0; i < t.numel(); ++i) p[i] = uniform(lo, hi);
  return t;
}

}  // namespace mixformer
