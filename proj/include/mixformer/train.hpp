#pragma once

#include <optional>
#include <ostream>
#include <span>

#include "mixformer/backbone.hpp"

namespace mixformer {

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.04;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool cosine_decay = true;
  int warmup_steps = 20;
  double min_learning_rate = 0.0;
  int batch_size = 16;
  int steps = 300;
  uint64_t seed = 42;

  void validate() const;
};

// Single-tensor AdamW update with bias-corrected moments and decoupled
// weight decay (decay scales the weight directly, not the gradient).
// step counts from 1.
void adamw_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, int64_t step,
                  double lr, double weight_decay, double beta1, double beta2, double eps);

struct AdamW {
  AdamW(std::vector<Parameter*> params, TrainConfig cfg);

  double lr_at(int64_t step) const;  // warmup then cosine (or constant)
  void step();                       // consumes accumulated gradients
  void zero_grad();
  int64_t steps_taken() const { return t_; }

 private:
  std::vector<Parameter*> params_;
  TrainConfig cfg_;
  std::vector<Tensor> m_, v_;
  int64_t t_ = 0;
};

struct SyntheticDatasetConfig {
  uint64_t seed = 0;
  int num_classes = 4;
  int samples_per_class = 16;
  int image_size = 56;
  double noise = 0.25;
};

// Class-conditional geometric patterns (oriented gratings and blobs) with
// Gaussian noise; balanced and fully determined by the seed.
struct SyntheticDataset {
  SyntheticDatasetConfig cfg;
  std::vector<Tensor> images;  // each (3, S, S)
  std::vector<int64_t> labels;

  static SyntheticDataset generate(const SyntheticDatasetConfig& cfg);
  int64_t size() const { return static_cast<int64_t>(images.size()); }
  Tensor batch_images(std::span<const int64_t> indices) const;
  std::vector<int64_t> batch_labels(std::span<const int64_t> indices) const;
};

struct TrainMetrics {
  std::vector<double> loss_curve;  // train-mode loss per step
  double initial_loss = 0.0;
  double final_train_accuracy = 0.0;
};

struct TrainResult {
  TrainMetrics metrics;
  Model model;
};

double evaluate_accuracy(Model& model, const SyntheticDataset& data, int batch_size);

TrainResult train_toy(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                      const SyntheticDataset& data, std::ostream* log = nullptr);

}  // namespace mixformer
