#include "mixformer/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "mixformer/ops.hpp"

namespace mixformer {

void TrainConfig::validate() const {
  if (learning_rate <= 0.0) throw std::invalid_argument("learning rate must be > 0");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (steps < 1) throw std::invalid_argument("step count must be >= 1");
  if (weight_decay < 0.0) throw std::invalid_argument("weight decay must be >= 0");
  if (warmup_steps < 0) throw std::invalid_argument("warmup steps must be >= 0");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw std::invalid_argument("betas must lie in [0,1)");
  }
}

void adamw_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, int64_t step,
                  double lr, double weight_decay, double beta1, double beta2, double eps) {
  if (param.shape() != grad.shape() || param.shape() != m.shape() ||
      param.shape() != v.shape()) {
    throw std::invalid_argument("adamw state shapes must match the parameter: param " +
                                shape_str(param.shape()) + ", grad " + shape_str(grad.shape()) +
                                ", m " + shape_str(m.shape()) + ", v " + shape_str(v.shape()));
  }
  if (step < 1) throw std::invalid_argument("adamw step index counts from 1");
  double* p = param.mutable_data();
  double* pm = m.mutable_data();
  double* pv = v.mutable_data();
  const double* g = grad.data().data();
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (int64_t i = 0; i < param.numel(); ++i) {
    pm[i] = beta1 * pm[i] + (1.0 - beta1) * g[i];
    pv[i] = beta2 * pv[i] + (1.0 - beta2) * g[i] * g[i];
    double mhat = pm[i] / bc1;
    double vhat = pv[i] / bc2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + eps) + lr * weight_decay * p[i];
  }
}

AdamW::AdamW(std::vector<Parameter*> params, TrainConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  cfg_.validate();
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (Parameter* p : params_) {
    m_.push_back(Tensor::zeros(p->value().shape()));
    v_.push_back(Tensor::zeros(p->value().shape()));
  }
}

double AdamW::lr_at(int64_t step) const {
  if (step < cfg_.warmup_steps) {
    return cfg_.learning_rate * static_cast<double>(step + 1) /
           static_cast<double>(cfg_.warmup_steps);
  }
  if (!cfg_.cosine_decay) return cfg_.learning_rate;
  int64_t span = std::max<int64_t>(1, cfg_.steps - cfg_.warmup_steps);
  double progress = static_cast<double>(step - cfg_.warmup_steps) / static_cast<double>(span);
  progress = std::clamp(progress, 0.0, 1.0);
  return cfg_.min_learning_rate + (cfg_.learning_rate - cfg_.min_learning_rate) * 0.5 *
                                      (1.0 + std::cos(std::numbers::pi * progress));
}

void AdamW::step() {
  double lr = lr_at(t_);
  ++t_;
  for (size_t i = 0; i < params_.size(); ++i) {
    Parameter* p = params_[i];
    adamw_update(p->value_mut(), p->grad(), m_[i], v_[i], t_, lr, cfg_.weight_decay, cfg_.beta1,
                 cfg_.beta2, cfg_.eps);
  }
}

void AdamW::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

SyntheticDataset SyntheticDataset::generate(const SyntheticDatasetConfig& cfg) {
  if (cfg.num_classes < 2 || cfg.samples_per_class < 1 || cfg.image_size < 8) {
    throw std::invalid_argument("synthetic dataset needs >=2 classes, >=1 sample, size >=8");
  }
  SyntheticDataset data;
  data.cfg = cfg;
  Rng rng(cfg.seed ^ 0x64617461ULL);
  int64_t s = cfg.image_size;
  for (int cls = 0; cls < cfg.num_classes; ++cls) {
    for (int i = 0; i < cfg.samples_per_class; ++i) {
      Tensor img({3, s, s}, Layout::NCHW);
      double* px = img.mutable_data();
      bool blob = cls % 4 == 3;
      double angle = std::numbers::pi * static_cast<double>(cls) /
                     static_cast<double>(cfg.num_classes);
      double ux = std::cos(angle), uy = std::sin(angle);
      double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      double cy = s / 2.0 + rng.uniform(-4.0, 4.0);
      double cx = s / 2.0 + rng.uniform(-4.0, 4.0);
      double sigma = s / 6.0;
      double wavelength = 8.0;
      for (int c = 0; c < 3; ++c) {
        double amp = 1.0 + 0.1 * rng.normal();
        for (int64_t y = 0; y < s; ++y) {
          for (int64_t x = 0; x < s; ++x) {
            double signal;
            if (blob) {
              double dy = (static_cast<double>(y) - cy) / sigma;
              double dx = (static_cast<double>(x) - cx) / sigma;
              signal = 2.0 * std::exp(-0.5 * (dx * dx + dy * dy)) - 0.5;
            } else {
              signal = std::sin(2.0 * std::numbers::pi *
                                    (ux * static_cast<double>(x) + uy * static_cast<double>(y)) /
                                    wavelength +
                                phase);
            }
            px[(c * s + y) * s + x] = amp * signal + cfg.noise * rng.normal();
          }
        }
      }
      data.images.push_back(std::move(img));
      data.labels.push_back(cls);
    }
  }
  return data;
}

Tensor SyntheticDataset::batch_images(std::span<const int64_t> indices) const {
  if (indices.empty()) throw std::invalid_argument("empty batch");
  int64_t s = cfg.image_size;
  Tensor out({static_cast<int64_t>(indices.size()), 3, s, s}, Layout::NCHW);
  double* po = out.mutable_data();
  int64_t per = 3 * s * s;
  for (size_t i = 0; i < indices.size(); ++i) {
    int64_t idx = indices[i];
    if (idx < 0 || idx >= size()) throw std::out_of_range("sample index out of range");
    std::copy_n(images[static_cast<size_t>(idx)].data().data(), per,
                po + static_cast<int64_t>(i) * per);
  }
  return out;
}

std::vector<int64_t> SyntheticDataset::batch_labels(std::span<const int64_t> indices) const {
  std::vector<int64_t> out;
  out.reserve(indices.size());
  for (int64_t idx : indices) out.push_back(labels[static_cast<size_t>(idx)]);
  return out;
}

double evaluate_accuracy(Model& model, const SyntheticDataset& data, int batch_size) {
  ForwardCtx ctx = ForwardCtx::eval();
  int64_t correct = 0;
  for (int64_t at = 0; at < data.size(); at += batch_size) {
    int64_t take = std::min<int64_t>(batch_size, data.size() - at);
    std::vector<int64_t> idx(static_cast<size_t>(take));
    for (int64_t i = 0; i < take; ++i) idx[static_cast<size_t>(i)] = at + i;
    Var x(data.batch_images(idx));
    Var logits = model.classify(x, ctx);
    const double* pl = logits.value().data().data();
    int64_t k = logits.value().dim(1);
    for (int64_t i = 0; i < take; ++i) {
      const double* row = pl + i * k;
      int64_t best = 0;
      for (int64_t j = 1; j < k; ++j) {
        if (row[j] > row[best]) best = j;
      }
      if (best == data.labels[static_cast<size_t>(at + i)]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

TrainResult train_toy(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                      const SyntheticDataset& data, std::ostream* log) {
  train_cfg.validate();
  if (model_cfg.num_classes < data.cfg.num_classes) {
    throw std::invalid_argument("model has fewer classes than the dataset");
  }
  Model model(model_cfg, train_cfg.seed);
  ParamRefs refs = model.param_refs();
  AdamW opt(refs.params, train_cfg);

  Rng order_rng(train_cfg.seed ^ 0x6f726472ULL);
  std::vector<int64_t> order(static_cast<size_t>(data.size()));
  for (int64_t i = 0; i < data.size(); ++i) order[static_cast<size_t>(i)] = i;
  auto reshuffle = [&]() {
    for (int64_t i = data.size() - 1; i > 0; --i) {
      int64_t j = order_rng.below(i + 1);
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }
  };
  reshuffle();

  TrainMetrics metrics;
  ForwardCtx ctx = ForwardCtx::train();
  int64_t cursor = 0;
  for (int step = 0; step < train_cfg.steps; ++step) {
    if (cursor + train_cfg.batch_size > data.size()) {
      reshuffle();
      cursor = 0;
    }
    std::span<const int64_t> idx(order.data() + cursor,
                                 static_cast<size_t>(std::min<int64_t>(
                                     train_cfg.batch_size, data.size() - cursor)));
    cursor += static_cast<int64_t>(idx.size());

    Var x(data.batch_images(idx));
    std::vector<int64_t> labels = data.batch_labels(idx);
    Var loss = cross_entropy(model.classify(x, ctx), labels);
    double loss_value = loss.value().data()[0];
    metrics.loss_curve.push_back(loss_value);
    if (step == 0) metrics.initial_loss = loss_value;
    if (log) {
      (*log) << "step " << step << " loss " << loss_value << " lr " << opt.lr_at(step) << "\n";
    }
    opt.zero_grad();
    backward(loss);
    opt.step();
  }
  metrics.final_train_accuracy = evaluate_accuracy(model, data, train_cfg.batch_size);
  if (log) {
    (*log) << "final train accuracy " << metrics.final_train_accuracy << "\n";
  }
  return TrainResult{std::move(metrics), std::move(model)};
}

}  // namespace mixformer
