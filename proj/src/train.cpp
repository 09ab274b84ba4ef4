#include "p2t/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <random>

namespace p2t {

void TrainConfig::validate() const {
  if (!(lr >= 0) || !std::isfinite(lr)) throw ConfigError("train.lr: must be a finite non-negative number");
  if (!(weight_decay >= 0) || !std::isfinite(weight_decay))
    throw ConfigError("train.weight_decay: must be a finite non-negative number");
  if (total_steps == 0) throw ConfigError("train.total_steps: must be positive");
  if (warmup_steps > total_steps) throw ConfigError("train.warmup_steps: must not exceed total_steps");
  if (batch_size == 0) throw ConfigError("train.batch_size: must be positive");
}

double lr_at(const TrainConfig& tc, std::size_t step) {
  if (step > tc.total_steps) throw ConfigError("lr_at: step beyond total_steps");
  if (step < tc.warmup_steps) return tc.lr * static_cast<double>(step) / static_cast<double>(tc.warmup_steps);
  if (tc.total_steps == tc.warmup_steps) return tc.lr;
  const double progress =
      static_cast<double>(step - tc.warmup_steps) / static_cast<double>(tc.total_steps - tc.warmup_steps);
  return tc.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
void adamw_step(std::span<Parameter<T>* const> params, AdamWState<T>& state, double lr, double weight_decay,
                const AdamWHyper& hyper) {
  if (state.m.empty()) {
    for (const auto* p : params) {
      state.m.emplace_back(p->value.shape());
      state.v.emplace_back(p->value.shape());
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("adamw_step: optimizer state does not match parameters");
  for (const auto* p : params) {
    if (p->grad.shape() != p->value.shape())
      throw DimensionError("adamw_step: gradient of " + p->name + " has shape " + to_string(p->grad.shape()));
    if (!p->grad.all_finite()) throw NumericError("adamw_step: non-finite gradient for parameter " + p->name);
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < p.value.numel(); ++j) {
      const double g = p.grad[j];
      const double mj = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * g;
      const double vj = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      double w = p.value[j];
      w -= lr * weight_decay * w;
      w -= lr * (mj / bc1) / (std::sqrt(vj / bc2) + hyper.eps);
      p.value[j] = static_cast<T>(w);
    }
  }
}

template void adamw_step<float>(std::span<Parameter<float>* const>, AdamWState<float>&, double, double,
                                const AdamWHyper&);
template void adamw_step<double>(std::span<Parameter<double>* const>, AdamWState<double>&, double, double,
                                 const AdamWHyper&);

std::vector<TrainRecord> train(ModelState<float>& model, const SyntheticDataset& ds, const TrainConfig& tc,
                               const TrainCallback& on_step) {
  tc.validate();
  ds.validate();
  if (model.config.num_classes != ds.num_classes)
    throw ConfigError("model has " + std::to_string(model.config.num_classes) + " classes but the dataset has " +
                      std::to_string(ds.num_classes));
  if (model.config.in_channels != 3) throw ConfigError("synthetic images have 3 channels; model expects " +
                                                       std::to_string(model.config.in_channels));
  const std::size_t batch = std::min(tc.batch_size, ds.num_samples);
  const std::size_t s = ds.image_size;
  const std::size_t image_elems = 3 * s * s;

  std::vector<Tensor<float>> images;
  std::vector<int> labels;
  for (std::size_t i = 0; i < ds.num_samples; ++i) {
    auto [img, label] = generate_sample(ds, i);
    images.push_back(std::move(img));
    labels.push_back(label);
  }

  std::mt19937_64 shuffler(tc.seed ^ 0x5DEECE66Dull);
  std::vector<std::size_t> order(ds.num_samples);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = ds.num_samples;

  const auto params = model.parameters();
  AdamWState<float> opt;
  std::vector<TrainRecord> records;
  records.reserve(tc.total_steps);

  for (std::size_t step = 1; step <= tc.total_steps; ++step) {
    Tensor<float> x({batch, 3, s, s});
    std::vector<int> y(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      if (cursor == ds.num_samples) {
        std::shuffle(order.begin(), order.end(), shuffler);
        cursor = 0;
      }
      const std::size_t idx = order[cursor++];
      std::copy_n(images[idx].data().data(), image_elems, x.data().data() + b * image_elems);
      y[b] = labels[idx];
    }

    TrainRecord rec;
    rec.step = step;
    rec.lr = lr_at(tc, step);
    try {
      model.zero_grad();
      Graph<float> g;
      Var<float> logits = forward_classify(model, g.input(std::move(x)));
      Var<float> loss = cross_entropy<float>(logits, y);
      rec.loss = loss.value()[0];
      std::size_t correct = 0;
      const auto& z = logits.value();
      const std::size_t k = model.config.num_classes;
      for (std::size_t b = 0; b < batch; ++b) {
        const float* row = z.data().data() + b * k;
        if (static_cast<int>(std::max_element(row, row + k) - row) == y[b]) ++correct;
      }
      rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(batch);
      g.backward(loss);
      g.commit_parameter_grads();
      adamw_step<float>(params, opt, rec.lr, tc.weight_decay);
    } catch (const NumericError& e) {
      throw DivergenceError(step, e.what());
    }
    if (!std::isfinite(rec.loss)) throw DivergenceError(step, "loss is not finite");
    records.push_back(rec);
    if (on_step) on_step(rec);
  }
  return records;
}

std::string metrics_csv_header() { return "step,loss,train_accuracy,lr"; }

std::string metrics_csv_row(const TrainRecord& r) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%zu,%.9g,%.6f,%.9g", r.step, r.loss, r.train_accuracy, r.lr);
  return buf;
}

}  // namespace p2t
