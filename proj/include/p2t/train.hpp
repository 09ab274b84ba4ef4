#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "p2t/backbone.hpp"
#include "p2t/dataset.hpp"

namespace p2t {

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 0.05;
  std::size_t warmup_steps = 0;
  std::size_t total_steps = 100;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainRecord {
  std::size_t step = 0;
  double loss = 0;
  double train_accuracy = 0;
  double lr = 0;

  bool operator==(const TrainRecord&) const = default;
};

// Linear warmup from 0 to lr over warmup_steps, then half-cosine decay to 0
// at total_steps.
double lr_at(const TrainConfig& tc, std::size_t step);

struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamWState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::size_t step = 0;
};

// One decoupled-weight-decay Adam update using each parameter's grad:
//   p <- p - lr * wd * p - lr * m_hat / (sqrt(v_hat) + eps)
// Throws NumericError naming the parameter if a gradient is non-finite.
template <typename T>
void adamw_step(std::span<Parameter<T>* const> params, AdamWState<T>& state, double lr, double weight_decay,
                const AdamWHyper& hyper = {});

using TrainCallback = std::function<void(const TrainRecord&)>;

// Full-pipeline training with 1-based steps; step s uses lr_at(s). Throws
// DivergenceError with the step number if the loss stops being finite.
std::vector<TrainRecord> train(ModelState<float>& model, const SyntheticDataset& ds, const TrainConfig& tc,
                               const TrainCallback& on_step = {});

std::string metrics_csv_header();
std::string metrics_csv_row(const TrainRecord& r);

}  // namespace p2t
