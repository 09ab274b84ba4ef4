#include "p2t/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace p2t {

std::string to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::blobs:
      return "blobs";
    case DatasetKind::stripes:
      return "stripes";
    case DatasetKind::checkers:
      return "checkers";
  }
  return "?";
}

DatasetKind dataset_kind_from_string(const std::string& name) {
  if (name == "blobs") return DatasetKind::blobs;
  if (name == "stripes") return DatasetKind::stripes;
  if (name == "checkers") return DatasetKind::checkers;
  throw ConfigError("dataset.kind: unknown value '" + name + "' (expected one of blobs, stripes, checkers)");
}

void SyntheticDataset::validate() const {
  if (num_samples == 0) throw ConfigError("dataset.num_samples: must be positive");
  if (image_size < 4) throw ConfigError("dataset.image_size: must be at least 4");
  if (num_classes < 2) throw ConfigError("dataset.num_classes: must be at least 2");
  if (kind == DatasetKind::checkers && num_classes > 8)
    throw ConfigError("dataset.num_classes: checkers supports at most 8 classes");
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

class SampleRng {
 public:
  SampleRng(std::uint64_t seed, std::uint64_t index) : engine_(splitmix64(seed ^ splitmix64(index + 1))) {}
  double uniform(double lo, double hi) { return lo + (hi - lo) * unit_(engine_); }

 private:
  std::mt19937_64 engine_;
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
};

void draw_blobs(Tensor<float>& img, std::size_t s, int label, SampleRng& rng) {
  const double size = static_cast<double>(s);
  for (std::size_t c = 0; c < 3; ++c) {
    const double bg = rng.uniform(0.0, 0.25);
    for (std::size_t i = 0; i < s * s; ++i) img[c * s * s + i] = static_cast<float>(bg);
  }
  for (int b = 0; b <= label; ++b) {
    const double cy = rng.uniform(0.15, 0.85) * size;
    const double cx = rng.uniform(0.15, 0.85) * size;
    const double r = rng.uniform(0.06, 0.14) * size;
    double colour[3];
    for (auto& v : colour) v = rng.uniform(0.35, 1.0);
    for (std::size_t y = 0; y < s; ++y)
      for (std::size_t x = 0; x < s; ++x) {
        const double d2 = (y + 0.5 - cy) * (y + 0.5 - cy) + (x + 0.5 - cx) * (x + 0.5 - cx);
        const double a = std::exp(-d2 / (2 * r * r));
        for (std::size_t c = 0; c < 3; ++c) {
          float& px = img[(c * s + y) * s + x];
          px = static_cast<float>(std::max<double>(px, a * colour[c]));
        }
      }
  }
}

void draw_stripes(Tensor<float>& img, std::size_t s, int label, std::size_t classes, SampleRng& rng) {
  const double angle = std::numbers::pi * label / static_cast<double>(classes) + rng.uniform(-0.08, 0.08);
  const double period = rng.uniform(3.0, 6.0);
  const double phase = rng.uniform(0.0, 2 * std::numbers::pi);
  double lo[3], hi[3];
  for (std::size_t c = 0; c < 3; ++c) {
    lo[c] = rng.uniform(0.0, 0.3);
    hi[c] = rng.uniform(0.6, 1.0);
  }
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (std::size_t y = 0; y < s; ++y)
    for (std::size_t x = 0; x < s; ++x) {
      const double t = 0.5 + 0.5 * std::sin(2 * std::numbers::pi * (x * ca + y * sa) / period + phase);
      for (std::size_t c = 0; c < 3; ++c) img[(c * s + y) * s + x] = static_cast<float>(lo[c] + (hi[c] - lo[c]) * t);
    }
}

void draw_checkers(Tensor<float>& img, std::size_t s, int label, SampleRng& rng) {
  const std::size_t cell = std::size_t{1} << (label % 4 + 1);
  const std::size_t oy = static_cast<std::size_t>(rng.uniform(0, static_cast<double>(cell)));
  const std::size_t ox = static_cast<std::size_t>(rng.uniform(0, static_cast<double>(cell)));
  double a[3], b[3];
  for (std::size_t c = 0; c < 3; ++c) {
    a[c] = rng.uniform(0.0, 0.4);
    b[c] = rng.uniform(0.6, 1.0);
  }
  const bool invert = label / 4 % 2 == 1;
  for (std::size_t y = 0; y < s; ++y)
    for (std::size_t x = 0; x < s; ++x) {
      const bool on = (((y + oy) / cell) + ((x + ox) / cell)) % 2 == (invert ? 1u : 0u);
      for (std::size_t c = 0; c < 3; ++c) img[(c * s + y) * s + x] = static_cast<float>(on ? b[c] : a[c]);
    }
}

}  // namespace

std::pair<Tensor<float>, int> generate_sample(const SyntheticDataset& ds, std::size_t index) {
  ds.validate();
  if (index >= ds.num_samples)
    throw DimensionError("sample index " + std::to_string(index) + " out of range for " +
                         std::to_string(ds.num_samples) + " samples");
  const int label = static_cast<int>(index % ds.num_classes);
  const std::size_t s = ds.image_size;
  Tensor<float> img({3, s, s});
  SampleRng rng(ds.seed, index);
  switch (ds.kind) {
    case DatasetKind::blobs:
      draw_blobs(img, s, label, rng);
      break;
    case DatasetKind::stripes:
      draw_stripes(img, s, label, ds.num_classes, rng);
      break;
    case DatasetKind::checkers:
      draw_checkers(img, s, label, rng);
      break;
  }
  return {std::move(img), label};
}

}  // namespace p2t
