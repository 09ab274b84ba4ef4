#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "p2t/tensor.hpp"

namespace p2t {

enum class DatasetKind { blobs, stripes, checkers };

std::string to_string(DatasetKind kind);
DatasetKind dataset_kind_from_string(const std::string& name);

// Procedural image classification set. (seed, index) fully determines a
// sample; labels cycle through the classes so counts differ by at most one.
//   blobs:    label + 1 soft discs at random positions, radii and colours
//   stripes:  a sinusoidal grating whose orientation encodes the label
//   checkers: a checkerboard whose cell size encodes the label
struct SyntheticDataset {
  std::size_t num_samples = 32;
  std::size_t image_size = 32;
  std::size_t num_classes = 4;
  std::uint64_t seed = 0;
  DatasetKind kind = DatasetKind::blobs;

  void validate() const;
};

// image [3, S, S] with values in [0, 1].
std::pair<Tensor<float>, int> generate_sample(const SyntheticDataset& ds, std::size_t index);

}  // namespace p2t
