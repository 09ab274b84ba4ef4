#pragma once

#include <filesystem>

#include "p2t/backbone.hpp"

namespace p2t {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout documented in docs/checkpoint_format.md. Values are stored as
// little-endian f32; a float model round-trips bit-exactly.
void save_checkpoint(const std::filesystem::path& path, ModelState<float>& model);
ModelState<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace p2t
