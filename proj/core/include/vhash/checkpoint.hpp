#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "vhash/model.hpp"

namespace vhash {

// MCBN checkpoint: every cell's tensors (f32, row-major) and per-timestep
// running statistics, followed by global metadata.
std::vector<std::uint8_t> serialize_checkpoint(const Model& model);
Model deserialize_checkpoint(std::vector<std::uint8_t> bytes);

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace vhash
