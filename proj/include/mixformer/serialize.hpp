#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mixformer/backbone.hpp"

namespace mixformer {

// Binary tensor container. Layout, little-endian throughout:
//   magic "MIXF" | u32 version | u32 tensor count |
//   per tensor: u32 name length, UTF-8 name, u32 rank, u32 dims..., f32 data
// Values are stored at 32-bit precision; loading promotes back to doubles.
inline constexpr uint32_t kWeightFileVersion = 1;

using NamedTensor = std::pair<std::string, Tensor>;

void save_tensors(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_tensors(const std::string& path);

void save_tensor(const std::string& path, const std::string& name, const Tensor& tensor);
Tensor load_single_tensor(const std::string& path, std::string* name = nullptr);

// Whole-model snapshot: every parameter plus every stat buffer, in the
// model's stable walk order. Loading requires an exact name/shape match.
void save_model_weights(Model& model, const std::string& path);
void load_model_weights(Model& model, const std::string& path);

}  // namespace mixformer
