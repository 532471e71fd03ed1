#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

namespace cvg {

struct NamedArray {
  std::string name;
  torch::Tensor tensor;
};

// Archive layout: "CVGCKPT1", u64 metadata length, metadata JSON, u32 array
// count, then per array: u32 name length, name, u8 dtype tag, u32 rank,
// u64 dims, little-endian data.
struct LevelCheckpoint {
  int64_t level = 1;
  uint64_t fingerprint = 0;
  int64_t iteration = 0;
  int64_t g_steps = 0;
  int64_t d_steps = 0;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json history = nlohmann::json::array();
  nlohmann::json extra = nlohmann::json::object();
  std::vector<NamedArray> arrays;

  const torch::Tensor* find(const std::string& name) const;

  // Writes to a temporary sibling and renames it into place.
  void save(const std::filesystem::path& path) const;
  static LevelCheckpoint load(const std::filesystem::path& path);
};

// Parameters and buffers of `module`, cloned, named "<prefix><path>".
void collect_state(torch::nn::Module& module, const std::string& prefix, std::vector<NamedArray>& out);

// Copies arrays back. Parameters must match in shape; buffers may change
// shape (running statistics are allocated lazily). Missing arrays throw
// CheckpointError.
void restore_state(torch::nn::Module& module, const LevelCheckpoint& ckpt, const std::string& prefix);

// FNV-1a over the raw bytes of every parameter and buffer, in name order.
uint64_t state_checksum(torch::nn::Module& module);

}  // namespace cvg
