#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "cvg/discriminators.hpp"
#include "cvg/first_level.hpp"
#include "cvg/nn/losses.hpp"
#include "cvg/up_level.hpp"
#include "cvg/video.hpp"

namespace cvg {

enum class FakeConditionSource { prev_level, data_pyramid };

struct TrainConfig {
  double lr_g = 1e-4;
  double lr_d = 5e-4;
  double beta1 = 0.0;
  double beta2 = 0.999;
  int64_t d_steps_per_g = 2;
  int64_t batch_size = 8;
  int64_t max_iters = 1000;
  int64_t early_stop_patience = 0;  // 0 disables early stopping
  int64_t eval_every = 0;           // 0 disables periodic evaluation
  int64_t eval_samples = 64;
  uint64_t seed = 0;
  FakeConditionSource fake_condition_source = FakeConditionSource::prev_level;
  nn::LossKind loss = nn::LossKind::hinge;
  bool matching_discriminator = true;
  int64_t log_every = 0;  // 0 = silent

  void validate() const;
};

// Generator + discriminator + checkpoint location of one cascade level.
// Exactly one of `first` / `up` is meaningful: level 1 uses `first`.
struct LevelSpec {
  int64_t level = 1;
  FirstLevelConfig first;
  UpLevelConfig up;
  DiscConfig disc;
  std::string checkpoint;
  nlohmann::json train_overrides = nlohmann::json::object();
};

struct MetricsConfig {
  std::string featnet;            // feature-network checkpoint path
  int64_t eval_samples = 64;
  int64_t psd_subsets = 3;
  int64_t recompute_passes = 200;
};

struct DataConfig {
  std::string manifest;
  int64_t num_classes = 0;  // 0 = unconditional models
  double holdout_fraction = 0.125;
};

struct RunConfig {
  PyramidSpec pyramid;
  std::vector<LevelSpec> levels;
  TrainConfig train;
  MetricsConfig metrics;
  DataConfig data;
  std::filesystem::path base_dir;  // relative paths resolve against this

  // Global train settings with this level's overrides applied.
  TrainConfig train_for(int64_t level) const;
  const LevelSpec& level(int64_t l) const;

  // Geometry of level l's output: (frames, size) given the data clip length
  // seen by the top level.
  int64_t frames_at(int64_t l) const;
  int64_t size_at(int64_t l) const;

  // Hash of everything that determines the trained parameters of level l.
  uint64_t fingerprint(int64_t l) const;
  nlohmann::json level_json(int64_t l) const;

  std::filesystem::path resolve(const std::string& path) const;

  void validate() const;  // throws ConfigError
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j, std::filesystem::path base_dir = {});
  // Reads a config file and applies "dotted.path=value" overrides.
  static RunConfig load(const std::filesystem::path& path,
                        const std::vector<std::string>& overrides = {});
};

// Sets `path` (dot separated, numeric components index arrays) inside `j`.
// The value is parsed as JSON when possible, otherwise taken as a string.
void apply_override(nlohmann::json& j, const std::string& assignment);

uint64_t fnv1a64(const std::string& bytes);

std::string to_string(FakeConditionSource s);

}  // namespace cvg
