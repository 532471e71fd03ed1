#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <torch/torch.h>

#include "cvg/nn/resblocks.hpp"
#include "cvg/video.hpp"

namespace cvg {

struct DiscConfig {
  int64_t ch = 8;
  std::vector<int64_t> multipliers = {1, 2, 4};
  int64_t k_frames = 4;          // frames scored by the spatial discriminator
  int64_t spatial_ds_factor = 2;  // temporal discriminator input downsampling
  int64_t num_classes = 0;
  bool projection = true;         // class projection when num_classes > 0

  void validate() const;  // throws ConfigError
};

// Blocks downsample (2x2 average pool) until the map is 4 pixels wide; the
// last block never downsamples.
bool disc_block_downsamples(size_t index, size_t count, int64_t resolution);

// Frame discriminator: 2-D residual stack, sum pool, linear head, optional
// class projection. Scores each frame independently.
class SpatialDiscriminatorImpl : public torch::nn::Module {
 public:
  SpatialDiscriminatorImpl(DiscConfig config, int64_t resolution);

  // frames (N, 3, H, W) -> (N)
  torch::Tensor score_frames(const torch::Tensor& frames, const std::optional<torch::Tensor>& labels);

  // Picks k frames per video (random without replacement in training mode,
  // evenly spaced in eval mode) and scores them: (B * k).
  torch::Tensor forward(const torch::Tensor& video, const std::optional<torch::Tensor>& labels);

  std::vector<int64_t> sample_indices(int64_t frames);

  torch::nn::ModuleList blocks{nullptr};
  nn::SNLayer head{nullptr}, class_proj{nullptr};

 private:
  DiscConfig config_;
};
TORCH_MODULE(SpatialDiscriminator);

// Video discriminator: optional bilinear downsampling, two 3-D residual
// blocks, then framewise 2-D blocks; sum pool over space gives one score
// per frame: (B, T). Also used, with 6 input channels and no stem
// downsampling, as the matching discriminator.
class TemporalDiscriminatorImpl : public torch::nn::Module {
 public:
  TemporalDiscriminatorImpl(DiscConfig config, int64_t in_channels, int64_t resolution,
                            int64_t stem_downsample);

  torch::Tensor forward(const torch::Tensor& video, const std::optional<torch::Tensor>& labels);

  int64_t in_channels() const { return in_channels_; }

  torch::nn::ModuleList blocks_3d{nullptr}, blocks_2d{nullptr};
  nn::SNLayer head{nullptr}, class_proj{nullptr};

 private:
  DiscConfig config_;
  int64_t in_channels_;
  int64_t stem_downsample_;
};
TORCH_MODULE(TemporalDiscriminator);

// Reduces x_out to the input geometry (subsample by k_t, bilinear by k_s)
// and concatenates it with x_in on channels: (B, T_in, 6, H_in, W_in).
torch::Tensor matching_pair(const torch::Tensor& x_out, const torch::Tensor& x_in, int64_t k_t,
                            int64_t k_s);

// Level 1 takes [spatial, temporal]; upscaling levels take [spatial,
// temporal, matching] (or two parts when the matching head is disabled).
torch::Tensor assemble_scores(int64_t level, const std::vector<torch::Tensor>& parts,
                              bool matching_enabled = true);

// The discriminators of one cascade level.
class LevelDiscriminatorsImpl : public torch::nn::Module {
 public:
  // `resolution` / `frames` describe the level output; for level > 1 the
  // matching head sees the input geometry (resolution / k_s).
  LevelDiscriminatorsImpl(int64_t level, DiscConfig config, int64_t resolution, int64_t k_t,
                          int64_t k_s, bool matching_enabled);

  // Flat assembled scores for a batch of (output, input) videos; `input`
  // is ignored for level 1.
  torch::Tensor forward(const torch::Tensor& output, const std::optional<torch::Tensor>& input,
                        const std::optional<torch::Tensor>& labels);

  int64_t level() const { return level_; }
  bool matching_enabled() const { return static_cast<bool>(matching); }

  SpatialDiscriminator spatial{nullptr};
  TemporalDiscriminator temporal{nullptr};
  TemporalDiscriminator matching{nullptr};

 private:
  int64_t level_, k_t_, k_s_;
};
TORCH_MODULE(LevelDiscriminators);

}  // namespace cvg
