#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "cvg/nn/resblocks.hpp"
#include "cvg/video.hpp"

namespace cvg {

enum class RecurrentKind { convgru, separable3d };

std::string to_string(RecurrentKind kind);
RecurrentKind recurrent_kind_from_string(const std::string& name);

// Architecture of an upscaling level. The last log2(k_s) units each double
// the resolution in their first 2-D block; earlier units run at the input
// resolution and are grounded on the low-resolution input.
struct UpLevelConfig {
  int64_t ch = 8;
  std::vector<int64_t> multipliers = {4, 2, 1};
  int64_t d_z = 32;
  int64_t num_classes = 0;
  int64_t d_y = 16;
  int64_t k_t = 2;
  int64_t k_s = 4;
  int64_t window_w = 4;  // training window, in input frames
  RecurrentKind recurrent_kind = RecurrentKind::separable3d;

  void validate() const;  // throws ConfigError
  bool conditional() const { return num_classes > 0; }
  int64_t cond_dim() const { return d_z + (conditional() ? d_y : 0); }
  int64_t num_upsamples() const;
  int64_t first_upsampling_unit() const {
    return static_cast<int64_t>(multipliers.size()) - num_upsamples();
  }
};

// Adds a 1x1-mapped, nearest-resized copy of `lowres` (B, T', 3, h, w) to
// `features` (B, T', C, H, W) when H <= h; otherwise returns `features`.
torch::Tensor ground_residual(const torch::Tensor& features, const torch::Tensor& lowres,
                              nn::SNLayer& projection);

// Nearest-neighbour temporal interpolation: each frame repeated k_t times.
VideoBatch temporal_interpolate_nn(const VideoBatch& v, int64_t k_t);

class UpUnitImpl : public torch::nn::Module {
 public:
  UpUnitImpl(int64_t in_channels, int64_t channels, int64_t cond_dim, RecurrentKind kind,
             bool upsample, bool grounded_before_upsample, bool grounded_after_upsample);

  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& lowres,
                        const torch::Tensor& cond);

  nn::GenBlock3d block_3d{nullptr};
  nn::ConvGRU gru{nullptr};
  nn::GenBlock2d block_a{nullptr}, block_b{nullptr};
  nn::SNLayer ground_3d{nullptr}, ground_a{nullptr}, ground_b{nullptr};
};
TORCH_MODULE(UpUnit);

class UpLevelGeneratorImpl : public torch::nn::Module {
 public:
  explicit UpLevelGeneratorImpl(UpLevelConfig config);

  torch::Tensor condition(const torch::Tensor& z, const std::optional<torch::Tensor>& labels);

  // Pre-head feature map (B, k_t*T, C, k_s*h, k_s*w).
  torch::Tensor features(const torch::Tensor& z, const torch::Tensor& lowres,
                         const std::optional<torch::Tensor>& labels);

  // lowres (B, T, 3, h, w) -> (B, k_t*T, 3, k_s*h, k_s*w) in (-1, 1).
  torch::Tensor forward(const torch::Tensor& z, const torch::Tensor& lowres,
                        const std::optional<torch::Tensor>& labels);

  const UpLevelConfig& config() const { return config_; }

  torch::nn::Embedding embed{nullptr};
  nn::SNLayer stem{nullptr};
  torch::nn::ModuleList units{nullptr};
  nn::CondBatchNorm head_bn{nullptr};
  nn::SNLayer head_conv{nullptr};

 private:
  torch::Tensor head(const torch::Tensor& features, const torch::Tensor& cond);

  UpLevelConfig config_;
};
TORCH_MODULE(UpLevelGenerator);

VideoBatch generate_upsampled(UpLevelGenerator& generator, const torch::Tensor& z,
                              const VideoBatch& lowres);

}  // namespace cvg
