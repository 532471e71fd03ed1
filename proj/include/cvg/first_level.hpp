#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <torch/torch.h>

#include "cvg/nn/resblocks.hpp"
#include "cvg/video.hpp"

namespace cvg {

// Level-1 generator architecture. Output spatial size is
// seed_hw * 2^(multipliers.size() - 1).
struct FirstLevelConfig {
  int64_t ch = 16;
  std::vector<int64_t> multipliers = {4, 2};
  int64_t t1 = 8;
  int64_t seed_hw = 4;
  int64_t d_z = 32;
  int64_t num_classes = 0;  // 0 = unconditional
  int64_t d_y = 16;

  void validate() const;  // throws ConfigError
  bool conditional() const { return num_classes > 0; }
  int64_t cond_dim() const { return d_z + (conditional() ? d_y : 0); }
  int64_t output_size() const;
  int64_t seed_channels() const { return 8 * ch; }
};

// One unit: ConvGRU over time, then two framewise residual blocks; the
// first block doubles H and W unless this is the last unit.
class FirstUnitImpl : public torch::nn::Module {
 public:
  FirstUnitImpl(int64_t in_channels, int64_t channels, int64_t cond_dim, bool upsample);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& cond);

  nn::ConvGRU gru{nullptr};
  nn::GenBlock2d block_a{nullptr}, block_b{nullptr};
};
TORCH_MODULE(FirstUnit);

class FirstLevelGeneratorImpl : public torch::nn::Module {
 public:
  explicit FirstLevelGeneratorImpl(FirstLevelConfig config);

  // [z ; embed(y)] -> (B, cond_dim)
  torch::Tensor condition(const torch::Tensor& z, const std::optional<torch::Tensor>& labels);

  // Linear map of the condition to (8ch, s, s), replicated over `frames`.
  torch::Tensor seed_latent(const torch::Tensor& z, const std::optional<torch::Tensor>& labels,
                            int64_t frames);

  // (B, frames, 3, H, W) in (-1, 1); frames <= 0 means config.t1.
  torch::Tensor forward(const torch::Tensor& z, const std::optional<torch::Tensor>& labels,
                        int64_t frames = 0);

  const FirstLevelConfig& config() const { return config_; }

  torch::nn::Embedding embed{nullptr};
  nn::SNLayer linear{nullptr};
  torch::nn::ModuleList units{nullptr};
  nn::CondBatchNorm head_bn{nullptr};
  nn::SNLayer head_conv{nullptr};

 private:
  FirstLevelConfig config_;
};
TORCH_MODULE(FirstLevelGenerator);

// Convenience wrapper producing a labelled VideoBatch.
VideoBatch generate_first(FirstLevelGenerator& generator, const torch::Tensor& z,
                          const std::optional<torch::Tensor>& labels, int64_t frames = 0);

// Shared by both generator kinds.
void check_labels(const std::optional<torch::Tensor>& labels, int64_t batch, int64_t num_classes);

}  // namespace cvg
