#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>

#include <torch/torch.h>

#include "cvg/video.hpp"

namespace cvg {

// Small 3-D convolutional video classifier used as the feature map behind
// IS / FID / FVD. Inputs of any length are accepted; H and W are resized
// (nearest) to `size` first.
struct FeatureNetConfig {
  int64_t ch = 16;
  int64_t feature_dim = 64;
  int64_t num_classes = 8;
  int64_t size = 32;

  void validate() const;
};

class FeatureNetImpl : public torch::nn::Module {
 public:
  explicit FeatureNetImpl(FeatureNetConfig config);

  // (B, T, 3, H, W) -> penultimate pooled features (B, feature_dim).
  torch::Tensor features(const torch::Tensor& video);
  torch::Tensor logits_from_features(const torch::Tensor& features);
  torch::Tensor forward(const torch::Tensor& video);  // logits (B, K)

  const FeatureNetConfig& config() const { return config_; }

  torch::nn::Conv3d conv1{nullptr}, conv2{nullptr}, conv3{nullptr};
  torch::nn::Linear fc{nullptr};

 private:
  FeatureNetConfig config_;
};
TORCH_MODULE(FeatureNet);

struct FeatureNetTraining {
  int64_t iters = 400;
  int64_t batch_size = 16;
  int64_t clip_frames = 16;
  double lr = 2e-3;
  uint64_t seed = 0;
  std::function<void(int64_t iter, double loss)> on_log;
};

// Trains on random temporal crops of `data`, mixed with the degradations
// generated videos show (temporal subsampling, 4x spatial pooling).
FeatureNet train_featnet(const VideoBatch& data, const FeatureNetConfig& config,
                         const FeatureNetTraining& options);

// Top-1 accuracy on full clips.
double featnet_accuracy(FeatureNet& net, const VideoBatch& data);

void save_featnet(const std::filesystem::path& path, FeatureNet& net);
FeatureNet load_featnet(const std::filesystem::path& path);  // MissingPrerequisiteError if absent

// Batched, grad-free evaluation helpers (eval mode).
torch::Tensor clip_logits(FeatureNet& net, const torch::Tensor& videos, int64_t batch = 32);
// Every frame scored as a one-frame clip: (N*T, feature_dim).
torch::Tensor frame_features(FeatureNet& net, const torch::Tensor& videos, int64_t batch = 256);

}  // namespace cvg
