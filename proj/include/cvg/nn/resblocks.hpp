#pragma once

#include <cstdint>

#include <torch/torch.h>

#include "cvg/nn/cond_batchnorm.hpp"
#include "cvg/nn/recurrent.hpp"
#include "cvg/nn/spectral_norm.hpp"

namespace cvg::nn {

// Generator 2-D block, norm-act-[up]-conv-norm-act-conv, applied framewise
// to (B, T, C, H, W). The shortcut is a 1x1 conv (after the same resize)
// whenever channels or resolution change.
class GenBlock2dImpl : public torch::nn::Module {
 public:
  GenBlock2dImpl(int64_t in_channels, int64_t out_channels, int64_t cond_dim, bool upsample);

  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& cond);

  bool upsample() const { return upsample_; }

  CondBatchNorm bn1{nullptr}, bn2{nullptr};
  SNLayer conv1{nullptr}, conv2{nullptr}, shortcut{nullptr};

 private:
  bool upsample_;
};
TORCH_MODULE(GenBlock2d);

// Generator 3-D block on separable convolutions; preserves T, H, W.
class GenBlock3dImpl : public torch::nn::Module {
 public:
  GenBlock3dImpl(int64_t in_channels, int64_t out_channels, int64_t cond_dim);

  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& cond);

  CondBatchNorm bn1{nullptr}, bn2{nullptr};
  SeparableConv3d conv1{nullptr}, conv2{nullptr};
  SNLayer shortcut{nullptr};
};
TORCH_MODULE(GenBlock3d);

// Discriminator 2-D block on (N, C, H, W): [relu]-conv-relu-conv with an
// optional 2x2 average pool after the last conv; no normalisation.
class DiscBlock2dImpl : public torch::nn::Module {
 public:
  DiscBlock2dImpl(int64_t in_channels, int64_t out_channels, bool downsample,
                  bool preactivation = true);

  torch::Tensor forward(const torch::Tensor& x);

  bool downsample() const { return downsample_; }

  SNLayer conv1{nullptr}, conv2{nullptr}, shortcut{nullptr};

 private:
  bool downsample_, preactivation_;
};
TORCH_MODULE(DiscBlock2d);

// Discriminator 3-D block on (B, C, T, H, W) with 3x3x3 convolutions;
// downsampling pools space only.
class DiscBlock3dImpl : public torch::nn::Module {
 public:
  DiscBlock3dImpl(int64_t in_channels, int64_t out_channels, bool downsample,
                  bool preactivation = true);

  torch::Tensor forward(const torch::Tensor& x);

  bool downsample() const { return downsample_; }

  SNLayer conv1{nullptr}, conv2{nullptr}, shortcut{nullptr};

 private:
  bool downsample_, preactivation_;
};
TORCH_MODULE(DiscBlock3d);

torch::Tensor upsample_nearest2x(const torch::Tensor& x);  // (N, C, H, W)

}  // namespace cvg::nn
