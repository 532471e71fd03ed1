#pragma once

#include <cstdint>

#include <torch/torch.h>

#include "cvg/nn/spectral_norm.hpp"

namespace cvg::nn {

// Convolutional GRU with a ReLU candidate:
//   z  = sigmoid(Conv_z([h; x]))
//   r  = sigmoid(Conv_r([h; x]))
//   h~ = relu(Conv_h([r * h; x]))
//   h' = (1 - z) * h + z * h~
class ConvGRUImpl : public torch::nn::Module {
 public:
  ConvGRUImpl(int64_t in_channels, int64_t hidden_channels);

  // h: (B, hidden, H, W), x: (B, in, H, W).
  torch::Tensor step(const torch::Tensor& h, const torch::Tensor& x);

  // x: (B, T, in, H, W) -> every hidden state (B, T, hidden, H, W); h0 = 0.
  torch::Tensor forward(const torch::Tensor& x);

  int64_t hidden_channels() const { return hidden_; }

  SNLayer conv_z{nullptr}, conv_r{nullptr}, conv_h{nullptr};

 private:
  torch::Tensor step_with(const torch::Tensor& h, const torch::Tensor& x, const torch::Tensor& wz,
                          const torch::Tensor& wr, const torch::Tensor& wh);

  int64_t in_, hidden_;
};
TORCH_MODULE(ConvGRU);

// Temporal 1-D convolution (kernel 3, padding 1) followed by a spatial 3x3
// convolution (padding 1). (B, T, C, H, W) -> (B, T, C', H, W).
class SeparableConv3dImpl : public torch::nn::Module {
 public:
  SeparableConv3dImpl(int64_t in_channels, int64_t out_channels);

  torch::Tensor forward(const torch::Tensor& x);

  SNLayer temporal{nullptr}, spatial{nullptr};
};
TORCH_MODULE(SeparableConv3d);

// (B, T, C, H, W) <-> (B, C, T, H, W)
inline torch::Tensor to_channels_first(const torch::Tensor& x) { return x.permute({0, 2, 1, 3, 4}); }
inline torch::Tensor to_time_first(const torch::Tensor& x) { return x.permute({0, 2, 1, 3, 4}); }

// Applies a 4-D op to every frame by folding T into the batch axis.
template <typename Fn>
torch::Tensor framewise(const torch::Tensor& x, Fn&& fn) {
  const int64_t b = x.size(0), t = x.size(1);
  auto y = fn(x.reshape({b * t, x.size(2), x.size(3), x.size(4)}));
  return y.view({b, t, y.size(1), y.size(2), y.size(3)});
}

}  // namespace cvg::nn
