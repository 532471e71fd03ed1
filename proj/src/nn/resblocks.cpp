#include "cvg/nn/resblocks.hpp"

namespace cvg::nn {

torch::Tensor upsample_nearest2x(const torch::Tensor& x) {
  return x.repeat_interleave(2, -2).repeat_interleave(2, -1);
}

GenBlock2dImpl::GenBlock2dImpl(int64_t in_channels, int64_t out_channels, int64_t cond_dim,
                               bool upsample)
    : upsample_(upsample) {
  bn1 = register_module("bn1", CondBatchNorm(in_channels, cond_dim));
  conv1 = register_module("conv1", sn_conv2d(in_channels, out_channels, 3));
  bn2 = register_module("bn2", CondBatchNorm(out_channels, cond_dim));
  conv2 = register_module("conv2", sn_conv2d(out_channels, out_channels, 3));
  if (in_channels != out_channels || upsample)
    shortcut = register_module("shortcut", sn_conv2d(in_channels, out_channels, 1));
}

torch::Tensor GenBlock2dImpl::forward(const torch::Tensor& x, const torch::Tensor& cond) {
  auto h = torch::relu(bn1(x, cond));
  h = framewise(h, [&](const torch::Tensor& f) {
    return conv1(upsample_ ? upsample_nearest2x(f) : f);
  });
  h = torch::relu(bn2(h, cond));
  h = framewise(h, [&](const torch::Tensor& f) { return conv2(f); });
  auto skip = x;
  if (shortcut) {
    skip = framewise(x, [&](const torch::Tensor& f) {
      return shortcut(upsample_ ? upsample_nearest2x(f) : f);
    });
  }
  return skip + h;
}

GenBlock3dImpl::GenBlock3dImpl(int64_t in_channels, int64_t out_channels, int64_t cond_dim) {
  bn1 = register_module("bn1", CondBatchNorm(in_channels, cond_dim));
  conv1 = register_module("conv1", SeparableConv3d(in_channels, out_channels));
  bn2 = register_module("bn2", CondBatchNorm(out_channels, cond_dim));
  conv2 = register_module("conv2", SeparableConv3d(out_channels, out_channels));
  if (in_channels != out_channels)
    shortcut = register_module("shortcut", sn_conv2d(in_channels, out_channels, 1));
}

torch::Tensor GenBlock3dImpl::forward(const torch::Tensor& x, const torch::Tensor& cond) {
  auto h = conv1(torch::relu(bn1(x, cond)));
  h = conv2(torch::relu(bn2(h, cond)));
  auto skip = shortcut ? framewise(x, [&](const torch::Tensor& f) { return shortcut(f); }) : x;
  return skip + h;
}

DiscBlock2dImpl::DiscBlock2dImpl(int64_t in_channels, int64_t out_channels, bool downsample,
                                 bool preactivation)
    : downsample_(downsample), preactivation_(preactivation) {
  conv1 = register_module("conv1", sn_conv2d(in_channels, out_channels, 3));
  conv2 = register_module("conv2", sn_conv2d(out_channels, out_channels, 3));
  if (in_channels != out_channels || downsample)
    shortcut = register_module("shortcut", sn_conv2d(in_channels, out_channels, 1));
}

torch::Tensor DiscBlock2dImpl::forward(const torch::Tensor& x) {
  auto h = conv1(preactivation_ ? torch::relu(x) : x);
  h = conv2(torch::relu(h));
  if (downsample_) h = torch::avg_pool2d(h, 2);
  auto skip = x;
  if (shortcut) {
    skip = shortcut(x);
    if (downsample_) skip = torch::avg_pool2d(skip, 2);
  }
  return skip + h;
}

DiscBlock3dImpl::DiscBlock3dImpl(int64_t in_channels, int64_t out_channels, bool downsample,
                                 bool preactivation)
    : downsample_(downsample), preactivation_(preactivation) {
  conv1 = register_module("conv1", sn_conv3d(in_channels, out_channels, {3, 3, 3}, {1, 1, 1}));
  conv2 = register_module("conv2", sn_conv3d(out_channels, out_channels, {3, 3, 3}, {1, 1, 1}));
  if (in_channels != out_channels || downsample)
    shortcut = register_module("shortcut", sn_conv3d(in_channels, out_channels, {1, 1, 1}, {0, 0, 0}));
}

torch::Tensor DiscBlock3dImpl::forward(const torch::Tensor& x) {
  const std::vector<int64_t> pool = {1, 2, 2};
  auto h = conv1(preactivation_ ? torch::relu(x) : x);
  h = conv2(torch::relu(h));
  if (downsample_) h = torch::avg_pool3d(h, pool);
  auto skip = x;
  if (shortcut) {
    skip = shortcut(x);
    if (downsample_) skip = torch::avg_pool3d(skip, pool);
  }
  return skip + h;
}

}  // namespace cvg::nn
