#include "cvg/nn/recurrent.hpp"

#include "cvg/errors.hpp"

namespace cvg::nn {

ConvGRUImpl::ConvGRUImpl(int64_t in_channels, int64_t hidden_channels)
    : in_(in_channels), hidden_(hidden_channels) {
  conv_z = register_module("conv_z", sn_conv2d(in_ + hidden_, hidden_, 3));
  conv_r = register_module("conv_r", sn_conv2d(in_ + hidden_, hidden_, 3));
  conv_h = register_module("conv_h", sn_conv2d(in_ + hidden_, hidden_, 3));
}

torch::Tensor ConvGRUImpl::step(const torch::Tensor& h, const torch::Tensor& x) {
  return step_with(h, x, conv_z->current_weight(), conv_r->current_weight(), conv_h->current_weight());
}

torch::Tensor ConvGRUImpl::step_with(const torch::Tensor& h, const torch::Tensor& x, const torch::Tensor& wz,
                                     const torch::Tensor& wr, const torch::Tensor& wh) {
  if (h.dim() != 4 || x.dim() != 4 || h.size(0) != x.size(0) || h.size(2) != x.size(2) ||
      h.size(3) != x.size(3) || h.size(1) != hidden_ || x.size(1) != in_)
    throw DimensionError("ConvGRU step: state/input shapes disagree");
  auto hx = torch::cat({h, x}, 1);
  auto z = torch::sigmoid(conv_z->apply(hx, wz));
  auto r = torch::sigmoid(conv_r->apply(hx, wr));
  auto candidate = torch::relu(conv_h->apply(torch::cat({r * h, x}, 1), wh));
  return h + z * (candidate - h);
}

torch::Tensor ConvGRUImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 5 || x.size(2) != in_) throw DimensionError("ConvGRU expects (B,T,C_in,H,W)");
  const int64_t b = x.size(0), t = x.size(1);
  auto h = torch::zeros({b, hidden_, x.size(3), x.size(4)}, x.options());
  // Normalised once per sequence: one power-iteration update per forward,
  // and one weight copy kept for backward instead of one per step.
  const auto wz = conv_z->current_weight(), wr = conv_r->current_weight(), wh = conv_h->current_weight();
  std::vector<torch::Tensor> states;
  states.reserve(static_cast<size_t>(t));
  for (int64_t i = 0; i < t; ++i) {
    h = step_with(h, x.select(1, i), wz, wr, wh);
    states.push_back(h);
  }
  return torch::stack(states, 1);
}

SeparableConv3dImpl::SeparableConv3dImpl(int64_t in_channels, int64_t out_channels) {
  temporal = register_module("temporal", sn_conv3d(in_channels, out_channels, {3, 1, 1}, {1, 0, 0}));
  spatial = register_module("spatial", sn_conv3d(out_channels, out_channels, {1, 3, 3}, {0, 1, 1}));
}

torch::Tensor SeparableConv3dImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 5) throw DimensionError("SeparableConv3d expects (B,T,C,H,W)");
  return to_time_first(spatial(temporal(to_channels_first(x))));
}

}  // namespace cvg::nn
