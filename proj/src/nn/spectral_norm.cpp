#include "cvg/nn/spectral_norm.hpp"

#include "cvg/errors.hpp"
#include "cvg/nn/init.hpp"

namespace cvg::nn {

namespace {

torch::Tensor unit(const torch::Tensor& v) { return v / v.norm().clamp_min(1e-12); }

}  // namespace

SpectralResult spectral_normalize(const torch::Tensor& weight, SpectralState state,
                                  int power_iters) {
  if (power_iters < 0) throw ArgumentError("power_iters must be >= 0");
  const auto mat = weight.reshape({weight.size(0), -1});
  SpectralResult result;
  {
    torch::NoGradGuard no_grad;
    if (mat.abs().max().item<double>() == 0.0) {
      result.weight = weight;
      result.state = std::move(state);
      result.state.degenerate = true;
      result.sigma = torch::zeros({}, weight.options());
      return result;
    }
    auto u = state.u;
    if (!u.defined() || u.numel() != mat.size(0)) u = unit(torch::randn({mat.size(0)}, mat.options()));
    u = u.to(mat.dtype());
    for (int i = 0; i < power_iters; ++i) {
      auto v = unit(torch::mv(mat.t(), u));
      u = unit(torch::mv(mat, v));
    }
    state.u = u;
    state.degenerate = false;
  }
  torch::Tensor v;
  {
    torch::NoGradGuard no_grad;
    v = unit(torch::mv(mat.t(), state.u));
  }
  result.sigma = torch::dot(state.u, torch::mv(mat, v));
  result.weight = weight / result.sigma;
  result.state = std::move(state);
  return result;
}

SNLayerImpl::SNLayerImpl(SNLayerOptions options) : options_(std::move(options)) {
  std::vector<int64_t> shape = {options_.out, options_.in};
  for (auto k : options_.kernel) shape.push_back(k);
  weight = register_parameter("weight", torch::empty(shape));
  orthogonal_(weight);
  if (options_.bias) bias = register_parameter("bias", torch::zeros({options_.out}));
  u = register_buffer("u", torch::nn::functional::normalize(
                               torch::randn({options_.out}),
                               torch::nn::functional::NormalizeFuncOptions().dim(0)));
}

torch::Tensor SNLayerImpl::normalized_weight(int iters) {
  if (!options_.spectral) return weight;
  auto res = spectral_normalize(weight, SpectralState{u.detach(), false}, iters);
  if (!res.state.degenerate && iters > 0) {
    torch::NoGradGuard no_grad;
    u.copy_(res.state.u);
  }
  return res.weight;
}

torch::Tensor SNLayerImpl::effective_weight() { return normalized_weight(0); }

torch::Tensor SNLayerImpl::current_weight() { return normalized_weight(is_training() ? power_iters : 0); }

torch::Tensor SNLayerImpl::forward(const torch::Tensor& x) { return apply(x, current_weight()); }

torch::Tensor SNLayerImpl::apply(const torch::Tensor& x, const torch::Tensor& w) const {
  switch (options_.kind) {
    case LayerKind::linear:
      return torch::linear(x, w, bias);
    case LayerKind::conv2d:
      return torch::conv2d(x, w, bias, 1, options_.padding);
    case LayerKind::conv3d:
      return torch::conv3d(x, w, bias, 1, options_.padding);
  }
  throw ArgumentError("unknown layer kind");
}

SNLayer sn_conv2d(int64_t in, int64_t out, int64_t kernel, bool bias) {
  const int64_t pad = kernel / 2;
  return SNLayer(SNLayerOptions{LayerKind::conv2d, in, out, {kernel, kernel}, {pad, pad}, bias, true});
}

SNLayer sn_conv3d(int64_t in, int64_t out, std::vector<int64_t> kernel,
                  std::vector<int64_t> padding, bool bias) {
  return SNLayer(SNLayerOptions{LayerKind::conv3d, in, out, std::move(kernel), std::move(padding),
                                bias, true});
}

SNLayer sn_linear(int64_t in, int64_t out, bool bias) {
  return SNLayer(SNLayerOptions{LayerKind::linear, in, out, {}, {}, bias, true});
}

void set_power_iterations(torch::nn::Module& root, int iters) {
  for (auto& m : root.modules(/*include_self=*/true)) {
    if (auto* sn = m->as<SNLayerImpl>()) sn->power_iters = iters;
  }
}

}  // namespace cvg::nn
