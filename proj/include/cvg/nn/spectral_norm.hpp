#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

namespace cvg::nn {

// Power-iteration state: a unit vector of length out_features.
struct SpectralState {
  torch::Tensor u;
  bool degenerate = false;  // set when the weight is identically zero
};

struct SpectralResult {
  torch::Tensor weight;  // W / sigma (or W itself when degenerate)
  SpectralState state;
  torch::Tensor sigma;   // scalar estimate of the largest singular value
};

// Divides W (flattened to out x rest) by its power-iteration estimate of the
// top singular value. The iteration runs without grad; sigma = u^T W v keeps
// the gradient path through W. An undefined `state.u` is initialised from the
// global generator.
SpectralResult spectral_normalize(const torch::Tensor& weight, SpectralState state,
                                  int power_iters);

enum class LayerKind { linear, conv2d, conv3d };

struct SNLayerOptions {
  LayerKind kind = LayerKind::conv2d;
  int64_t in = 1;
  int64_t out = 1;
  std::vector<int64_t> kernel;   // empty for linear
  std::vector<int64_t> padding;  // same rank as kernel
  bool bias = true;
  bool spectral = true;
};

// Linear / 2-D / 3-D convolution whose weight is spectrally normalised on
// every forward. In training mode each forward advances the power iteration
// by `power_iters` steps; in eval mode the stored u is reused as is.
class SNLayerImpl : public torch::nn::Module {
 public:
  explicit SNLayerImpl(SNLayerOptions options);

  torch::Tensor forward(const torch::Tensor& x);

  // The weight as used by forward, without advancing the iteration.
  torch::Tensor effective_weight();
  // What forward does to the weight: advances the iteration in training
  // mode and returns W / sigma. Lets recurrent callers normalise once per
  // sequence and reuse the result through apply().
  torch::Tensor current_weight();
  torch::Tensor apply(const torch::Tensor& x, const torch::Tensor& w) const;

  const SNLayerOptions& options() const { return options_; }
  int power_iters = 1;

  torch::Tensor weight;
  torch::Tensor bias;
  torch::Tensor u;

 private:
  torch::Tensor normalized_weight(int iters);

  SNLayerOptions options_;
};
TORCH_MODULE(SNLayer);

SNLayer sn_conv2d(int64_t in, int64_t out, int64_t kernel, bool bias = true);
SNLayer sn_conv3d(int64_t in, int64_t out, std::vector<int64_t> kernel,
                  std::vector<int64_t> padding, bool bias = true);
SNLayer sn_linear(int64_t in, int64_t out, bool bias = true);

// Sets the per-forward power-iteration count of every SN layer under `root`.
void set_power_iterations(torch::nn::Module& root, int iters);

}  // namespace cvg::nn
