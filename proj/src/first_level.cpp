#include "cvg/first_level.hpp"

#include "cvg/errors.hpp"
#include "cvg/nn/init.hpp"

namespace cvg {

void FirstLevelConfig::validate() const {
  if (ch < 1) throw ConfigError("first level: ch must be >= 1");
  if (multipliers.empty()) throw ConfigError("first level: multipliers must be nonempty");
  for (auto m : multipliers)
    if (m < 1) throw ConfigError("first level: multipliers must be >= 1");
  if (t1 < 1 || seed_hw < 1 || d_z < 1) throw ConfigError("first level: t1, seed_hw, d_z must be >= 1");
  if (num_classes < 0) throw ConfigError("first level: num_classes must be >= 0");
  if (conditional() && d_y < 1) throw ConfigError("first level: d_y must be >= 1");
}

int64_t FirstLevelConfig::output_size() const {
  return seed_hw << (static_cast<int64_t>(multipliers.size()) - 1);
}

void check_labels(const std::optional<torch::Tensor>& labels, int64_t batch, int64_t num_classes) {
  if (num_classes == 0) return;
  if (!labels) throw ArgumentError("class-conditional generator needs labels");
  if (labels->dim() != 1 || labels->size(0) != batch) throw ArgumentError("labels must have length B");
  if (labels->numel() > 0 &&
      (labels->min().item<int64_t>() < 0 || labels->max().item<int64_t>() >= num_classes))
    throw ArgumentError("label out of range [0, " + std::to_string(num_classes) + ")");
}

FirstUnitImpl::FirstUnitImpl(int64_t in_channels, int64_t channels, int64_t cond_dim, bool upsample) {
  gru = register_module("gru", nn::ConvGRU(in_channels, channels));
  block_a = register_module("block_a", nn::GenBlock2d(channels, channels, cond_dim, upsample));
  block_b = register_module("block_b", nn::GenBlock2d(channels, channels, cond_dim, false));
}

torch::Tensor FirstUnitImpl::forward(const torch::Tensor& x, const torch::Tensor& cond) {
  return block_b(block_a(gru(x), cond), cond);
}

FirstLevelGeneratorImpl::FirstLevelGeneratorImpl(FirstLevelConfig config) : config_(std::move(config)) {
  config_.validate();
  const int64_t cond = config_.cond_dim();
  if (config_.conditional()) {
    embed = register_module("embed", torch::nn::Embedding(config_.num_classes, config_.d_y));
    nn::orthogonal_(embed->weight);
  }
  linear = register_module(
      "linear", nn::sn_linear(cond, config_.seed_channels() * config_.seed_hw * config_.seed_hw));
  units = register_module("units", torch::nn::ModuleList());
  int64_t in = config_.seed_channels();
  const auto n = static_cast<int64_t>(config_.multipliers.size());
  for (int64_t u = 0; u < n; ++u) {
    const int64_t c = config_.ch * config_.multipliers[static_cast<size_t>(u)];
    units->push_back(FirstUnit(in, c, cond, u + 1 < n));
    in = c;
  }
  head_bn = register_module("head_bn", nn::CondBatchNorm(in, cond));
  head_conv = register_module("head_conv", nn::sn_conv2d(in, 3, 3));
}

torch::Tensor FirstLevelGeneratorImpl::condition(const torch::Tensor& z,
                                                 const std::optional<torch::Tensor>& labels) {
  if (z.dim() != 2 || z.size(1) != config_.d_z)
    throw DimensionError("noise must be (B, " + std::to_string(config_.d_z) + ")");
  check_labels(labels, z.size(0), config_.num_classes);
  if (!config_.conditional()) return z;
  return torch::cat({z, embed(*labels)}, 1);
}

torch::Tensor FirstLevelGeneratorImpl::seed_latent(const torch::Tensor& z,
                                                   const std::optional<torch::Tensor>& labels,
                                                   int64_t frames) {
  if (frames < 1) throw ArgumentError("frame count must be >= 1");
  const int64_t s = config_.seed_hw;
  auto seed = linear(condition(z, labels)).view({z.size(0), 1, config_.seed_channels(), s, s});
  return seed.expand({z.size(0), frames, config_.seed_channels(), s, s});
}

torch::Tensor FirstLevelGeneratorImpl::forward(const torch::Tensor& z,
                                               const std::optional<torch::Tensor>& labels,
                                               int64_t frames) {
  if (frames <= 0) frames = config_.t1;
  const auto cond = condition(z, labels);
  const int64_t s = config_.seed_hw;
  auto h = linear(cond)
               .view({z.size(0), 1, config_.seed_channels(), s, s})
               .expand({z.size(0), frames, config_.seed_channels(), s, s});
  for (auto& unit : *units) h = unit->as<FirstUnitImpl>()->forward(h, cond);
  h = torch::relu(head_bn(h, cond));
  return torch::tanh(nn::framewise(h, [&](const torch::Tensor& f) { return head_conv(f); }));
}

VideoBatch generate_first(FirstLevelGenerator& generator, const torch::Tensor& z,
                          const std::optional<torch::Tensor>& labels, int64_t frames) {
  return VideoBatch(generator->forward(z, labels, frames), labels);
}

}  // namespace cvg
