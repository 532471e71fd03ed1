#include "cvg/up_level.hpp"

#include "cvg/errors.hpp"
#include "cvg/first_level.hpp"
#include "cvg/nn/init.hpp"

namespace cvg {

std::string to_string(RecurrentKind kind) {
  return kind == RecurrentKind::convgru ? "convgru" : "separable3d";
}

RecurrentKind recurrent_kind_from_string(const std::string& name) {
  if (name == "convgru") return RecurrentKind::convgru;
  if (name == "separable3d") return RecurrentKind::separable3d;
  throw ConfigError("unknown recurrent_kind '" + name + "'");
}

int64_t UpLevelConfig::num_upsamples() const {
  int64_t n = 0;
  for (int64_t f = k_s; f > 1; f /= 2) ++n;
  return n;
}

void UpLevelConfig::validate() const {
  if (ch < 1 || d_z < 1) throw ConfigError("up level: ch and d_z must be >= 1");
  if (multipliers.empty()) throw ConfigError("up level: multipliers must be nonempty");
  for (auto m : multipliers)
    if (m < 1) throw ConfigError("up level: multipliers must be >= 1");
  if (k_t < 1 || k_s < 1) throw ConfigError("up level: k_t and k_s must be >= 1");
  if ((k_s & (k_s - 1)) != 0) throw ConfigError("up level: k_s must be a power of two");
  if (num_upsamples() > static_cast<int64_t>(multipliers.size()))
    throw ConfigError("up level: " + std::to_string(multipliers.size()) +
                      " units cannot realise k_s = " + std::to_string(k_s));
  if (window_w < 1) throw ConfigError("up level: window_w must be >= 1");
  if (num_classes < 0) throw ConfigError("up level: num_classes must be >= 0");
  if (conditional() && d_y < 1) throw ConfigError("up level: d_y must be >= 1");
}

torch::Tensor ground_residual(const torch::Tensor& features, const torch::Tensor& lowres,
                              nn::SNLayer& projection) {
  const int64_t h = features.size(3), w = features.size(4);
  if (h > lowres.size(3) || w > lowres.size(4)) return features;
  if (features.size(1) != lowres.size(1))
    throw DimensionError("grounding input must already be interpolated to the feature length");
  auto resized = nearest_resize(lowres, h, w);
  return features + nn::framewise(resized, [&](const torch::Tensor& f) { return projection(f); });
}

VideoBatch temporal_interpolate_nn(const VideoBatch& v, int64_t k_t) {
  const int64_t sub = v.subsample % k_t == 0 ? v.subsample / k_t : v.subsample;
  return VideoBatch(repeat_frames(v.data, k_t), v.labels, sub);
}

UpUnitImpl::UpUnitImpl(int64_t in_channels, int64_t channels, int64_t cond_dim, RecurrentKind kind,
                       bool upsample, bool grounded_before_upsample, bool grounded_after_upsample) {
  if (kind == RecurrentKind::separable3d)
    block_3d = register_module("block_3d", nn::GenBlock3d(in_channels, channels, cond_dim));
  else
    gru = register_module("gru", nn::ConvGRU(in_channels, channels));
  block_a = register_module("block_a", nn::GenBlock2d(channels, channels, cond_dim, upsample));
  block_b = register_module("block_b", nn::GenBlock2d(channels, channels, cond_dim, false));
  if (grounded_before_upsample) ground_3d = register_module("ground_3d", nn::sn_conv2d(3, channels, 1));
  if (grounded_after_upsample) {
    ground_a = register_module("ground_a", nn::sn_conv2d(3, channels, 1));
    ground_b = register_module("ground_b", nn::sn_conv2d(3, channels, 1));
  }
}

torch::Tensor UpUnitImpl::forward(const torch::Tensor& x, const torch::Tensor& lowres,
                                  const torch::Tensor& cond) {
  auto h = block_3d ? block_3d(x, cond) : gru(x);
  if (ground_3d) h = ground_residual(h, lowres, ground_3d);
  h = block_a(h, cond);
  if (ground_a) h = ground_residual(h, lowres, ground_a);
  h = block_b(h, cond);
  if (ground_b) h = ground_residual(h, lowres, ground_b);
  return h;
}

UpLevelGeneratorImpl::UpLevelGeneratorImpl(UpLevelConfig config) : config_(std::move(config)) {
  config_.validate();
  const int64_t cond = config_.cond_dim();
  if (config_.conditional()) {
    embed = register_module("embed", torch::nn::Embedding(config_.num_classes, config_.d_y));
    nn::orthogonal_(embed->weight);
  }
  const int64_t c0 = config_.ch * config_.multipliers.front();
  stem = register_module("stem", nn::sn_conv2d(3 + config_.d_z, c0, 1));
  units = register_module("units", torch::nn::ModuleList());
  const auto n = static_cast<int64_t>(config_.multipliers.size());
  const int64_t first_up = config_.first_upsampling_unit();
  int64_t in = c0;
  for (int64_t u = 0; u < n; ++u) {
    const int64_t c = config_.ch * config_.multipliers[static_cast<size_t>(u)];
    const bool upsample = u >= first_up;
    // Grounding applies only while the features are at input resolution.
    units->push_back(UpUnit(in, c, cond, config_.recurrent_kind, upsample, u <= first_up, u < first_up));
    in = c;
  }
  head_bn = register_module("head_bn", nn::CondBatchNorm(in, cond));
  head_conv = register_module("head_conv", nn::sn_conv2d(in, 3, 3));
}

torch::Tensor UpLevelGeneratorImpl::condition(const torch::Tensor& z,
                                              const std::optional<torch::Tensor>& labels) {
  if (z.dim() != 2 || z.size(1) != config_.d_z)
    throw DimensionError("noise must be (B, " + std::to_string(config_.d_z) + ")");
  check_labels(labels, z.size(0), config_.num_classes);
  if (!config_.conditional()) return z;
  return torch::cat({z, embed(*labels)}, 1);
}

torch::Tensor UpLevelGeneratorImpl::features(const torch::Tensor& z, const torch::Tensor& lowres,
                                             const std::optional<torch::Tensor>& labels) {
  if (lowres.dim() != 5 || lowres.size(2) != 3)
    throw DimensionError("low-resolution input must be (B, T, 3, h, w)");
  if (lowres.size(0) != z.size(0)) throw DimensionError("noise and input batch sizes differ");
  const auto cond = condition(z, labels);
  auto low = repeat_frames(lowres, config_.k_t);
  const int64_t b = low.size(0), t = low.size(1), h = low.size(3), w = low.size(4);
  auto noise_map = z.view({b, 1, config_.d_z, 1, 1}).expand({b, t, config_.d_z, h, w});
  auto x = nn::framewise(torch::cat({low, noise_map}, 2),
                         [&](const torch::Tensor& f) { return stem(f); });
  for (auto& unit : *units) x = unit->as<UpUnitImpl>()->forward(x, low, cond);
  return x;
}

torch::Tensor UpLevelGeneratorImpl::head(const torch::Tensor& features, const torch::Tensor& cond) {
  auto h = torch::relu(head_bn(features, cond));
  return torch::tanh(nn::framewise(h, [&](const torch::Tensor& f) { return head_conv(f); }));
}

torch::Tensor UpLevelGeneratorImpl::forward(const torch::Tensor& z, const torch::Tensor& lowres,
                                            const std::optional<torch::Tensor>& labels) {
  auto f = features(z, lowres, labels);
  return head(f, condition(z, labels));
}

VideoBatch generate_upsampled(UpLevelGenerator& generator, const torch::Tensor& z,
                              const VideoBatch& lowres) {
  const int64_t k_t = generator->config().k_t;
  const int64_t sub = lowres.subsample % k_t == 0 ? lowres.subsample / k_t : 1;
  return VideoBatch(generator->forward(z, lowres.data, lowres.labels), lowres.labels, sub);
}

}  // namespace cvg
