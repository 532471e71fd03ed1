#include "cvg/discriminators.hpp"

#include "cvg/errors.hpp"

namespace cvg {

void DiscConfig::validate() const {
  if (ch < 1 || multipliers.empty()) throw ConfigError("discriminator: ch and multipliers required");
  for (auto m : multipliers)
    if (m < 1) throw ConfigError("discriminator: multipliers must be >= 1");
  if (k_frames < 1) throw ConfigError("discriminator: k_frames must be >= 1");
  if (spatial_ds_factor < 1) throw ConfigError("discriminator: spatial_ds_factor must be >= 1");
  if (num_classes < 0) throw ConfigError("discriminator: num_classes must be >= 0");
}

bool disc_block_downsamples(size_t index, size_t count, int64_t resolution) {
  return index + 1 < count && resolution > 4;
}

namespace {

torch::Tensor project_classes(nn::SNLayer& proj, const torch::Tensor& pooled,
                              const std::optional<torch::Tensor>& labels, int64_t num_classes) {
  if (!proj || !labels) return torch::zeros({pooled.size(0)}, pooled.options());
  auto one_hot = torch::one_hot(*labels, num_classes).to(pooled.dtype());
  return (proj(one_hot) * pooled).sum(1);
}

}  // namespace

SpatialDiscriminatorImpl::SpatialDiscriminatorImpl(DiscConfig config, int64_t resolution)
    : config_(std::move(config)) {
  config_.validate();
  blocks = register_module("blocks", torch::nn::ModuleList());
  int64_t in = 3, res = resolution;
  const size_t n = config_.multipliers.size();
  for (size_t i = 0; i < n; ++i) {
    const int64_t out = config_.ch * config_.multipliers[i];
    const bool down = disc_block_downsamples(i, n, res);
    blocks->push_back(nn::DiscBlock2d(in, out, down, /*preactivation=*/i > 0));
    if (down) res /= 2;
    in = out;
  }
  head = register_module("head", nn::sn_linear(in, 1));
  if (config_.projection && config_.num_classes > 0)
    class_proj = register_module("class_proj", nn::sn_linear(config_.num_classes, in, false));
}

torch::Tensor SpatialDiscriminatorImpl::score_frames(const torch::Tensor& frames,
                                                     const std::optional<torch::Tensor>& labels) {
  auto h = frames;
  for (auto& block : *blocks) h = block->as<nn::DiscBlock2dImpl>()->forward(h);
  auto pooled = torch::relu(h).sum({2, 3});
  return head(pooled).squeeze(1) + project_classes(class_proj, pooled, labels, config_.num_classes);
}

std::vector<int64_t> SpatialDiscriminatorImpl::sample_indices(int64_t frames) {
  const int64_t k = config_.k_frames;
  if (frames < k)
    throw ArgumentError("spatial discriminator needs at least " + std::to_string(k) + " frames, got " +
                        std::to_string(frames));
  std::vector<int64_t> idx(static_cast<size_t>(k));
  if (is_training()) {
    auto perm = torch::randperm(frames, torch::kInt64).narrow(0, 0, k);
    perm = std::get<0>(perm.sort());
    for (int64_t i = 0; i < k; ++i) idx[static_cast<size_t>(i)] = perm[i].item<int64_t>();
  } else {
    for (int64_t i = 0; i < k; ++i) idx[static_cast<size_t>(i)] = i * frames / k;
  }
  return idx;
}

torch::Tensor SpatialDiscriminatorImpl::forward(const torch::Tensor& video,
                                                const std::optional<torch::Tensor>& labels) {
  if (video.dim() != 5) throw DimensionError("spatial discriminator expects (B,T,C,H,W)");
  const int64_t b = video.size(0), k = config_.k_frames;
  std::vector<torch::Tensor> picked;
  picked.reserve(static_cast<size_t>(b));
  for (int64_t i = 0; i < b; ++i) {
    auto idx = torch::tensor(sample_indices(video.size(1)), torch::kInt64);
    picked.push_back(video[i].index_select(0, idx));
  }
  auto frames = torch::cat(picked, 0);  // (B*k, C, H, W)
  std::optional<torch::Tensor> frame_labels;
  if (labels) frame_labels = labels->repeat_interleave(k);
  return score_frames(frames, frame_labels);
}

TemporalDiscriminatorImpl::TemporalDiscriminatorImpl(DiscConfig config, int64_t in_channels,
                                                     int64_t resolution, int64_t stem_downsample)
    : config_(std::move(config)), in_channels_(in_channels), stem_downsample_(stem_downsample) {
  config_.validate();
  if (resolution % stem_downsample != 0) throw DimensionError("resolution not divisible by stem factor");
  blocks_3d = register_module("blocks_3d", torch::nn::ModuleList());
  blocks_2d = register_module("blocks_2d", torch::nn::ModuleList());
  int64_t in = in_channels, res = resolution / stem_downsample;
  const size_t n = config_.multipliers.size();
  for (size_t i = 0; i < n; ++i) {
    const int64_t out = config_.ch * config_.multipliers[i];
    const bool down = disc_block_downsamples(i, n, res);
    if (i < 2)
      blocks_3d->push_back(nn::DiscBlock3d(in, out, down, i > 0));
    else
      blocks_2d->push_back(nn::DiscBlock2d(in, out, down, true));
    if (down) res /= 2;
    in = out;
  }
  head = register_module("head", nn::sn_linear(in, 1));
  if (config_.projection && config_.num_classes > 0)
    class_proj = register_module("class_proj", nn::sn_linear(config_.num_classes, in, false));
}

torch::Tensor TemporalDiscriminatorImpl::forward(const torch::Tensor& video,
                                                 const std::optional<torch::Tensor>& labels) {
  if (video.dim() != 5 || video.size(2) != in_channels_)
    throw DimensionError("temporal discriminator expects (B,T," + std::to_string(in_channels_) + ",H,W)");
  const int64_t b = video.size(0), t = video.size(1);
  auto x = bilinear_downsample(video, stem_downsample_);
  auto h = nn::to_channels_first(x);
  for (auto& block : *blocks_3d) h = block->as<nn::DiscBlock3dImpl>()->forward(h);
  h = nn::to_time_first(h);
  if (!blocks_2d->is_empty()) {
    h = nn::framewise(h, [&](const torch::Tensor& f) {
      auto y = f;
      for (auto& block : *blocks_2d) y = block->as<nn::DiscBlock2dImpl>()->forward(y);
      return y;
    });
  }
  auto pooled = torch::relu(h).sum({3, 4}).reshape({b * t, -1});  // (B*T, C)
  std::optional<torch::Tensor> frame_labels;
  if (labels) frame_labels = labels->repeat_interleave(t);
  auto scores = head(pooled).squeeze(1) + project_classes(class_proj, pooled, frame_labels, config_.num_classes);
  return scores.view({b, t});
}

torch::Tensor matching_pair(const torch::Tensor& x_out, const torch::Tensor& x_in, int64_t k_t,
                            int64_t k_s) {
  if (x_out.dim() != 5 || x_in.dim() != 5) throw AlignmentError("matching pair expects 5-D videos");
  if (x_out.size(0) != x_in.size(0) || x_out.size(1) != k_t * x_in.size(1) ||
      x_out.size(3) != k_s * x_in.size(3) || x_out.size(4) != k_s * x_in.size(4) ||
      x_out.size(2) != x_in.size(2))
    throw AlignmentError("output geometry is not (k_t*T, k_s*H, k_s*W) of the input");
  using torch::indexing::Slice;
  auto reduced = bilinear_downsample(x_out.index({Slice(), Slice(0, torch::indexing::None, k_t)}), k_s);
  return torch::cat({reduced, x_in}, 2);
}

torch::Tensor assemble_scores(int64_t level, const std::vector<torch::Tensor>& parts,
                              bool matching_enabled) {
  if (level < 1) throw ArgumentError("level must be >= 1");
  const size_t expected = (level == 1 || !matching_enabled) ? 2 : 3;
  if (parts.size() != expected)
    throw ArgumentError("level " + std::to_string(level) + " expects " + std::to_string(expected) +
                        " score parts, got " + std::to_string(parts.size()));
  std::vector<torch::Tensor> flat;
  flat.reserve(parts.size());
  for (const auto& p : parts) flat.push_back(p.reshape({-1}));
  return torch::cat(flat, 0);
}

LevelDiscriminatorsImpl::LevelDiscriminatorsImpl(int64_t level, DiscConfig config, int64_t resolution,
                                                 int64_t k_t, int64_t k_s, bool matching_enabled)
    : level_(level), k_t_(k_t), k_s_(k_s) {
  spatial = register_module("spatial", SpatialDiscriminator(config, resolution));
  temporal = register_module(
      "temporal", TemporalDiscriminator(config, 3, resolution, config.spatial_ds_factor));
  if (level > 1 && matching_enabled)
    matching = register_module("matching", TemporalDiscriminator(config, 6, resolution / k_s, 1));
}

torch::Tensor LevelDiscriminatorsImpl::forward(const torch::Tensor& output,
                                               const std::optional<torch::Tensor>& input,
                                               const std::optional<torch::Tensor>& labels) {
  std::vector<torch::Tensor> parts = {spatial(output, labels), temporal(output, labels)};
  if (matching) {
    if (!input) throw ArgumentError("matching discriminator needs the conditioning input");
    parts.push_back(matching(matching_pair(output, *input, k_t_, k_s_), labels));
  }
  return assemble_scores(level_, parts, static_cast<bool>(matching));
}

}  // namespace cvg
