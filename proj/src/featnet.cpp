#include "cvg/featnet.hpp"

#include <random>

#include "cvg/checkpoint.hpp"
#include "cvg/errors.hpp"

namespace cvg {

void FeatureNetConfig::validate() const {
  if (ch < 1 || feature_dim < 1 || num_classes < 2 || size < 4 || size % 4 != 0)
    throw ConfigError("feature network: invalid configuration");
}

FeatureNetImpl::FeatureNetImpl(FeatureNetConfig config) : config_(config) {
  config_.validate();
  using torch::nn::Conv3dOptions;
  conv1 = register_module("conv1", torch::nn::Conv3d(Conv3dOptions(3, config_.ch, 3).padding(1)));
  conv2 = register_module("conv2", torch::nn::Conv3d(Conv3dOptions(config_.ch, 2 * config_.ch, 3).padding(1)));
  conv3 = register_module("conv3",
                          torch::nn::Conv3d(Conv3dOptions(2 * config_.ch, config_.feature_dim, 3).padding(1)));
  fc = register_module("fc", torch::nn::Linear(config_.feature_dim, config_.num_classes));
}

torch::Tensor FeatureNetImpl::features(const torch::Tensor& video) {
  if (video.dim() != 5 || video.size(2) != 3) throw DimensionError("feature network expects (B, T, 3, H, W)");
  auto x = video.size(3) == config_.size && video.size(4) == config_.size
               ? video
               : nearest_resize(video, config_.size, config_.size);
  x = x.permute({0, 2, 1, 3, 4});  // (B, C, T, H, W)
  x = torch::avg_pool3d(x, {1, 2, 2});
  x = torch::avg_pool3d(torch::relu(conv1(x)), {1, 2, 2});
  x = torch::avg_pool3d(torch::relu(conv2(x)), {1, 2, 2});
  x = torch::relu(conv3(x));
  return x.mean({2, 3, 4});
}

torch::Tensor FeatureNetImpl::logits_from_features(const torch::Tensor& f) { return fc(f); }

torch::Tensor FeatureNetImpl::forward(const torch::Tensor& video) { return fc(features(video)); }

namespace {

torch::Tensor augment(const torch::Tensor& clips, std::mt19937_64& rng, int64_t frames) {
  std::uniform_int_distribution<int> coin(0, 3);
  std::vector<torch::Tensor> out;
  for (int64_t i = 0; i < clips.size(0); ++i) {
    auto v = clips[i];
    const int mode = coin(rng);
    const int64_t stride = (mode & 1) && v.size(0) >= 2 * frames ? 2 : 1;
    const int64_t span = std::min<int64_t>(v.size(0), stride * frames);
    std::uniform_int_distribution<int64_t> start(0, v.size(0) - span);
    using torch::indexing::Slice;
    const int64_t s = start(rng);
    v = v.index({Slice(s, s + span, stride)});
    if (mode & 2) {
      const int64_t h = v.size(2), w = v.size(3);
      v = nearest_resize(bilinear_downsample(v, 4), h, w);
    }
    out.push_back(v);
  }
  return torch::stack(out);
}

}  // namespace

FeatureNet train_featnet(const VideoBatch& data, const FeatureNetConfig& config, const FeatureNetTraining& options) {
  if (!data.labels) throw ArgumentError("feature network training needs labelled data");
  if (data.batch() < 2) throw ArgumentError("feature network training needs at least two clips");
  torch::manual_seed(options.seed);
  std::mt19937_64 rng(options.seed);
  FeatureNet net(config);
  net->train();
  torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(options.lr));
  std::uniform_int_distribution<int64_t> pick(0, data.batch() - 1);
  for (int64_t it = 1; it <= options.iters; ++it) {
    std::vector<int64_t> idx(static_cast<size_t>(options.batch_size));
    for (auto& i : idx) i = pick(rng);
    auto sel = torch::tensor(idx, torch::kInt64);
    auto clips = augment(data.data.index_select(0, sel), rng, options.clip_frames);
    auto loss = torch::nn::functional::cross_entropy(net(clips), data.labels->index_select(0, sel));
    opt.zero_grad();
    loss.backward();
    opt.step();
    if (options.on_log) options.on_log(it, loss.item<double>());
  }
  net->eval();
  return net;
}

torch::Tensor clip_logits(FeatureNet& net, const torch::Tensor& videos, int64_t batch) {
  torch::NoGradGuard no_grad;
  net->eval();
  std::vector<torch::Tensor> parts;
  for (int64_t s = 0; s < videos.size(0); s += batch)
    parts.push_back(net(videos.narrow(0, s, std::min(batch, videos.size(0) - s))));
  return torch::cat(parts, 0).to(torch::kFloat64);
}

torch::Tensor frame_features(FeatureNet& net, const torch::Tensor& videos, int64_t batch) {
  torch::NoGradGuard no_grad;
  net->eval();
  auto frames = videos.reshape({-1, 1, videos.size(2), videos.size(3), videos.size(4)});
  std::vector<torch::Tensor> parts;
  for (int64_t s = 0; s < frames.size(0); s += batch)
    parts.push_back(net->features(frames.narrow(0, s, std::min(batch, frames.size(0) - s))));
  return torch::cat(parts, 0).to(torch::kFloat64);
}

double featnet_accuracy(FeatureNet& net, const VideoBatch& data) {
  if (!data.labels) throw ArgumentError("accuracy needs labels");
  auto pred = clip_logits(net, data.data).argmax(1);
  return pred.eq(*data.labels).to(torch::kFloat64).mean().item<double>();
}

void save_featnet(const std::filesystem::path& path, FeatureNet& net) {
  LevelCheckpoint c;
  c.level = 0;
  const auto& cfg = net->config();
  c.config = {{"kind", "featnet"},
              {"ch", cfg.ch},
              {"feature_dim", cfg.feature_dim},
              {"num_classes", cfg.num_classes},
              {"size", cfg.size}};
  collect_state(*net, "", c.arrays);
  c.save(path);
}

FeatureNet load_featnet(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    throw MissingPrerequisiteError("feature network checkpoint " + path.string() + " not found");
  auto c = LevelCheckpoint::load(path);
  if (c.config.value("kind", "") != "featnet") throw CheckpointError(path.string() + " is not a feature network");
  FeatureNetConfig cfg;
  cfg.ch = c.config.at("ch").get<int64_t>();
  cfg.feature_dim = c.config.at("feature_dim").get<int64_t>();
  cfg.num_classes = c.config.at("num_classes").get<int64_t>();
  cfg.size = c.config.at("size").get<int64_t>();
  FeatureNet net(cfg);
  restore_state(*net, c, "");
  net->eval();
  return net;
}

}  // namespace cvg
